#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "coffar/model.hpp"
#include "coffar/pair_data.hpp"

namespace coffar {

struct ScoredPair {
  double score = 0.0;  // y1', the same-identity probability
  PairLabel label = PairLabel::Different;
};

class ScoreSet {
 public:
  ScoreSet() = default;
  /// Throws InvalidValue when a score lies outside [0,1].
  explicit ScoreSet(std::vector<ScoredPair> entries);

  std::span<const ScoredPair> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t p_same() const noexcept { return p_same_; }
  std::size_t p_different() const noexcept { return entries_.size() - p_same_; }

  /// Same entries become Different and vice versa.
  ScoreSet label_swapped() const;

 private:
  std::vector<ScoredPair> entries_;
  std::size_t p_same_ = 0;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct RocPoint {
  double threshold = 0.0;
  double tar = 0.0;
  double far = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // threshold descending, so far and tar ascending
  double auc = 0.0;
};

ScoreSet score_pairs(const Model& model, std::span<const PairSample> pairs);

/// A pair is accepted as "same" when score >= threshold.
ConfusionCounts confusion_at(const ScoreSet& scores, double threshold);
/// tp / (tp + fn); throws UndefinedMetric with no same pairs.
double tar(const ConfusionCounts& c);
/// fp / (fp + tn); throws UndefinedMetric with no different pairs.
double far(const ConfusionCounts& c);
double accuracy(const ScoreSet& scores, double threshold = 0.5);

/// Sweeps every distinct score plus one sentinel below the minimum and one
/// above the maximum; AUC by the trapezoid rule over (far, tar).
RocCurve roc(const ScoreSet& scores);

/// Highest TAR among operating points whose FAR is strictly below the target
/// (step function, no interpolation). The reject-all sentinel (FAR 0)
/// always qualifies.
double tar_at_far(const RocCurve& curve, double far_target);

inline constexpr std::array<double, 4> kReportFarTargets{0.3, 0.1, 0.01, 0.001};

struct MetricsReport {
  double accuracy_at_half = 0.0;
  double auc = 0.0;
  std::vector<std::pair<double, double>> tar_at_far;  // (far target, tar)
  RocCurve roc;
  std::size_t p_same = 0, p_different = 0;
};

MetricsReport compute_metrics(const ScoreSet& scores);
void write_metrics_report(const MetricsReport& report, const std::filesystem::path& path);
void write_roc_table(const RocCurve& curve, const std::filesystem::path& path);

/// Channel mean of the last conv layer's rectified activations, bilinearly
/// upsampled to 20x40 and min-max normalized (constant maps become zero).
Tensor heatmap(const Model& model, const Tensor& pair);

/// Tab-separated "label f0 f1 ..." rows of penultimate features.
void dump_features(const Model& model, std::span<const PairSample> pairs,
                   const std::filesystem::path& path);

}  // namespace coffar
