#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coffar/model.hpp"
#include "coffar/pair_data.hpp"
#include "coffar/rng.hpp"

namespace coffar {

enum class LossKind { CrossEntropy, CrossEntropyPlusCenter };

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::optional<std::size_t> epochs;       // symmetric (fixed dataset) mode
  std::optional<std::size_t> total_steps;  // exhaustive (stream) mode
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::CrossEntropy;
  double center_weight = 0.0;
  double center_alpha = 0.5;
  std::size_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
};

struct HistoryRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0.0;
  double entropy = 0.0;  // mean H(g') over the batch
  double batch_accuracy = 0.0;

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

using TrainHistory = std::vector<HistoryRecord>;

/// Source position, serializable into the checkpoint sidecar.
struct SourceState {
  std::string kind;  // "symmetric" or "exhaustive"
  Rng::State rng{};
  std::uint64_t cursor = 0;  // symmetric: index into the epoch order; exhaustive: draw count
  std::uint64_t epoch = 0;
};

class PairSource {
 public:
  virtual ~PairSource() = default;
  /// Fills `out` with the next batch (at most max_size samples).
  virtual void next_batch(std::size_t max_size, std::vector<PairSample>& out) = 0;
  virtual SourceState state() const = 0;
  virtual void restore(const SourceState& s) = 0;
  /// Steps implied by the config for this source; throws Config when the
  /// config names the wrong length unit for the mode.
  virtual std::size_t planned_steps(const TrainConfig& config) const = 0;
  virtual std::uint64_t completed_epochs() const = 0;
};

/// Fixed pair list; each epoch is one full pass in a freshly shuffled order.
/// Batches do not straddle epochs.
class SymmetricSource final : public PairSource {
 public:
  SymmetricSource(std::vector<PairSample> pairs, std::uint64_t seed);

  void next_batch(std::size_t max_size, std::vector<PairSample>& out) override;
  SourceState state() const override;
  void restore(const SourceState& s) override;
  std::size_t planned_steps(const TrainConfig& config) const override;
  std::uint64_t completed_epochs() const override { return epoch_; }

 private:
  void start_epoch();

  std::vector<PairSample> pairs_;
  std::vector<std::size_t> order_;
  Rng rng_;
  Rng::State epoch_start_{};
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  bool started_ = false;
};

/// Consecutive draws from an ExhaustiveStream, so every even-sized batch is
/// label balanced.
class ExhaustiveSource final : public PairSource {
 public:
  ExhaustiveSource(const Gallery& gallery, std::uint64_t seed);

  void next_batch(std::size_t max_size, std::vector<PairSample>& out) override;
  SourceState state() const override;
  void restore(const SourceState& s) override;
  std::size_t planned_steps(const TrainConfig& config) const override;
  std::uint64_t completed_epochs() const override { return 0; }

 private:
  ExhaustiveStream stream_;
};

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  std::size_t step = 0;
  SourceState source;
  std::vector<std::vector<double>> centers;  // empty unless center loss is on
};

struct TrainOptions {
  /// When set: history.jsonl plus checkpoints (with .rng.json sidecars) are
  /// written here.
  std::optional<std::filesystem::path> out_dir;
  std::optional<TrainState> resume;
};

struct TrainResult {
  TrainHistory history;
  TrainState state;
};

void validate(const TrainConfig& config);

/// Plain mini-batch gradient descent, p <- p - lr * grad. Throws Divergence
/// if the batch loss becomes non-finite.
TrainResult train(Model& model, PairSource& source, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Mean H(g') of the model's predictions; throws InvalidArgument when empty.
double evaluate_epoch_entropy(const Model& model, std::span<const PairSample> pairs);

std::string history_line(const HistoryRecord& r);
void write_history(const TrainHistory& history, const std::filesystem::path& path);

void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

/// Sidecar path for a checkpoint: "x.coffar.json" -> "x.rng.json".
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace coffar
