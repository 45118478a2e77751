#include "coffar/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include "coffar/error.hpp"
#include "coffar/image_io.hpp"
#include "coffar/json_io.hpp"

namespace coffar {

ScoreSet::ScoreSet(std::vector<ScoredPair> entries) : entries_(std::move(entries)) {
  for (const auto& e : entries_) {
    if (!(e.score >= 0.0 && e.score <= 1.0)) {
      throw Error(ErrorKind::InvalidValue, "score outside [0,1]: " + std::to_string(e.score));
    }
    p_same_ += e.label == PairLabel::Same;
  }
}

ScoreSet ScoreSet::label_swapped() const {
  std::vector<ScoredPair> swapped(entries_.begin(), entries_.end());
  for (auto& e : swapped) {
    e.label = e.label == PairLabel::Same ? PairLabel::Different : PairLabel::Same;
  }
  return ScoreSet(std::move(swapped));
}

ScoreSet score_pairs(const Model& model, std::span<const PairSample> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::InvalidArgument, "score_pairs: no pairs");
  std::vector<ScoredPair> out(pairs.size());
  std::vector<std::exception_ptr> failures(pairs.size());
  const long n = static_cast<long>(pairs.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    try {
      out[s] = {model.forward(pairs[s].image).relevant(), pairs[s].label};
    } catch (...) {
      failures[s] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return ScoreSet(std::move(out));
}

ConfusionCounts confusion_at(const ScoreSet& scores, double threshold) {
  ConfusionCounts c;
  for (const auto& e : scores.entries()) {
    const bool accept = e.score >= threshold;
    if (e.label == PairLabel::Same) {
      (accept ? c.tp : c.fn)++;
    } else {
      (accept ? c.fp : c.tn)++;
    }
  }
  return c;
}

double tar(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) throw Error(ErrorKind::UndefinedMetric, "TAR undefined: no same pairs");
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double far(const ConfusionCounts& c) {
  if (c.fp + c.tn == 0) {
    throw Error(ErrorKind::UndefinedMetric, "FAR undefined: no different pairs");
  }
  return static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
}

double accuracy(const ScoreSet& scores, double threshold) {
  if (scores.size() == 0) throw Error(ErrorKind::InvalidArgument, "accuracy of empty score set");
  const auto c = confusion_at(scores, threshold);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.tp + c.tn + c.fp + c.fn);
}

RocCurve roc(const ScoreSet& scores) {
  if (scores.p_same() == 0 || scores.p_different() == 0) {
    throw Error(ErrorKind::UndefinedMetric, "ROC needs both same and different pairs");
  }
  std::vector<ScoredPair> sorted(scores.entries().begin(), scores.entries().end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });

  const double n_same = static_cast<double>(scores.p_same());
  const double n_diff = static_cast<double>(scores.p_different());
  RocCurve curve;
  curve.points.push_back({sorted.front().score + 1.0, 0.0, 0.0});
  // Walking scores downward, each distinct value as threshold accepts every
  // entry scored at or above it.
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == t; ++i) {
      (sorted[i].label == PairLabel::Same ? tp : fp)++;
    }
    curve.points.push_back({t, tp / n_same, fp / n_diff});
  }
  curve.points.push_back({sorted.back().score - 1.0, 1.0, 1.0});

  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    curve.auc += (b.far - a.far) * (a.tar + b.tar) * 0.5;
  }
  return curve;
}

double tar_at_far(const RocCurve& curve, double far_target) {
  double best = 0.0;
  for (const auto& p : curve.points) {
    if (p.far < far_target) best = std::max(best, p.tar);
  }
  return best;
}

MetricsReport compute_metrics(const ScoreSet& scores) {
  MetricsReport r;
  r.accuracy_at_half = accuracy(scores, 0.5);
  r.roc = roc(scores);
  r.auc = r.roc.auc;
  for (double f : kReportFarTargets) r.tar_at_far.emplace_back(f, tar_at_far(r.roc, f));
  r.p_same = scores.p_same();
  r.p_different = scores.p_different();
  return r;
}

namespace {

std::string far_key(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

}  // namespace

void write_metrics_report(const MetricsReport& report, const std::filesystem::path& path) {
  Json tars = Json::object();
  for (const auto& [f, t] : report.tar_at_far) tars[far_key(f)] = t;
  Json points = Json::array();
  for (const auto& p : report.roc.points) {
    points.push_back({{"threshold", p.threshold}, {"tar", p.tar}, {"far", p.far}});
  }
  const Json doc{{"accuracy@0.5", report.accuracy_at_half},
                 {"auc", report.auc},
                 {"tar@far", tars},
                 {"p_same", report.p_same},
                 {"p_different", report.p_different},
                 {"roc", points}};
  write_text_file(path, doc.dump(1) + "\n");
}

void write_roc_table(const RocCurve& curve, const std::filesystem::path& path) {
  std::string text = "threshold\ttar\tfar\n";
  for (const auto& p : curve.points) {
    text += Json(p.threshold).dump() + "\t" + Json(p.tar).dump() + "\t" + Json(p.far).dump() + "\n";
  }
  write_text_file(path, text);
}

Tensor heatmap(const Model& model, const Tensor& pair) {
  const auto t = model.trace(pair);
  const Tensor& act = t.conv_activations.back();
  const std::size_t ch = act.dim(0), h = act.dim(1), w = act.dim(2);
  Tensor mean = Tensor::matrix(h, w);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t k = 0; k < w; ++k) mean.at(r, k) += act.at(c, r, k);
    }
  }
  for (double& v : mean.data()) v /= static_cast<double>(ch);
  Tensor up = resize_bilinear(mean, kPairRows, kPairCols);
  const auto [lo, hi] = std::minmax_element(up.data().begin(), up.data().end());
  const double vmin = *lo, range = *hi - *lo;
  for (double& v : up.data()) v = range > 0.0 ? (v - vmin) / range : 0.0;
  return up;
}

void dump_features(const Model& model, std::span<const PairSample> pairs,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "label";
  for (std::size_t k = 0; k < model.feature_width(); ++k) out << "\tf" << k;
  out << '\n';
  for (const auto& p : pairs) {
    const auto t = model.trace(p.image);
    out << to_string(p.label);
    for (double v : t.features()) out << '\t' << Json(v).dump();
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace coffar
