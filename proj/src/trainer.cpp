#include "coffar/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "coffar/error.hpp"
#include "coffar/json_io.hpp"

namespace fs = std::filesystem;

namespace coffar {

// ---------------------------------------------------------------------------
// Sources

SymmetricSource::SymmetricSource(std::vector<PairSample> pairs, std::uint64_t seed)
    : pairs_(std::move(pairs)), rng_(seed) {
  if (pairs_.empty()) throw Error(ErrorKind::InvalidArgument, "training pair list is empty");
}

void SymmetricSource::start_epoch() {
  epoch_start_ = rng_.state();
  order_.resize(pairs_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(std::span(order_));
  cursor_ = 0;
  started_ = true;
}

void SymmetricSource::next_batch(std::size_t max_size, std::vector<PairSample>& out) {
  if (!started_) start_epoch();
  out.clear();
  const std::size_t end = std::min(pairs_.size(), cursor_ + max_size);
  for (; cursor_ < end; ++cursor_) out.push_back(pairs_[order_[cursor_]]);
  if (cursor_ == pairs_.size()) {
    ++epoch_;
    started_ = false;
  }
}

SourceState SymmetricSource::state() const {
  if (!started_) return {"symmetric", rng_.state(), 0, epoch_};
  return {"symmetric", epoch_start_, cursor_, epoch_};
}

void SymmetricSource::restore(const SourceState& s) {
  if (s.kind != "symmetric" || s.cursor >= pairs_.size()) {
    throw Error(ErrorKind::MalformedCheckpoint, "train state does not match a symmetric source");
  }
  rng_ = Rng::from_state(s.rng);
  start_epoch();
  cursor_ = s.cursor;
  epoch_ = s.epoch;
}

std::size_t SymmetricSource::planned_steps(const TrainConfig& config) const {
  if (!config.epochs || config.total_steps) {
    throw Error(ErrorKind::Config, "symmetric mode needs 'epochs' and no 'total_steps'");
  }
  const std::size_t per_epoch = (pairs_.size() + config.batch_size - 1) / config.batch_size;
  return *config.epochs * per_epoch;
}

ExhaustiveSource::ExhaustiveSource(const Gallery& gallery, std::uint64_t seed)
    : stream_(gallery, seed) {}

void ExhaustiveSource::next_batch(std::size_t max_size, std::vector<PairSample>& out) {
  out.clear();
  for (std::size_t i = 0; i < max_size; ++i) out.push_back(stream_.next());
}

SourceState ExhaustiveSource::state() const {
  const auto s = stream_.state();
  return {"exhaustive", s.rng, s.count, 0};
}

void ExhaustiveSource::restore(const SourceState& s) {
  if (s.kind != "exhaustive") {
    throw Error(ErrorKind::MalformedCheckpoint, "train state does not match an exhaustive source");
  }
  stream_.restore({s.rng, s.cursor});
}

std::size_t ExhaustiveSource::planned_steps(const TrainConfig& config) const {
  if (!config.total_steps || config.epochs) {
    throw Error(ErrorKind::Config, "exhaustive mode needs 'total_steps' and no 'epochs'");
  }
  return *config.total_steps;
}

// ---------------------------------------------------------------------------
// Persistence

std::string history_line(const HistoryRecord& r) {
  const Json j{{"step", r.step},
               {"loss", r.loss},
               {"entropy", r.entropy},
               {"batch_accuracy", r.batch_accuracy}};
  return j.dump();
}

void write_history(const TrainHistory& history, const fs::path& path) {
  std::string text;
  for (const auto& r : history) text += history_line(r) + "\n";
  write_text_file(path, text);
}

fs::path sidecar_path(const fs::path& checkpoint) {
  std::string name = checkpoint.filename().string();
  const std::string suffix = ".coffar.json";
  if (name.size() > suffix.size() && name.ends_with(suffix)) {
    name = name.substr(0, name.size() - suffix.size());
  }
  return checkpoint.parent_path() / (name + ".rng.json");
}

void save_train_state(const TrainState& state, const fs::path& path) {
  Json centers = Json::array();
  for (const auto& c : state.centers) centers.push_back(c);
  const Json doc{{"format_version", 1},
                 {"step", state.step},
                 {"source",
                  {{"kind", state.source.kind},
                   {"rng", state.source.rng},
                   {"cursor", state.source.cursor},
                   {"epoch", state.source.epoch}}},
                 {"centers", centers}};
  write_text_file(path, doc.dump(1) + "\n");
}

TrainState load_train_state(const fs::path& path) {
  const Json doc = read_json_file(path, ErrorKind::MalformedCheckpoint);
  try {
    TrainState s;
    s.step = doc.at("step").get<std::size_t>();
    const Json& src = doc.at("source");
    s.source.kind = src.at("kind").get<std::string>();
    s.source.rng = src.at("rng").get<Rng::State>();
    s.source.cursor = src.at("cursor").get<std::uint64_t>();
    s.source.epoch = src.at("epoch").get<std::uint64_t>();
    s.centers = doc.at("centers").get<std::vector<std::vector<double>>>();
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::MalformedCheckpoint, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw Error(ErrorKind::Config, "learning_rate must be a finite non-negative number");
  }
  if (c.batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be >= 1");
  if (c.epochs.has_value() == c.total_steps.has_value()) {
    throw Error(ErrorKind::Config, "set exactly one of 'epochs' or 'total_steps'");
  }
  if (c.loss_kind == LossKind::CrossEntropyPlusCenter &&
      !(c.center_alpha >= 0.0 && c.center_alpha <= 1.0)) {
    throw Error(ErrorKind::Config, "center_alpha must be in [0,1]");
  }
}

namespace {

void write_checkpoint_pair(const Model& model, const TrainState& state, std::uint64_t epoch,
                           double last_loss, const fs::path& path) {
  save_checkpoint(model, path, epoch, last_loss);
  save_train_state(state, sidecar_path(path));
}

}  // namespace

TrainResult train(Model& model, PairSource& source, const TrainConfig& config,
                  const TrainOptions& options) {
  validate(config);
  const std::size_t steps = source.planned_steps(config);
  const bool use_center = config.loss_kind == LossKind::CrossEntropyPlusCenter;

  TrainResult result;
  TrainState& st = result.state;
  if (options.resume) {
    st = *options.resume;
    source.restore(st.source);
  }
  if (use_center && st.centers.empty()) {
    st.centers.assign(2, std::vector<double>(model.feature_width(), 0.0));
  }

  std::ofstream history_out;
  if (options.out_dir) {
    std::error_code ec;
    fs::create_directories(*options.out_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + options.out_dir->string());
    const auto mode = options.resume ? std::ios::app : std::ios::trunc;
    history_out.open(*options.out_dir / "history.jsonl", std::ios::binary | mode);
    if (!history_out) throw Error(ErrorKind::Io, "cannot write history in " + options.out_dir->string());
  }

  std::vector<PairSample> batch;
  std::vector<LabeledPair> labeled;
  std::vector<PairLabel> labels;
  double last_loss = 0.0;
  while (st.step < steps) {
    source.next_batch(config.batch_size, batch);
    labeled.clear();
    labels.clear();
    for (const auto& p : batch) {
      labeled.push_back({&p.image, p.label});
      labels.push_back(p.label);
    }
    const CenterTerm center{use_center ? &st.centers : nullptr, config.center_weight};
    BatchGradients bg;
    try {
      bg = loss_gradients(model, labeled, center);
    } catch (const Error& e) {
      // Inputs are validated, so a non-finite value here comes from the weights.
      if (e.kind() != ErrorKind::InvalidValue) throw;
      throw Error(ErrorKind::Divergence, "step " + std::to_string(st.step + 1) + ": " + e.what() +
                                             "; try a smaller learning rate");
    }
    if (!std::isfinite(bg.mean_loss)) {
      throw Error(ErrorKind::Divergence, "non-finite loss at step " + std::to_string(st.step + 1) +
                                             "; try a smaller learning rate");
    }

    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto w = params[p].value.data();
      auto g = bg.grads[p].data();
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= config.learning_rate * g[k];
      if (!params[p].value.all_finite()) {
        throw Error(ErrorKind::Divergence, "parameter " + params[p].name +
                                               " became non-finite at step " +
                                               std::to_string(st.step + 1));
      }
    }
    if (use_center) update_centers(st.centers, bg.features, labels, config.center_alpha);

    HistoryRecord rec;
    rec.step = ++st.step;
    rec.loss = bg.mean_loss;
    std::size_t correct = 0;
    double h = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      h += entropy(bg.predictions[i]);
      const bool accept = bg.predictions[i].relevant() >= 0.5;
      correct += accept == (batch[i].label == PairLabel::Same);
    }
    rec.entropy = h / static_cast<double>(batch.size());
    rec.batch_accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
    result.history.push_back(rec);
    last_loss = rec.loss;
    if (history_out.is_open()) history_out << history_line(rec) << '\n';
    spdlog::debug("step {} loss {:.6f} entropy {:.6f} acc {:.3f}", rec.step, rec.loss,
                  rec.entropy, rec.batch_accuracy);

    st.source = source.state();
    if (options.out_dir && config.checkpoint_every != 0 && st.step % config.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt_step_%06zu.coffar.json", st.step);
      write_checkpoint_pair(model, st, source.completed_epochs(), last_loss,
                            *options.out_dir / name);
    }
  }
  st.source = source.state();
  if (options.out_dir) {
    history_out.flush();
    write_checkpoint_pair(model, st, source.completed_epochs(), last_loss,
                          *options.out_dir / "final.coffar.json");
  }
  return result;
}

double evaluate_epoch_entropy(const Model& model, std::span<const PairSample> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::InvalidArgument, "evaluate_epoch_entropy: no pairs");
  std::vector<double> h(pairs.size());
  const long n = static_cast<long>(pairs.size());
  std::vector<std::exception_ptr> failures(pairs.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    try {
      h[s] = entropy(model.forward(pairs[s].image));
    } catch (...) {
      failures[s] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  double total = 0.0;
  for (double v : h) total += v;
  return total / static_cast<double>(pairs.size());
}

}  // namespace coffar
