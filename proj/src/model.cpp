#include "coffar/model.hpp"

#include <cmath>
#include <exception>
#include <string>

#include "coffar/error.hpp"
#include "coffar/kernels.hpp"
#include "coffar/rng.hpp"

namespace coffar {

std::string_view to_string(PairLabel label) {
  return label == PairLabel::Same ? "same" : "different";
}

PairLabel parse_label(std::string_view text) {
  if (text == "same") return PairLabel::Same;
  if (text == "different") return PairLabel::Different;
  throw Error(ErrorKind::InvalidValue, "unknown pair label '" + std::string(text) + "'");
}

ModelConfig ModelConfig::default_config(std::uint64_t seed) {
  ModelConfig c;
  c.conv = {ConvSpec{8, 3, 3, true}, ConvSpec{16, 3, 3, true}};
  c.fc_dims = {64};
  c.seed = seed;
  return c;
}

void ModelConfig::validate() const {
  if (conv.empty()) throw Error(ErrorKind::Config, "model needs at least one conv layer");
  std::size_t h = kPairRows, w = kPairCols;
  for (std::size_t l = 0; l < conv.size(); ++l) {
    const auto& c = conv[l];
    const std::string where = "conv[" + std::to_string(l) + "]";
    if (c.out_channels == 0) throw Error(ErrorKind::Config, where + ": out_channels must be > 0");
    if (c.kernel_h % 2 == 0 || c.kernel_w % 2 == 0) {
      throw Error(ErrorKind::Config, where + ": kernel dims must be odd");
    }
    if (h < c.kernel_h || w < c.kernel_w) {
      throw Error(ErrorKind::Config, where + ": feature map " + std::to_string(h) + "x" +
                                         std::to_string(w) + " smaller than kernel");
    }
    if (c.pool_after) {
      if (h < 2 || w < 2) throw Error(ErrorKind::Config, where + ": map too small to pool");
      h /= 2;
      w /= 2;
    }
  }
  for (std::size_t d : fc_dims) {
    if (d == 0) throw Error(ErrorKind::Config, "fc widths must be > 0");
  }
}

Model init_model(const ModelConfig& config) { return Model(config); }

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> Model::expected_shapes() const {
  std::vector<std::vector<std::size_t>> shapes;
  std::size_t in_ch = 1, h = kPairRows, w = kPairCols;
  for (const auto& c : config_.conv) {
    shapes.push_back({c.out_channels, in_ch, c.kernel_h, c.kernel_w});
    shapes.push_back({c.out_channels});
    in_ch = c.out_channels;
    if (c.pool_after) {
      h /= 2;
      w /= 2;
    }
  }
  std::size_t in = in_ch * h * w;
  for (std::size_t d : config_.fc_dims) {
    shapes.push_back({d, in});
    shapes.push_back({d});
    in = d;
  }
  shapes.push_back({2, in});
  shapes.push_back({2});
  return shapes;
}

std::vector<std::string> Model::expected_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < config_.conv.size(); ++l) {
    names.push_back("conv" + std::to_string(l) + ".kernel");
    names.push_back("conv" + std::to_string(l) + ".bias");
  }
  for (std::size_t l = 0; l <= config_.fc_dims.size(); ++l) {
    names.push_back("fc" + std::to_string(l) + ".weight");
    names.push_back("fc" + std::to_string(l) + ".bias");
  }
  return names;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto shapes = expected_shapes();
  const auto names = expected_names();
  for (std::size_t p = 0; p < shapes.size(); ++p) {
    Tensor t(shapes[p]);
    if (shapes[p].size() > 1) {
      double fan_in, fan_out;
      if (shapes[p].size() == 4) {
        const double field = static_cast<double>(shapes[p][2] * shapes[p][3]);
        fan_in = static_cast<double>(shapes[p][1]) * field;
        fan_out = static_cast<double>(shapes[p][0]) * field;
      } else {
        fan_in = static_cast<double>(shapes[p][1]);
        fan_out = static_cast<double>(shapes[p][0]);
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
    }
    params_.push_back({names[p], std::move(t)});
  }
}

Model::Model(ModelConfig config, std::vector<NamedTensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_parameters();
}

void Model::check_parameters() const {
  const auto shapes = expected_shapes();
  const auto names = expected_names();
  if (params_.size() != shapes.size()) {
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(shapes.size()) +
                                              " parameter tensors, got " +
                                              std::to_string(params_.size()));
  }
  for (std::size_t p = 0; p < shapes.size(); ++p) {
    if (params_[p].name != names[p]) {
      throw Error(ErrorKind::ShapeMismatch,
                  "parameter " + std::to_string(p) + " is '" + params_[p].name +
                      "', expected '" + names[p] + "'");
    }
    if (params_[p].value.shape() != shapes[p]) {
      throw Error(ErrorKind::ShapeMismatch,
                  names[p] + ": shape " + shape_string(params_[p].value.shape()) +
                      ", config requires " + shape_string(shapes[p]));
    }
  }
}

std::size_t Model::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t Model::feature_width() const {
  return params_[params_.size() - 2].value.dim(1);
}

bool operator==(const Model& a, const Model& b) {
  if (!(a.config_ == b.config_) || a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) {
      return false;
    }
  }
  return true;
}

void check_pair_image(const Tensor& pair) {
  if (pair.shape() != std::vector<std::size_t>{kPairRows, kPairCols}) {
    throw Error(ErrorKind::InvalidShape,
                "pair image must be 20x40, got " + shape_string(pair.shape()));
  }
  for (double v : pair.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::InvalidValue, "pair image values must lie in [0,1]");
    }
  }
}

namespace {

Tensor as_vector_tensor(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

void relu_inplace(std::span<double> v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace

ForwardTrace Model::trace(const Tensor& pair) const {
  check_pair_image(pair);
  ForwardTrace t;
  Tensor x({1, kPairRows, kPairCols}, std::vector<double>(pair.values()));
  const std::size_t n_conv = config_.conv.size();
  for (std::size_t l = 0; l < n_conv; ++l) {
    Tensor y = kernels::conv_forward(x, params_[2 * l].value, params_[2 * l + 1].value.data());
    relu_inplace(y.data());
    t.conv_inputs.push_back(std::move(x));
    if (config_.conv[l].pool_after) {
      auto pooled = kernels::maxpool2x2_forward(y);
      x = std::move(pooled.output);
      t.pool_argmax.push_back(std::move(pooled.argmax));
    } else {
      x = y;
      t.pool_argmax.emplace_back();
    }
    t.conv_activations.push_back(std::move(y));
  }

  std::vector<double> v(x.values());
  const std::size_t base = 2 * n_conv;
  for (std::size_t l = 0; l < config_.fc_dims.size(); ++l) {
    auto h = kernels::dense_forward(params_[base + 2 * l].value,
                                    params_[base + 2 * l + 1].value.data(), v);
    relu_inplace(h);
    t.fc_inputs.push_back(std::move(v));
    t.fc_activations.push_back(h);
    v = std::move(h);
  }
  const std::size_t last = params_.size() - 2;
  t.logits = kernels::dense_forward(params_[last].value, params_[last + 1].value.data(), v);
  t.fc_inputs.push_back(std::move(v));
  t.probs = softmax2(t.logits[0], t.logits[1]);
  return t;
}

std::vector<Tensor> Model::backward(const ForwardTrace& t, std::span<const double> d_logits,
                                    std::span<const double> d_features) const {
  std::vector<Tensor> grads(params_.size());
  const std::size_t n_conv = config_.conv.size();
  const std::size_t n_fc = config_.fc_dims.size();
  const std::size_t base = 2 * n_conv;

  const std::size_t last = params_.size() - 2;
  auto gl = kernels::dense_backward(params_[last].value, t.fc_inputs.back(), d_logits, true);
  grads[last] = std::move(gl.d_weight);
  grads[last + 1] = as_vector_tensor(std::move(gl.d_bias));
  std::vector<double> dv = std::move(gl.d_input);
  if (!d_features.empty()) {
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += d_features[i];
  }

  for (std::size_t l = n_fc; l-- > 0;) {
    const auto& act = t.fc_activations[l];
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (act[i] <= 0.0) dv[i] = 0.0;
    }
    auto g = kernels::dense_backward(params_[base + 2 * l].value, t.fc_inputs[l], dv, true);
    grads[base + 2 * l] = std::move(g.d_weight);
    grads[base + 2 * l + 1] = as_vector_tensor(std::move(g.d_bias));
    dv = std::move(g.d_input);
  }

  const Tensor& last_act = t.conv_activations.back();
  std::vector<std::size_t> flat_shape = last_act.shape();
  if (config_.conv.back().pool_after) {
    flat_shape[1] /= 2;
    flat_shape[2] /= 2;
  }
  Tensor dx(flat_shape, std::move(dv));

  for (std::size_t l = n_conv; l-- > 0;) {
    const Tensor& act = t.conv_activations[l];
    Tensor d_act = config_.conv[l].pool_after
                       ? kernels::maxpool2x2_backward(t.pool_argmax[l], act.shape(), dx)
                       : std::move(dx);
    for (std::size_t i = 0; i < d_act.size(); ++i) {
      if (act[i] <= 0.0) d_act[i] = 0.0;
    }
    auto g = kernels::conv_backward(t.conv_inputs[l], params_[2 * l].value, d_act, l > 0);
    grads[2 * l] = std::move(g.d_kernels);
    grads[2 * l + 1] = as_vector_tensor(std::move(g.d_bias));
    dx = std::move(g.d_input);
  }
  return grads;
}

// ---------------------------------------------------------------------------

double loss(const Model& model, const Tensor& pair, const TargetDistribution& target) {
  return cross_entropy(target.probs(), model.forward(pair));
}

BatchGradients loss_gradients(const Model& model, std::span<const LabeledPair> batch,
                              const CenterTerm& center) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "loss_gradients: empty batch");
  const long n = static_cast<long>(batch.size());
  const bool use_center = center.centers != nullptr && center.weight != 0.0;

  std::vector<std::vector<Tensor>> per_sample(batch.size());
  std::vector<double> losses(batch.size());
  BatchGradients out;
  out.predictions.resize(batch.size());
  out.features.resize(batch.size());
  std::vector<std::exception_ptr> failures(batch.size());

#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    try {
      const auto t = model.trace(*batch[s].image);
      const TargetDistribution target{batch[s].label};
      const ProbVector goal = target.probs();
      const std::array<double, 2> d_logits{t.probs[0] - goal[0], t.probs[1] - goal[1]};
      double li = cross_entropy(goal, t.probs);
      std::vector<double> d_feat;
      if (use_center) {
        const auto& c = (*center.centers)[static_cast<std::size_t>(batch[s].label)];
        const auto& f = t.features();
        d_feat.resize(f.size());
        double sq = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
          const double diff = f[k] - c[k];
          sq += diff * diff;
          d_feat[k] = center.weight * diff;
        }
        li += 0.5 * center.weight * sq;
      }
      per_sample[s] = model.backward(t, d_logits, d_feat);
      losses[s] = li;
      out.predictions[s] = t.probs;
      out.features[s] = t.features();
    } catch (...) {
      failures[s] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  out.grads = std::move(per_sample[0]);
  double total = losses[0];
  for (std::size_t s = 1; s < batch.size(); ++s) {
    total += losses[s];
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].data();
      auto src = per_sample[s][p].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  for (auto& g : out.grads) {
    for (double& v : g.data()) v *= inv_n;
  }
  out.mean_loss = total * inv_n;
  return out;
}

double center_loss_term(std::span<const std::vector<double>> features,
                        std::span<const PairLabel> labels,
                        const std::vector<std::vector<double>>& centers, double weight) {
  if (features.size() != labels.size()) {
    throw Error(ErrorKind::InvalidArgument, "center_loss_term: features/labels length mismatch");
  }
  if (features.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& c = centers.at(static_cast<std::size_t>(labels[i]));
    if (c.size() != features[i].size()) {
      throw Error(ErrorKind::ShapeMismatch, "center width does not match feature width");
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const double d = features[i][k] - c[k];
      sq += d * d;
    }
    total += 0.5 * sq;
  }
  return weight * total / static_cast<double>(features.size());
}

void update_centers(std::vector<std::vector<double>>& centers,
                    std::span<const std::vector<double>> features,
                    std::span<const PairLabel> labels, double alpha) {
  for (std::size_t cls = 0; cls < centers.size(); ++cls) {
    auto& c = centers[cls];
    std::vector<double> mean(c.size(), 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != cls) continue;
      for (std::size_t k = 0; k < c.size(); ++k) mean[k] += features[i][k];
      ++count;
    }
    if (count == 0) continue;
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] -= alpha * (c[k] - mean[k] / static_cast<double>(count));
    }
  }
}

}  // namespace coffar
