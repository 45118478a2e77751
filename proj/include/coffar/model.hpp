#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coffar/numeric.hpp"
#include "coffar/tensor.hpp"

namespace coffar {

inline constexpr std::size_t kFaceSide = 20;
inline constexpr std::size_t kPairRows = 20;
inline constexpr std::size_t kPairCols = 40;

/// Class index 1 is "same identity" (the relevant probability y1).
enum class PairLabel : int { Different = 0, Same = 1 };

std::string_view to_string(PairLabel label);
PairLabel parse_label(std::string_view text);

/// Ideal correlation distribution: Same -> [0,1], Different -> [1,0].
struct TargetDistribution {
  PairLabel label = PairLabel::Different;

  ProbVector probs() const {
    return label == PairLabel::Same ? ProbVector(0.0, 1.0) : ProbVector(1.0, 0.0);
  }
};

struct ConvSpec {
  std::size_t out_channels = 8;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  bool pool_after = true;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class Activation { Relu };

struct ModelConfig {
  std::vector<ConvSpec> conv;
  std::vector<std::size_t> fc_dims;  // hidden widths; a 2-logit layer is appended
  Activation activation = Activation::Relu;
  std::uint64_t seed = 0;

  /// conv(1->8,3x3) relu pool, conv(8->16,3x3) relu pool, fc 64 relu, fc 2.
  static ModelConfig default_config(std::uint64_t seed = 0);

  /// Throws Config on even kernels, missing conv layers, zero widths, or a
  /// spatial size that pooling would shrink below the kernel.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Per-sample activations kept for the backward pass.
struct ForwardTrace {
  std::vector<Tensor> conv_inputs;        // input to each conv layer
  std::vector<Tensor> conv_activations;   // post-rectifier output of each conv layer
  std::vector<std::vector<std::size_t>> pool_argmax;  // empty when no pooling
  std::vector<std::vector<double>> fc_inputs;         // input to each fc layer
  std::vector<std::vector<double>> fc_activations;    // post-rectifier hidden outputs
  std::vector<double> logits;
  ProbVector probs;

  /// Penultimate feature vector (input to the logit layer).
  const std::vector<double>& features() const { return fc_inputs.back(); }
};

class Model {
 public:
  /// Deterministic init: kernels and fc weights uniform in +-sqrt(6/(fan_in+fan_out)),
  /// biases zero.
  explicit Model(ModelConfig config);
  /// Adopts existing parameters; throws ShapeMismatch if they do not fit the config.
  Model(ModelConfig config, std::vector<NamedTensor> params);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept;

  std::size_t feature_width() const;

  ForwardTrace trace(const Tensor& pair) const;
  ProbVector forward(const Tensor& pair) const { return trace(pair).probs; }

  /// Gradients of scalar loss L w.r.t. every parameter given dL/dlogits and
  /// an optional extra dL/dfeatures contribution (may be empty).
  std::vector<Tensor> backward(const ForwardTrace& t, std::span<const double> d_logits,
                               std::span<const double> d_features) const;

  friend bool operator==(const Model&, const Model&);

 private:
  void check_parameters() const;
  std::vector<std::vector<std::size_t>> expected_shapes() const;
  std::vector<std::string> expected_names() const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
};

Model init_model(const ModelConfig& config);

/// Throws InvalidShape unless pair is 20x40, InvalidValue unless values in [0,1].
void check_pair_image(const Tensor& pair);

struct LabeledPair {
  const Tensor* image = nullptr;
  PairLabel label = PairLabel::Different;
};

double loss(const Model& model, const Tensor& pair, const TargetDistribution& target);

/// Optional center-loss term: weight * 0.5 * ||feature - centers[label]||^2.
struct CenterTerm {
  const std::vector<std::vector<double>>* centers = nullptr;  // [2][feature_width]
  double weight = 0.0;
};

struct BatchGradients {
  double mean_loss = 0.0;
  std::vector<Tensor> grads;  // aligned with Model::parameters()
  std::vector<ProbVector> predictions;
  std::vector<std::vector<double>> features;
};

/// Mean batch loss and its parameter gradients. Samples are processed in
/// parallel; gradients are reduced in sample order so the result does not
/// depend on the thread count. Throws InvalidArgument on an empty batch.
BatchGradients loss_gradients(const Model& model, std::span<const LabeledPair> batch,
                              const CenterTerm& center = {});

/// Mean over samples of weight * 0.5 * ||f_i - c_{y_i}||^2.
double center_loss_term(std::span<const std::vector<double>> features,
                        std::span<const PairLabel> labels,
                        const std::vector<std::vector<double>>& centers, double weight);

/// Moves each class center toward the batch mean of its class by alpha.
void update_centers(std::vector<std::vector<double>>& centers,
                    std::span<const std::vector<double>> features,
                    std::span<const PairLabel> labels, double alpha);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  Model model;
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     std::uint64_t epoch = 0, double train_loss = 0.0);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coffar
