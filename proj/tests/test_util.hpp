#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "coffar/model.hpp"
#include "coffar/numeric.hpp"
#include "coffar/tensor.hpp"

namespace coffar::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& gen,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(gen);
  return t;
}

/// Random pair image with values in [0,1].
inline Tensor random_pair(std::mt19937_64& gen) {
  return random_tensor({kPairRows, kPairCols}, gen, 0.0, 1.0);
}

/// Two small conv layers and an 8-wide hidden layer, cheap enough for
/// finite-difference checks over every parameter.
inline ModelConfig small_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.conv = {ConvSpec{2, 3, 3, true}, ConvSpec{3, 3, 3, true}};
  cfg.fc_dims = {8};
  cfg.seed = seed;
  return cfg;
}

/// Largest grad_check error over all parameter tensors of the model for a
/// single-sample loss.
inline double model_grad_error(const Model& model, const Tensor& pair, PairLabel label) {
  const LabeledPair sample{&pair, label};
  double worst = 0.0;
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    const auto with_param = [&](const Tensor& value) {
      Model m = model;
      m.parameters()[k].value = value;
      return m;
    };
    const ScalarFn f = [&](const Tensor& value) {
      return loss(with_param(value), pair, TargetDistribution{label});
    };
    const GradientFn g = [&](const Tensor& value) {
      const Model m = with_param(value);
      return loss_gradients(m, std::span<const LabeledPair>(&sample, 1)).grads[k];
    };
    worst = std::max(worst, grad_check(f, g, model.parameters()[k].value));
  }
  return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("coffar_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace coffar::testing
