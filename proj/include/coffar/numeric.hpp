#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "coffar/tensor.hpp"

namespace coffar {

/// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-12;

/// Two-class distribution (y0 = irrelevant / different, y1 = relevant / same).
class ProbVector {
 public:
  ProbVector() = default;
  /// Throws InvalidValue unless both entries lie in [0,1] and sum to 1 within 1e-12.
  ProbVector(double p0, double p1);

  double operator[](std::size_t i) const noexcept { return p_[i]; }
  double relevant() const noexcept { return p_[1]; }
  double irrelevant() const noexcept { return p_[0]; }
  std::span<const double, 2> probs() const noexcept { return p_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::array<double, 2> p_{0.5, 0.5};
};

struct EntropyReport {
  double h_target = 0.0;  // H(g)
  double h_pred = 0.0;    // H(g')
  double cross = 0.0;     // H(g, g')
  double kl = 0.0;        // H(g || g') = cross - h_target
};

Tensor rotate180(const Tensor& kernel);

/// out[x,y] = sum_{s,t} w(s,t) f(x+s, y+t), zero padded, same size as input.
Tensor correlate2d(const Tensor& input, const Tensor& kernel);
/// out[x,y] = sum_{s,t} w(s,t) f(x-s, y-t), zero padded, same size as input.
Tensor convolve2d(const Tensor& input, const Tensor& kernel);

/// y_j = sum_i (k_ji * x_i) + b_j with convolve2d semantics.
/// inputs: [C_in, H, W]; kernels: [C_out, C_in, kh, kw]; biases: C_out values.
Tensor conv_layer_forward(const Tensor& inputs, const Tensor& kernels,
                          std::span<const double> biases);

/// Max-shifted softmax. Throws InvalidValue on non-finite logits.
std::vector<double> softmax(std::span<const double> logits);
ProbVector softmax2(double z0, double z1);

/// Natural-log entropy with 0 ln 0 = 0.
double entropy(const ProbVector& p);
double cross_entropy(const ProbVector& target, const ProbVector& pred);
double kl_divergence(const ProbVector& target, const ProbVector& pred);
EntropyReport entropy_report(const ProbVector& target, const ProbVector& pred);

using ScalarFn = std::function<double(const Tensor&)>;
using GradientFn = std::function<Tensor(const Tensor&)>;

/// Max over elements of |g_a - g_n| / max(1, |g_a|, |g_n|), where g_n is the
/// central finite difference with the given step.
double grad_check(const ScalarFn& f, const GradientFn& analytic, const Tensor& point,
                  double step = 1e-5);

}  // namespace coffar
