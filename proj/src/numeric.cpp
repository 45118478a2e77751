#include "coffar/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coffar/error.hpp"
#include "coffar/kernels.hpp"

namespace coffar {

ProbVector::ProbVector(double p0, double p1) : p_{p0, p1} {
  const bool in_range = p0 >= 0.0 && p0 <= 1.0 && p1 >= 0.0 && p1 <= 1.0;
  if (!in_range || std::abs(p0 + p1 - 1.0) > 1e-12) {
    throw Error(ErrorKind::InvalidValue, "not a probability vector: [" +
                                             std::to_string(p0) + ", " +
                                             std::to_string(p1) + "]");
  }
}

namespace {

void check_2d_operands(const Tensor& input, const Tensor& kernel) {
  if (input.rank() != 2 || input.empty()) {
    throw Error(ErrorKind::InvalidShape, "expected a non-empty 2-D input, got " +
                                             shape_string(input.shape()));
  }
  if (kernel.rank() != 2) {
    throw Error(ErrorKind::InvalidKernel,
                "expected a 2-D kernel, got " + shape_string(kernel.shape()));
  }
  if (kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0) {
    throw Error(ErrorKind::InvalidKernel,
                "kernel dims must be odd, got " + shape_string(kernel.shape()));
  }
  if (input.dim(0) < kernel.dim(0) || input.dim(1) < kernel.dim(1)) {
    throw Error(ErrorKind::InvalidShape, "input " + shape_string(input.shape()) +
                                             " smaller than kernel " +
                                             shape_string(kernel.shape()));
  }
}

Tensor slide(const Tensor& f, const Tensor& w) {
  check_2d_operands(f, w);
  const long rows = static_cast<long>(f.dim(0));
  const long cols = static_cast<long>(f.dim(1));
  const long a = static_cast<long>(w.dim(0) - 1) / 2;
  const long b = static_cast<long>(w.dim(1) - 1) / 2;
  Tensor out = Tensor::matrix(f.dim(0), f.dim(1));
  for (long x = 0; x < rows; ++x) {
    for (long y = 0; y < cols; ++y) {
      double acc = 0.0;
      for (long s = -a; s <= a; ++s) {
        const long fx = x + s;
        if (fx < 0 || fx >= rows) continue;
        for (long t = -b; t <= b; ++t) {
          const long fy = y + t;
          if (fy < 0 || fy >= cols) continue;
          acc += w.at(static_cast<std::size_t>(s + a), static_cast<std::size_t>(t + b)) *
                 f.at(static_cast<std::size_t>(fx), static_cast<std::size_t>(fy));
        }
      }
      out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
    }
  }
  return out;
}

}  // namespace

Tensor rotate180(const Tensor& kernel) {
  if (kernel.rank() != 2) {
    throw Error(ErrorKind::InvalidKernel, "rotate180 expects a 2-D kernel");
  }
  Tensor out = kernel;
  std::reverse(out.data().begin(), out.data().end());
  return out;
}

Tensor correlate2d(const Tensor& input, const Tensor& kernel) {
  return slide(input, kernel);
}

Tensor convolve2d(const Tensor& input, const Tensor& kernel) {
  // Same summation order as correlation, so the flip identity holds bitwise.
  check_2d_operands(input, kernel);
  return slide(input, rotate180(kernel));
}

Tensor conv_layer_forward(const Tensor& inputs, const Tensor& kernels,
                          std::span<const double> biases) {
  return kernels::conv_forward(inputs, kernels, biases);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorKind::InvalidArgument, "softmax of empty vector");
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error(ErrorKind::InvalidValue, "non-finite logit");
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

ProbVector softmax2(double z0, double z1) {
  const std::array<double, 2> z{z0, z1};
  const auto p = softmax(z);
  // Complement form keeps the pair summing to 1 to the last ulp.
  return p[0] < p[1] ? ProbVector(p[0], 1.0 - p[0]) : ProbVector(1.0 - p[1], p[1]);
}

double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.probs()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double cross_entropy(const ProbVector& target, const ProbVector& pred) {
  double h = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    if (target[i] == 0.0) continue;
    const double q = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    h -= target[i] * std::log(q);
  }
  return h;
}

double kl_divergence(const ProbVector& target, const ProbVector& pred) {
  return cross_entropy(target, pred) - entropy(target);
}

EntropyReport entropy_report(const ProbVector& target, const ProbVector& pred) {
  EntropyReport r;
  r.h_target = entropy(target);
  r.h_pred = entropy(pred);
  r.cross = cross_entropy(target, pred);
  r.kl = r.cross - r.h_target;
  return r;
}

double grad_check(const ScalarFn& f, const GradientFn& analytic, const Tensor& point,
                  double step) {
  const Tensor ga = analytic(point);
  if (ga.shape() != point.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "analytic gradient shape " +
                                              shape_string(ga.shape()) + " != point " +
                                              shape_string(point.shape()));
  }
  Tensor probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    const double gn = (fp - fm) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(ga[i]), std::abs(gn)});
    worst = std::max(worst, std::abs(ga[i] - gn) / denom);
  }
  return worst;
}

}  // namespace coffar
