#include "coffar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coffar/error.hpp"

namespace coffar {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::InvalidKernel: return "invalid-kernel";
    case ErrorKind::InvalidValue: return "invalid-value";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Config: return "config";
    case ErrorKind::MalformedCheckpoint: return "malformed-checkpoint";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::Gallery: return "gallery";
    case ErrorKind::Generation: return "generation";
    case ErrorKind::Resolution: return "resolution";
    case ErrorKind::MalformedManifest: return "malformed-manifest";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() ||
      std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; })) {
    throw Error(ErrorKind::InvalidShape,
                "tensor shape must be non-empty with positive dims, got " +
                    shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw Error(ErrorKind::InvalidShape,
                "data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_string(shape_));
  }
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "max_abs_diff: " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace coffar
