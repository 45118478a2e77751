#include "coffar/kernels.hpp"

#include <algorithm>
#include <string>

#include "coffar/error.hpp"

namespace coffar::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

struct ConvDims {
  long cin, cout, h, w, kh, kw, a, b;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k) {
  ConvDims d{};
  d.cin = static_cast<long>(x.dim(0));
  d.h = static_cast<long>(x.dim(1));
  d.w = static_cast<long>(x.dim(2));
  d.cout = static_cast<long>(k.dim(0));
  d.kh = static_cast<long>(k.dim(2));
  d.kw = static_cast<long>(k.dim(3));
  d.a = (d.kh - 1) / 2;
  d.b = (d.kw - 1) / 2;
  return d;
}

inline std::size_t kidx(const ConvDims& d, long o, long i, long s, long t) {
  return static_cast<std::size_t>(((o * d.cin + i) * d.kh + (s + d.a)) * d.kw + (t + d.b));
}

inline std::size_t xidx(const ConvDims& d, long c, long r, long col) {
  return static_cast<std::size_t>((c * d.h + r) * d.w + col);
}

void check_dense(const Tensor& w, std::size_t n_bias, std::size_t n_in) {
  if (w.rank() != 2 || w.dim(1) != n_in || (n_bias != 0 && w.dim(0) != n_bias)) {
    throw Error(ErrorKind::InvalidShape, "dense weight " + shape_string(w.shape()) +
                                             " incompatible with input of " +
                                             std::to_string(n_in));
  }
}

}  // namespace

void check_conv_operands(const Tensor& x, const Tensor& k, std::size_t n_bias) {
  if (x.rank() != 3) {
    throw Error(ErrorKind::InvalidShape,
                "conv input must be [C,H,W], got " + shape_string(x.shape()));
  }
  if (k.rank() != 4) {
    throw Error(ErrorKind::InvalidKernel,
                "conv kernels must be [C_out,C_in,kh,kw], got " + shape_string(k.shape()));
  }
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) {
    throw Error(ErrorKind::InvalidKernel,
                "kernel dims must be odd, got " + shape_string(k.shape()));
  }
  if (k.dim(1) != x.dim(0)) {
    throw Error(ErrorKind::InvalidShape, "kernel expects " + std::to_string(k.dim(1)) +
                                             " input channels, input has " +
                                             std::to_string(x.dim(0)));
  }
  if (n_bias != k.dim(0)) {
    throw Error(ErrorKind::InvalidShape, "bias count " + std::to_string(n_bias) +
                                             " != output channels " +
                                             std::to_string(k.dim(0)));
  }
}

// ---------------------------------------------------------------------------
// Parallel kernels

Tensor conv_forward(const Tensor& x, const Tensor& k, std::span<const double> bias) {
  check_conv_operands(x, k, bias.size());
  const ConvDims d = conv_dims(x, k);
  Tensor y({k.dim(0), x.dim(1), x.dim(2)});
  const double* xp = x.data().data();
  const double* kp = k.data().data();
  double* yp = y.data().data();
  const std::size_t work = static_cast<std::size_t>(d.cout * d.cin * d.h * d.w * d.kh * d.kw);

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long o = 0; o < d.cout; ++o) {
    double* yo = yp + o * d.h * d.w;
    std::fill(yo, yo + d.h * d.w, bias[static_cast<std::size_t>(o)]);
    for (long i = 0; i < d.cin; ++i) {
      for (long s = -d.a; s <= d.a; ++s) {
        const long r0 = std::max(0L, s), r1 = std::min(d.h, d.h + s);
        for (long t = -d.b; t <= d.b; ++t) {
          const double wt = kp[kidx(d, o, i, s, t)];
          const long c0 = std::max(0L, t), c1 = std::min(d.w, d.w + t);
          for (long r = r0; r < r1; ++r) {
            double* yrow = yo + r * d.w;
            const double* xrow = xp + xidx(d, i, r - s, 0);
            for (long c = c0; c < c1; ++c) yrow[c] += wt * xrow[c - t];
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                        bool need_input_grad) {
  check_conv_operands(x, k, k.dim(0));
  const ConvDims d = conv_dims(x, k);
  if (dy.shape() != std::vector<std::size_t>{k.dim(0), x.dim(1), x.dim(2)}) {
    throw Error(ErrorKind::InvalidShape, "conv_backward: upstream gradient shape " +
                                             shape_string(dy.shape()));
  }
  ConvGrads g;
  g.d_kernels = Tensor(k.shape());
  g.d_bias.assign(k.dim(0), 0.0);
  const double* xp = x.data().data();
  const double* kp = k.data().data();
  const double* dyp = dy.data().data();
  double* dkp = g.d_kernels.data().data();
  const std::size_t work = static_cast<std::size_t>(d.cout * d.cin * d.h * d.w * d.kh * d.kw);

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long o = 0; o < d.cout; ++o) {
    const double* dyo = dyp + o * d.h * d.w;
    double sb = 0.0;
    for (long p = 0; p < d.h * d.w; ++p) sb += dyo[p];
    g.d_bias[static_cast<std::size_t>(o)] = sb;
    for (long i = 0; i < d.cin; ++i) {
      for (long s = -d.a; s <= d.a; ++s) {
        const long r0 = std::max(0L, s), r1 = std::min(d.h, d.h + s);
        for (long t = -d.b; t <= d.b; ++t) {
          const long c0 = std::max(0L, t), c1 = std::min(d.w, d.w + t);
          double acc = 0.0;
          for (long r = r0; r < r1; ++r) {
            const double* dyrow = dyo + r * d.w;
            const double* xrow = xp + xidx(d, i, r - s, 0);
            for (long c = c0; c < c1; ++c) acc += dyrow[c] * xrow[c - t];
          }
          dkp[kidx(d, o, i, s, t)] = acc;
        }
      }
    }
  }

  if (need_input_grad) {
    g.d_input = Tensor(x.shape());
    double* dxp = g.d_input.data().data();
    // dx[i, p, q] = sum_o sum_{s,t} dy[o, p+s, q+t] k[o, i, s, t]
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (long i = 0; i < d.cin; ++i) {
      double* dxi = dxp + i * d.h * d.w;
      for (long o = 0; o < d.cout; ++o) {
        const double* dyo = dyp + o * d.h * d.w;
        for (long s = -d.a; s <= d.a; ++s) {
          const long p0 = std::max(0L, -s), p1 = std::min(d.h, d.h - s);
          for (long t = -d.b; t <= d.b; ++t) {
            const double wt = kp[kidx(d, o, i, s, t)];
            const long q0 = std::max(0L, -t), q1 = std::min(d.w, d.w - t);
            for (long p = p0; p < p1; ++p) {
              double* dxrow = dxi + p * d.w;
              const double* dyrow = dyo + (p + s) * d.w;
              for (long q = q0; q < q1; ++q) dxrow[q] += wt * dyrow[q + t];
            }
          }
        }
      }
    }
  }
  return g;
}

std::vector<double> dense_forward(const Tensor& w, std::span<const double> bias,
                                  std::span<const double> x) {
  check_dense(w, bias.size(), x.size());
  const long out = static_cast<long>(w.dim(0));
  const long in = static_cast<long>(w.dim(1));
  std::vector<double> y(static_cast<std::size_t>(out));
  const double* wp = w.data().data();
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(out * in) > kParallelWork)
  for (long o = 0; o < out; ++o) {
    const double* row = wp + o * in;
    double acc = bias[static_cast<std::size_t>(o)];
    for (long j = 0; j < in; ++j) acc += row[j] * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

DenseGrads dense_backward(const Tensor& w, std::span<const double> x,
                          std::span<const double> dy, bool need_input_grad) {
  check_dense(w, dy.size(), x.size());
  const long out = static_cast<long>(w.dim(0));
  const long in = static_cast<long>(w.dim(1));
  DenseGrads g;
  g.d_weight = Tensor(w.shape());
  g.d_bias.assign(dy.begin(), dy.end());
  const double* wp = w.data().data();
  double* dwp = g.d_weight.data().data();
  const bool big = static_cast<std::size_t>(out * in) > kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (long o = 0; o < out; ++o) {
    const double go = dy[static_cast<std::size_t>(o)];
    double* row = dwp + o * in;
    for (long j = 0; j < in; ++j) row[j] = go * x[static_cast<std::size_t>(j)];
  }
  if (need_input_grad) {
    g.d_input.assign(static_cast<std::size_t>(in), 0.0);
#pragma omp parallel for schedule(static) if (big)
    for (long j = 0; j < in; ++j) {
      double acc = 0.0;
      for (long o = 0; o < out; ++o) acc += wp[o * in + j] * dy[static_cast<std::size_t>(o)];
      g.d_input[static_cast<std::size_t>(j)] = acc;
    }
  }
  return g;
}

PoolResult maxpool2x2_forward(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) < 2 || x.dim(2) < 2) {
    throw Error(ErrorKind::InvalidShape,
                "maxpool2x2 needs [C,H>=2,W>=2], got " + shape_string(x.shape()));
  }
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult r{Tensor({ch, oh, ow}), std::vector<std::size_t>(ch * oh * ow)};
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (c * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (c * h + 2 * i + di) * w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + i) * ow + j;
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2x2_backward(std::span<const std::size_t> argmax,
                           const std::vector<std::size_t>& in_shape, const Tensor& dy) {
  if (dy.size() != argmax.size()) {
    throw Error(ErrorKind::InvalidShape, "maxpool2x2_backward: gradient shape mismatch");
  }
  Tensor dx(in_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Serial reference: one output element at a time, bounds checked per tap.

namespace reference {

Tensor conv_forward(const Tensor& x, const Tensor& k, std::span<const double> bias) {
  check_conv_operands(x, k, bias.size());
  const ConvDims d = conv_dims(x, k);
  Tensor y({k.dim(0), x.dim(1), x.dim(2)});
  for (long o = 0; o < d.cout; ++o) {
    for (long r = 0; r < d.h; ++r) {
      for (long c = 0; c < d.w; ++c) {
        double acc = bias[static_cast<std::size_t>(o)];
        for (long i = 0; i < d.cin; ++i) {
          for (long s = -d.a; s <= d.a; ++s) {
            for (long t = -d.b; t <= d.b; ++t) {
              const long xr = r - s, xc = c - t;
              if (xr < 0 || xr >= d.h || xc < 0 || xc >= d.w) continue;
              acc += k[kidx(d, o, i, s, t)] * x[xidx(d, i, xr, xc)];
            }
          }
        }
        y[xidx(d, o, r, c)] = acc;
      }
    }
  }
  return y;
}

ConvGrads conv_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                        bool need_input_grad) {
  check_conv_operands(x, k, k.dim(0));
  const ConvDims d = conv_dims(x, k);
  ConvGrads g;
  g.d_kernels = Tensor(k.shape());
  g.d_bias.assign(k.dim(0), 0.0);
  if (need_input_grad) g.d_input = Tensor(x.shape());
  for (long o = 0; o < d.cout; ++o) {
    for (long r = 0; r < d.h; ++r) {
      for (long c = 0; c < d.w; ++c) {
        const double gy = dy[xidx(d, o, r, c)];
        g.d_bias[static_cast<std::size_t>(o)] += gy;
        for (long i = 0; i < d.cin; ++i) {
          for (long s = -d.a; s <= d.a; ++s) {
            for (long t = -d.b; t <= d.b; ++t) {
              const long xr = r - s, xc = c - t;
              if (xr < 0 || xr >= d.h || xc < 0 || xc >= d.w) continue;
              g.d_kernels[kidx(d, o, i, s, t)] += gy * x[xidx(d, i, xr, xc)];
              if (need_input_grad) g.d_input[xidx(d, i, xr, xc)] += gy * k[kidx(d, o, i, s, t)];
            }
          }
        }
      }
    }
  }
  return g;
}

std::vector<double> dense_forward(const Tensor& w, std::span<const double> bias,
                                  std::span<const double> x) {
  check_dense(w, bias.size(), x.size());
  std::vector<double> y(w.dim(0));
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    double acc = bias[o];
    for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at(o, j) * x[j];
    y[o] = acc;
  }
  return y;
}

DenseGrads dense_backward(const Tensor& w, std::span<const double> x,
                          std::span<const double> dy, bool need_input_grad) {
  check_dense(w, dy.size(), x.size());
  DenseGrads g;
  g.d_weight = Tensor(w.shape());
  g.d_bias.assign(dy.begin(), dy.end());
  if (need_input_grad) g.d_input.assign(w.dim(1), 0.0);
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      g.d_weight.at(o, j) = dy[o] * x[j];
      if (need_input_grad) g.d_input[j] += w.at(o, j) * dy[o];
    }
  }
  return g;
}

}  // namespace reference

}  // namespace coffar::kernels
