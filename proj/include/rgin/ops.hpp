#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgin/blas.hpp"
#include "rgin/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; if any input tracks
// gradients (and the tape has grad enabled) the output tracks gradients too and
// the op's adjoint is appended to the tape.

namespace rgin {

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

namespace detail {

template <class T, class... Ts>
bool tracks(const Tape<T>& tape, const Ts&... ts) {
  return tape.grad_enabled() && (ts.requires_grad() || ...);
}

template <class T>
Tensor<T> make_output(const Tape<T>& tape, const char* op, Shape shape, std::vector<T> data,
                      bool track) {
  if (tape.check_finite()) {
    for (const T& v : data)
      if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  return Tensor<T>(std::move(shape), std::move(data), track);
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., k] x b[k, c] -> [..., c]. Leading extents of `a` are treated as rows.
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t k = b.dim(0), c = b.dim(1), rows = a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = c;
  std::vector<T> out(rows * c);
  blas::matmul_into(rows, c, k, a.raw(), b.raw(), out.data());
  bool track = detail::tracks(tape, a, b);
  auto y = detail::make_output(tape, "matmul", std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("matmul", [a, b, y, rows, k, c]() mutable {
      const T* dy = y.grad().data();
      if (a.requires_grad())
        blas::gemm(false, true, rows, k, c, T(1), dy, c, b.raw(), c, T(1), a.mutable_grad().data(), k);
      if (b.requires_grad())
        blas::gemm(true, false, k, c, rows, T(1), a.raw(), k, dy, c, T(1), b.mutable_grad().data(), c);
    });
  }
  return y;
}

/// Cross-correlation of x[B,H,W,Cin] (or [H,W,Cin]) with kernel[k,k,Cin,Cout].
///
/// Output extents: valid -> floor((H - k) / stride) + 1;
/// same -> ceil(H / stride), with total padding max((Ho - 1) * stride + k - H, 0)
/// split as floor(total / 2) before and the remainder after.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride,
                 Padding padding) {
  if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive, got " + std::to_string(stride));
  const bool batched = x.rank() == 4;
  if ((x.rank() != 3 && !batched) || kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1))
    throw DimensionError("conv2d: expected input [B,H,W,C] or [H,W,C] and kernel [k,k,Cin,Cout], got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t H = x.dim(batched ? 1 : 0), W = x.dim(batched ? 2 : 1), C = x.shape().back();
  const std::size_t K = kernel.dim(0), O = kernel.dim(3);
  if (kernel.dim(2) != C)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                         " input channels, input has " + std::to_string(C));
  const std::size_t S = static_cast<std::size_t>(stride);
  std::size_t Ho, Wo, pad_t = 0, pad_l = 0;
  if (padding == Padding::Valid) {
    if (K > H || K > W)
      throw DimensionError("conv2d: kernel " + std::to_string(K) + " larger than input " + shape_str(x.shape()));
    Ho = (H - K) / S + 1;
    Wo = (W - K) / S + 1;
  } else {
    Ho = (H + S - 1) / S;
    Wo = (W + S - 1) / S;
    std::size_t ph = (Ho - 1) * S + K > H ? (Ho - 1) * S + K - H : 0;
    std::size_t pw = (Wo - 1) * S + K > W ? (Wo - 1) * S + K - W : 0;
    if (K > H + ph || K > W + pw)
      throw DimensionError("conv2d: kernel larger than padded input");
    pad_t = ph / 2;
    pad_l = pw / 2;
  }
  const std::size_t rows = B * Ho * Wo, cols_w = K * K * C;
  const bool pointwise = K == 1 && S == 1 && pad_t == 0 && pad_l == 0;

  std::vector<T> cols;
  if (!pointwise) {
    cols.assign(rows * cols_w, T(0));
    const T* xs = x.raw();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          T* row = cols.data() + ((b * Ho + oy) * Wo + ox) * cols_w;
          for (std::size_t ky = 0; ky < K; ++ky) {
            long iy = static_cast<long>(oy * S + ky) - static_cast<long>(pad_t);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < K; ++kx) {
              long ix = static_cast<long>(ox * S + kx) - static_cast<long>(pad_l);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              const T* src = xs + ((b * H + iy) * W + ix) * C;
              std::copy(src, src + C, row + (ky * K + kx) * C);
            }
          }
        }
  }
  const T* lhs = pointwise ? x.raw() : cols.data();
  std::vector<T> out(rows * O);
  blas::matmul_into(rows, O, cols_w, lhs, kernel.raw(), out.data());
  Shape out_shape = batched ? Shape{B, Ho, Wo, O} : Shape{Ho, Wo, O};
  bool track = detail::tracks(tape, x, kernel);
  auto y = detail::make_output(tape, "conv2d", std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("conv2d", [=, cols = std::move(cols)]() mutable {
      const T* dy = y.grad().data();
      const T* lhs_b = pointwise ? x.raw() : cols.data();
      if (kernel.requires_grad())
        blas::gemm(true, false, cols_w, O, rows, T(1), lhs_b, cols_w, dy, O, T(1),
                   kernel.mutable_grad().data(), O);
      if (!x.requires_grad()) return;
      T* dx = x.mutable_grad().data();
      if (pointwise) {
        blas::gemm(false, true, rows, C, O, T(1), dy, O, kernel.raw(), O, T(1), dx, C);
        return;
      }
      std::vector<T> dcols(rows * cols_w);
      blas::gemm(false, true, rows, cols_w, O, T(1), dy, O, kernel.raw(), O, T(0), dcols.data(), cols_w);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const T* row = dcols.data() + ((b * Ho + oy) * Wo + ox) * cols_w;
            for (std::size_t ky = 0; ky < K; ++ky) {
              long iy = static_cast<long>(oy * S + ky) - static_cast<long>(pad_t);
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                long ix = static_cast<long>(ox * S + kx) - static_cast<long>(pad_l);
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                T* dst = dx + ((b * H + iy) * W + ix) * C;
                const T* src = row + (ky * K + kx) * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
              }
            }
          }
    });
  }
  return y;
}

/// x[..., c] + b[c]
template <class T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0))
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  const std::size_t c = bias.dim(0), rows = x.size() / c;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bias[j];
  bool track = detail::tracks(tape, x, bias);
  auto y = detail::make_output(tape, "add_bias", x.shape(), std::move(out), track);
  if (track) {
    tape.record("add_bias", [x, bias, y, rows, c]() mutable {
      auto dy = y.grad();
      if (x.requires_grad()) {
        auto dx = x.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  bool track = detail::tracks(tape, a, b);
  auto y = detail::make_output(tape, "add", a.shape(), std::move(out), track);
  if (track) {
    tape.record("add", [a, b, y]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  bool track = detail::tracks(tape, a, b);
  auto y = detail::make_output(tape, "sub", a.shape(), std::move(out), track);
  if (track) {
    tape.record("sub", [a, b, y]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  bool track = detail::tracks(tape, a, b);
  auto y = detail::make_output(tape, "mul", a.shape(), std::move(out), track);
  if (track) {
    tape.record("mul", [a, b, y]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return y;
}

/// s * x + c
template <class T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& x, T s, T c = T(0)) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i] + c;
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "affine", x.shape(), std::move(out), track);
  if (track) {
    tape.record("affine", [x, y, s]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(x[i]);
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "sigmoid", x.shape(), std::move(out), track);
  if (track) {
    tape.record("sigmoid", [x, y]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
    });
  }
  return y;
}

template <class T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "tanh", x.shape(), std::move(out), track);
  if (track) {
    tape.record("tanh", [x, y]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
    });
  }
  return y;
}

inline constexpr double kLeakySlope = 0.1;

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& x, T slope = T(kLeakySlope)) {
  if (!(slope > T(0) && slope < T(1)))
    throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  tape.note_branches(x.size(), [&](std::size_t i) { return x[i] >= T(0); });
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "leaky_relu", x.shape(), std::move(out), track);
  if (track) {
    tape.record("leaky_relu", [x, y, slope]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += x[i] >= T(0) ? dy[i] : slope * dy[i];
    });
  }
  return y;
}

/// Numerically stable softmax along `axis` (max-subtracted).
template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1, n = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "softmax", x.shape(), std::move(out), track);
  if (track) {
    tape.record("softmax", [x, y, outer, inner, n]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            dx[idx] += y[idx] * (dy[idx] - dot);
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalization

/// Running statistics of one batch-norm layer (not differentiated).
template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel normalization over every axis but the last; gamma/beta are the affine.
/// Train mode normalizes with the biased batch variance and updates the running
/// statistics (unbiased variance); eval mode consumes them.
template <class T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormStats<T>& stats, Mode mode) {
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c || stats.running_mean.size() != c)
    throw DimensionError("batch_norm: channel count mismatch for input " + shape_str(x.shape()));
  const std::size_t rows = x.size() / c;
  if (mode == Mode::Train && (x.rank() < 2 || x.dim(0) < 2))
    throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2, got shape " +
                                shape_str(x.shape()));
  std::vector<T> mean(c, T(0)), inv_std(c);
  if (mode == Mode::Train) {
    std::vector<double> acc(c, 0.0), acc2(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) acc[j] += x[r * c + j];
    for (std::size_t j = 0; j < c; ++j) acc[j] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        double d = x[r * c + j] - acc[j];
        acc2[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      double var = acc2[j] / static_cast<double>(rows);
      mean[j] = static_cast<T>(acc[j]);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(var + stats.eps));
      double unbiased = rows > 1 ? acc2[j] / static_cast<double>(rows - 1) : var;
      stats.running_mean[j] = static_cast<T>((1 - stats.momentum) * stats.running_mean[j] + stats.momentum * acc[j]);
      stats.running_var[j] = static_cast<T>((1 - stats.momentum) * stats.running_var[j] + stats.momentum * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = stats.running_mean[j];
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[j]) + stats.eps));
    }
  }
  std::vector<T> xhat(x.size()), out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (x[i] - mean[j]) * inv_std[j];
      out[i] = gamma[j] * xhat[i] + beta[j];
    }
  bool track = detail::tracks(tape, x, gamma, beta);
  auto y = detail::make_output(tape, "batch_norm", x.shape(), std::move(out), track);
  if (track) {
    const bool train = mode == Mode::Train;
    tape.record("batch_norm", [=, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      auto dy = y.grad();
      std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          sum_dy[j] += dy[r * c + j];
          sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
        }
      if (gamma.requires_grad()) {
        auto dg = gamma.mutable_grad();
        for (std::size_t j = 0; j < c; ++j) dg[j] += sum_dy_xhat[j];
      }
      if (beta.requires_grad()) {
        auto db = beta.mutable_grad();
        for (std::size_t j = 0; j < c; ++j) db[j] += sum_dy[j];
      }
      if (!x.requires_grad()) return;
      auto dx = x.mutable_grad();
      const T inv_n = T(1) / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t i = r * c + j;
          T g = gamma[j] * inv_std[j];
          if (train)
            dx[i] += g * (dy[i] - sum_dy[j] * inv_n - xhat[i] * sum_dy_xhat[j] * inv_n);
          else
            dx[i] += g * dy[i];
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Losses and reductions

/// Mean of w_i * BCE(sigmoid(logit_i), target_i), evaluated in the stable logit form
/// max(x,0) - x*t + log(1 + exp(-|x|)). Targets are constants.
template <class T>
Tensor<T> bce_with_logits(Tape<T>& tape, const Tensor<T>& logit, const Tensor<T>& target,
                          const std::vector<T>& weight = {}) {
  detail::require_same_shape("bce_with_logits", logit.shape(), target.shape());
  if (!weight.empty() && weight.size() != logit.size())
    throw DimensionError("bce_with_logits: weight length mismatch");
  for (T t : target.data())
    if (!(t >= T(0) && t <= T(1)))
      throw std::invalid_argument("bce_with_logits: target outside [0,1]");
  const std::size_t n = logit.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T x = logit[i], t = target[i];
    T l = std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
    total += (weight.empty() ? T(1) : weight[i]) * l;
  }
  bool track = detail::tracks(tape, logit);
  auto y = detail::make_output(tape, "bce_with_logits", Shape{1}, {total / static_cast<T>(n)}, track);
  if (track) {
    tape.record("bce_with_logits", [logit, target, weight, y, n]() mutable {
      T g = y.grad()[0] / static_cast<T>(n);
      auto dx = logit.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        dx[i] += g * (weight.empty() ? T(1) : weight[i]) *
                 (detail::stable_sigmoid(logit[i]) - target[i]);
    });
  }
  return y;
}

/// Mean smooth-L1 with threshold 1: 0.5 d^2 if |d| < 1 else |d| - 0.5.
template <class T>
Tensor<T> smooth_l1(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape("smooth_l1", pred.shape(), target.shape());
  const std::size_t n = pred.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T d = pred[i] - target[i];
    T ad = std::abs(d);
    total += ad < T(1) ? T(0.5) * d * d : ad - T(0.5);
  }
  tape.note_branches(n, [&](std::size_t i) {
    T d = pred[i] - target[i];
    return std::abs(d) < T(1) ? 0 : d > 0 ? 1 : 2;
  });
  bool track = detail::tracks(tape, pred, target);
  auto y = detail::make_output(tape, "smooth_l1", Shape{1}, {total / static_cast<T>(n)}, track);
  if (track) {
    tape.record("smooth_l1", [pred, target, y, n]() mutable {
      T g = y.grad()[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        T d = pred[i] - target[i];
        T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
        if (pred.requires_grad()) pred.mutable_grad()[i] += g * dd;
        if (target.requires_grad()) target.mutable_grad()[i] -= g * dd;
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "sum", Shape{1}, {total}, track);
  if (track) {
    tape.record("sum", [x, y]() mutable {
      T g = y.grad()[0];
      for (auto& d : x.mutable_grad()) d += g;
    });
  }
  return y;
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return affine(tape, sum(tape, x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "reshape", std::move(shape), std::move(out), track);
  if (track) {
    tape.record("reshape", [x, y]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return y;
}

/// Concatenates along the last axis; leading extents must agree.
template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total_c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead)
      throw DimensionError("concat_channels: leading extents differ: " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    widths.push_back(p.shape().back());
    total_c += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total_c);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].raw();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.data() + r * total_c + offset);
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total_c);
  bool track = false;
  for (const auto& p : parts) track = track || detail::tracks(tape, p);
  auto y = detail::make_output(tape, "concat_channels", std::move(out_shape), std::move(out), track);
  if (track) {
    tape.record("concat_channels", [parts, y, widths, rows, total_c]() mutable {
      auto dy = y.grad();
      std::size_t off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (parts[k].requires_grad()) {
          auto dp = parts[k].mutable_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) dp[r * widths[k] + j] += dy[r * total_c + off + j];
        }
        off += widths[k];
      }
    });
  }
  return y;
}

/// Splits the last axis into k equal contiguous groups.
template <class T>
std::vector<Tensor<T>> split_channels(Tape<T>& tape, const Tensor<T>& x, std::size_t k) {
  const std::size_t m = x.shape().back();
  if (k == 0 || m % k != 0)
    throw DimensionError("split_channels: " + std::to_string(m) + " channels not divisible into " +
                         std::to_string(k) + " splits");
  const std::size_t w = m / k, rows = x.size() / m;
  Shape part_shape = x.shape();
  part_shape.back() = w;
  std::vector<Tensor<T>> parts;
  const bool track = detail::tracks(tape, x);
  for (std::size_t p = 0; p < k; ++p) {
    std::vector<T> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.raw() + r * m + p * w, x.raw() + r * m + (p + 1) * w, out.data() + r * w);
    auto y = detail::make_output(tape, "split_channels", part_shape, std::move(out), track);
    if (track) {
      tape.record("split_channels", [x, y, p, w, m, rows]() mutable {
        auto dy = y.grad();
        auto dx = x.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) dx[r * m + p * w + j] += dy[r * w + j];
      });
    }
    parts.push_back(std::move(y));
  }
  return parts;
}

/// Flat gather: y[i] = x[indices[i]].
template <class T>
Tensor<T> gather(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DimensionError("gather: empty index list");
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw DimensionError("gather: index out of range");
    out[i] = x[indices[i]];
  }
  bool track = detail::tracks(tape, x);
  auto y = detail::make_output(tape, "gather", Shape{indices.size()}, std::move(out), track);
  if (track) {
    tape.record("gather", [x, y, indices]() mutable {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < indices.size(); ++i) dx[indices[i]] += dy[i];
    });
  }
  return y;
}

/// Row lookup: table[V, E] indexed by ids -> [ids.size(), E].
template <class T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  const std::size_t V = table.dim(0), E = table.dim(1);
  std::vector<T> out(ids.size() * E);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(V));
    std::copy(table.raw() + ids[i] * E, table.raw() + (ids[i] + 1) * E, out.data() + i * E);
  }
  bool track = detail::tracks(tape, table);
  auto y = detail::make_output(tape, "embedding", Shape{ids.size(), E}, std::move(out), track);
  if (track) {
    tape.record("embedding", [table, y, ids, E]() mutable {
      auto dy = y.grad();
      auto dt = table.mutable_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < E; ++j) dt[ids[i] * E + j] += dy[i * E + j];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batched broadcasting products. B is always the leading axis.

namespace detail {
template <class T>
void require_batched_vector(const char* op, const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() < 2 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.shape().back())
    throw DimensionError(std::string(op) + ": expected x[B,...,d] and v[B,d], got " + shape_str(x.shape()) +
                         " and " + shape_str(v.shape()));
}
}  // namespace detail

/// x[B, ..., d] * v[B, d] broadcast over the middle axes.
template <class T>
Tensor<T> mul_bcast(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_batched_vector("mul_bcast", x, v);
  const std::size_t B = x.dim(0), d = v.dim(1), mid = x.size() / (B * d);
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < mid; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = (b * mid + r) * d + j;
        out[i] = x[i] * v[b * d + j];
      }
  bool track = detail::tracks(tape, x, v);
  auto y = detail::make_output(tape, "mul_bcast", x.shape(), std::move(out), track);
  if (track) {
    tape.record("mul_bcast", [x, v, y, B, d, mid]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < mid; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = (b * mid + r) * d + j;
            if (x.requires_grad()) x.mutable_grad()[i] += dy[i] * v[b * d + j];
            if (v.requires_grad()) v.mutable_grad()[b * d + j] += dy[i] * x[i];
          }
    });
  }
  return y;
}

/// x[B, ..., d] + v[B, d] broadcast over the middle axes.
template <class T>
Tensor<T> add_bcast(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_batched_vector("add_bcast", x, v);
  const std::size_t B = x.dim(0), d = v.dim(1), mid = x.size() / (B * d);
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < mid; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = (b * mid + r) * d + j;
        out[i] = x[i] + v[b * d + j];
      }
  bool track = detail::tracks(tape, x, v);
  auto y = detail::make_output(tape, "add_bcast", x.shape(), std::move(out), track);
  if (track) {
    tape.record("add_bcast", [x, v, y, B, d, mid]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < mid; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = (b * mid + r) * d + j;
            if (x.requires_grad()) x.mutable_grad()[i] += dy[i];
            if (v.requires_grad()) v.mutable_grad()[b * d + j] += dy[i];
          }
    });
  }
  return y;
}

/// x[B, ...] + p[...], the same p added to every sample.
template <class T>
Tensor<T> add_shared(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& p) {
  if (x.rank() != p.rank() + 1 || !std::equal(p.shape().begin(), p.shape().end(), x.shape().begin() + 1))
    throw DimensionError("add_shared: " + shape_str(x.shape()) + " vs " + shape_str(p.shape()));
  const std::size_t B = x.dim(0), inner = p.size();
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < inner; ++i) out[b * inner + i] = x[b * inner + i] + p[i];
  bool track = detail::tracks(tape, x, p);
  auto y = detail::make_output(tape, "add_shared", x.shape(), std::move(out), track);
  if (track) {
    tape.record("add_shared", [x, p, y, B, inner]() mutable {
      auto dy = y.grad();
      if (x.requires_grad()) {
        auto dx = x.mutable_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (p.requires_grad()) {
        auto dp = p.mutable_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < inner; ++i) dp[i] += dy[b * inner + i];
      }
    });
  }
  return y;
}

/// x[B, ...] scaled by one scalar per sample, w[B].
template <class T>
Tensor<T> scale_rows(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 1 || w.dim(0) != x.dim(0))
    throw DimensionError("scale_rows: " + shape_str(x.shape()) + " vs weights " + shape_str(w.shape()));
  const std::size_t B = x.dim(0), inner = x.size() / B;
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < inner; ++i) out[b * inner + i] = w[b] * x[b * inner + i];
  bool track = detail::tracks(tape, x, w);
  auto y = detail::make_output(tape, "scale_rows", x.shape(), std::move(out), track);
  if (track) {
    tape.record("scale_rows", [x, w, y, B, inner]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b) {
        T acc = 0;
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = b * inner + i;
          if (x.requires_grad()) x.mutable_grad()[idx] += dy[idx] * w[b];
          acc += dy[idx] * x[idx];
        }
        if (w.requires_grad()) w.mutable_grad()[b] += acc;
      }
    });
  }
  return y;
}

/// y[b, r] = sum_c A[b, r, c] * v[b, c]
template <class T>
Tensor<T> batched_matvec(Tape<T>& tape, const Tensor<T>& A, const Tensor<T>& v) {
  if (A.rank() != 3 || v.rank() != 2 || A.dim(0) != v.dim(0) || A.dim(2) != v.dim(1))
    throw DimensionError("batched_matvec: " + shape_str(A.shape()) + " vs " + shape_str(v.shape()));
  const std::size_t B = A.dim(0), R = A.dim(1), C = A.dim(2);
  std::vector<T> out(B * R, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r) {
      T acc = 0;
      for (std::size_t c = 0; c < C; ++c) acc += A[(b * R + r) * C + c] * v[b * C + c];
      out[b * R + r] = acc;
    }
  bool track = detail::tracks(tape, A, v);
  auto y = detail::make_output(tape, "batched_matvec", Shape{B, R}, std::move(out), track);
  if (track) {
    tape.record("batched_matvec", [A, v, y, B, R, C]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r) {
          const T g = dy[b * R + r];
          for (std::size_t c = 0; c < C; ++c) {
            if (A.requires_grad()) A.mutable_grad()[(b * R + r) * C + c] += g * v[b * C + c];
            if (v.requires_grad()) v.mutable_grad()[b * C + c] += g * A[(b * R + r) * C + c];
          }
        }
    });
  }
  return y;
}

/// y[b, c] = sum_r u[b, r] * A[b, r, c]
template <class T>
Tensor<T> batched_vecmat(Tape<T>& tape, const Tensor<T>& u, const Tensor<T>& A) {
  if (A.rank() != 3 || u.rank() != 2 || A.dim(0) != u.dim(0) || A.dim(1) != u.dim(1))
    throw DimensionError("batched_vecmat: " + shape_str(u.shape()) + " vs " + shape_str(A.shape()));
  const std::size_t B = A.dim(0), R = A.dim(1), C = A.dim(2);
  std::vector<T> out(B * C, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r) {
      const T w = u[b * R + r];
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += w * A[(b * R + r) * C + c];
    }
  bool track = detail::tracks(tape, u, A);
  auto y = detail::make_output(tape, "batched_vecmat", Shape{B, C}, std::move(out), track);
  if (track) {
    tape.record("batched_vecmat", [u, A, y, B, R, C]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r) {
          T acc = 0;
          for (std::size_t c = 0; c < C; ++c) {
            acc += dy[b * C + c] * A[(b * R + r) * C + c];
            if (A.requires_grad()) A.mutable_grad()[(b * R + r) * C + c] += dy[b * C + c] * u[b * R + r];
          }
          if (u.requires_grad()) u.mutable_grad()[b * R + r] += acc;
        }
    });
  }
  return y;
}

/// y[b, r, c] = u[b, r] * v[b, c]
template <class T>
Tensor<T> batched_outer(Tape<T>& tape, const Tensor<T>& u, const Tensor<T>& v) {
  if (u.rank() != 2 || v.rank() != 2 || u.dim(0) != v.dim(0))
    throw DimensionError("batched_outer: " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  const std::size_t B = u.dim(0), R = u.dim(1), C = v.dim(1);
  std::vector<T> out(B * R * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out[(b * R + r) * C + c] = u[b * R + r] * v[b * C + c];
  bool track = detail::tracks(tape, u, v);
  auto y = detail::make_output(tape, "batched_outer", Shape{B, R, C}, std::move(out), track);
  if (track) {
    tape.record("batched_outer", [u, v, y, B, R, C]() mutable {
      auto dy = y.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r) {
          T acc = 0;
          for (std::size_t c = 0; c < C; ++c) {
            const T g = dy[(b * R + r) * C + c];
            acc += g * v[b * C + c];
            if (v.requires_grad()) v.mutable_grad()[b * C + c] += g * u[b * R + r];
          }
          if (u.requires_grad()) u.mutable_grad()[b * R + r] += acc;
        }
    });
  }
  return y;
}

}  // namespace rgin
