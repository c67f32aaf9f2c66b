#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rgin/ops.hpp"

namespace rgin {

/// Named views of a model's trainable tensors and non-trainable buffers.
/// Tensors are handles, so the registry shares storage with the owning layers.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::pair<std::string, std::vector<T>*>> buffers;

  void add(std::string name, const Tensor<T>& t) { params.emplace_back(std::move(name), t); }
  void add_buffer(std::string name, std::vector<T>* b) { buffers.emplace_back(std::move(name), b); }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : params) out.push_back(t);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
  }
};

/// Deterministic parameter initializer. Values are drawn in double and cast, so a
/// float model and a double model built from the same seed hold the same numbers
/// up to rounding.
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  /// Kaiming-uniform bound for a leaky-ReLU follower.
  static double kaiming(std::size_t fan_in, double slope = kLeakySlope) {
    return std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], may be undefined

  Linear() = default;
  Linear(Init& init, std::size_t in, std::size_t out, bool with_bias, double bound = -1) {
    weight = init.uniform<T>({in, out}, bound > 0 ? bound : Init::kaiming(in));
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    auto y = matmul(tape, x, weight);
    return bias.defined() ? add_bias(tape, y, bias) : y;
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    if (bias.defined()) ps.add(prefix + ".bias", bias);
  }
};

template <class T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  BatchNormStats<T> stats;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor<T>::full({channels}, T(1), true)),
        beta(Tensor<T>::zeros({channels}, true)),
        stats(channels) {}

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    return batch_norm(tape, x, gamma, beta, stats, mode);
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add_buffer(prefix + ".running_mean", &stats.running_mean);
    ps.add_buffer(prefix + ".running_var", &stats.running_var);
  }
};

/// conv -> batch_norm -> leaky_relu. The conv carries no bias (the norm's beta replaces it).
template <class T>
struct ConvBlock {
  Tensor<T> kernel;  // [k, k, in, out]
  int stride = 1;
  Padding padding = Padding::Same;
  BatchNorm<T> norm;
  T slope = T(kLeakySlope);

  ConvBlock() = default;
  ConvBlock(Init& init, std::size_t k, std::size_t in, std::size_t out, int stride_, T slope_)
      : kernel(init.uniform<T>({k, k, in, out}, Init::kaiming(k * k * in, slope_))),
        stride(stride_),
        norm(out),
        slope(slope_) {}

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    auto y = conv2d(tape, x, kernel, stride, padding);
    return leaky_relu(tape, norm(tape, y, mode), slope);
  }

  std::size_t out_channels() const { return kernel.dim(3); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".kernel", kernel);
    norm.register_params(ps, prefix + ".bn");
  }
};

}  // namespace rgin
