#pragma once

#include <string>
#include <vector>

#include "rgin/backbone.hpp"

namespace rgin {

/// Adaptive feature selection: a text-conditioned convex combination of the
/// projected multi-scale maps.
template <class T>
struct Afs {
  Linear<T> predictor;  // n -> number of scales

  Afs() = default;
  Afs(Init& init, std::size_t text_dim, std::size_t scales = 3)
      : predictor(init, text_dim, scales, true, 1.0 / std::sqrt(static_cast<double>(text_dim))) {}

  /// beta[B, k] = softmax(f_t W + b); each row sums to one.
  Tensor<T> predict_weights(Tape<T>& tape, const Tensor<T>& text) const {
    return softmax(tape, predictor(tape, text), 1);
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    predictor.register_params(ps, prefix + ".predictor");
  }
};

/// F_v = sum_i beta_i F_vi, per sample. maps: k tensors [B, s, s, m]; beta: [B, k].
template <class T>
Tensor<T> afs_fuse(Tape<T>& tape, const std::vector<Tensor<T>>& maps, const Tensor<T>& beta) {
  if (maps.empty() || beta.rank() != 2 || beta.dim(1) != maps.size() || beta.dim(0) != maps[0].dim(0))
    throw DimensionError("afs_fuse: weights " + shape_str(beta.shape()) + " do not match " +
                         std::to_string(maps.size()) + " maps");
  const std::size_t B = beta.dim(0), k = maps.size();
  Tensor<T> out;
  for (std::size_t i = 0; i < k; ++i) {
    if (maps[i].shape() != maps[0].shape())
      throw DimensionError("afs_fuse: map shapes differ: " + shape_str(maps[0].shape()) + " vs " +
                           shape_str(maps[i].shape()));
    std::vector<std::size_t> idx(B);
    for (std::size_t b = 0; b < B; ++b) idx[b] = b * k + i;
    auto term = scale_rows(tape, maps[i], gather(tape, beta, idx));
    out = out.defined() ? add(tape, out, term) : term;
  }
  return out;
}

}  // namespace rgin
