#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rgin/nn.hpp"

namespace rgin {

/// Projections of one attention head. Visual side maps the head's m/k channels,
/// text side maps the full textual feature; both to the attention dimension.
template <class T>
struct GaranHead {
  Linear<T> collect_visual, collect_text;
  Linear<T> diffuse_visual, diffuse_text;

  GaranHead() = default;
  GaranHead(Init& init, std::size_t channels, std::size_t text_dim, std::size_t att_dim) {
    // Scaled so the initial logits (dot products of att_dim activations) stay O(1).
    const double vb = 1.0 / std::sqrt(static_cast<double>(channels));
    const double tb = 1.0 / std::sqrt(static_cast<double>(text_dim));
    collect_visual = Linear<T>(init, channels, att_dim, false, vb);
    collect_text = Linear<T>(init, text_dim, att_dim, false, tb);
    diffuse_visual = Linear<T>(init, channels, att_dim, false, vb);
    diffuse_text = Linear<T>(init, text_dim, att_dim, false, tb);
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    collect_visual.register_params(ps, prefix + ".collect_visual");
    collect_text.register_params(ps, prefix + ".collect_text");
    diffuse_visual.register_params(ps, prefix + ".diffuse_visual");
    diffuse_text.register_params(ps, prefix + ".diffuse_text");
  }
};

/// Everything one head computed for a batch. Grids are [B, s*s] in row-major cell order.
template <class T>
struct AttentionState {
  Tensor<T> collect_logits;
  Tensor<T> collect_weights;
  Tensor<T> diffuse_logits;
  Tensor<T> diffuse_gates;
  Tensor<T> attention_feature;  // [B, m/k]
  Tensor<T> diffused;           // [B, s, s, m/k]
};

/// e[b, i] = act(f_v^i Wv) . act(f_t Wt) for a head's features [B, s, s, c].
template <class T>
Tensor<T> attention_logits(Tape<T>& tape, const Tensor<T>& head_features, const Tensor<T>& text,
                           const Linear<T>& visual, const Linear<T>& textual, T slope) {
  const std::size_t B = head_features.dim(0), S = head_features.dim(1) * head_features.dim(2);
  auto fv = reshape(tape, head_features, {B, S, head_features.dim(3)});
  auto pv = leaky_relu(tape, visual(tape, fv), slope);
  auto pt = leaky_relu(tape, textual(tape, text), slope);
  return batched_matvec(tape, pv, pt);
}

template <class T>
Tensor<T> collect_logits(Tape<T>& tape, const Tensor<T>& head_features, const Tensor<T>& text,
                         const GaranHead<T>& head, T slope) {
  return attention_logits(tape, head_features, text, head.collect_visual, head.collect_text, slope);
}

/// f_att[b] = sum_i a[b, i] f_v^i. `weights` must be normalized per sample.
template <class T>
Tensor<T> collect(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& head_features) {
  const std::size_t B = head_features.dim(0), S = head_features.dim(1) * head_features.dim(2);
  if (weights.rank() != 2 || weights.dim(0) != B || weights.dim(1) != S)
    throw DimensionError("collect: weights " + shape_str(weights.shape()) + " vs features " +
                         shape_str(head_features.shape()));
  if (tape.check_finite()) {
    for (std::size_t b = 0; b < B; ++b) {
      double total = 0;
      for (std::size_t i = 0; i < S; ++i) total += weights[b * S + i];
      if (std::abs(total - 1.0) > 1e-4) throw std::invalid_argument("collect: attention weights are not normalized");
    }
  }
  auto fv = reshape(tape, head_features, {B, S, head_features.dim(3)});
  return batched_vecmat(tape, weights, fv);
}

/// f_a^i = alpha^i f_att, laid out as [B, s, s, c].
template <class T>
Tensor<T> diffuse(Tape<T>& tape, const Tensor<T>& gates, const Tensor<T>& feature, std::size_t grid) {
  if (gates.rank() != 2 || gates.dim(1) != grid * grid)
    throw DimensionError("diffuse: gates " + shape_str(gates.shape()) + " do not cover a " +
                         std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  auto out = batched_outer(tape, gates, feature);
  return reshape(tape, out, {gates.dim(0), grid, grid, feature.dim(1)});
}

/// Global attentive reasoning block.
///
/// Each head collects a text-relevant summary of its channel split (softmax over all
/// cells), diffuses it back through sigmoid gates, and the recombined map is added to
/// the input before a 1x1 conv + batch norm + leaky ReLU.
template <class T>
struct Garan {
  std::vector<GaranHead<T>> heads;
  ConvBlock<T> output;
  T slope = T(kLeakySlope);

  Garan() = default;
  Garan(Init& init, std::size_t channels, std::size_t text_dim, std::size_t att_dim, std::size_t k,
        T slope_ = T(kLeakySlope))
      : slope(slope_) {
    if (k == 0 || channels % k != 0)
      throw DimensionError("garan: " + std::to_string(channels) + " channels not divisible by " +
                           std::to_string(k) + " heads");
    for (std::size_t j = 0; j < k; ++j) heads.emplace_back(init, channels / k, text_dim, att_dim);
    output = ConvBlock<T>(init, 1, channels, channels, 1, slope_);
  }

  struct Result {
    Tensor<T> features;  // F_v'
    std::vector<AttentionState<T>> states;
  };

  AttentionState<T> run_head(Tape<T>& tape, const GaranHead<T>& head, const Tensor<T>& part,
                             const Tensor<T>& text) const {
    const std::size_t grid = part.dim(1);
    AttentionState<T> st;
    st.collect_logits = collect_logits(tape, part, text, head, slope);
    st.collect_weights = softmax(tape, st.collect_logits, 1);
    st.attention_feature = collect(tape, st.collect_weights, part);
    st.diffuse_logits = attention_logits(tape, part, text, head.diffuse_visual, head.diffuse_text, slope);
    st.diffuse_gates = sigmoid(tape, st.diffuse_logits);
    st.diffused = diffuse(tape, st.diffuse_gates, st.attention_feature, grid);
    return st;
  }

  Result forward(Tape<T>& tape, const Tensor<T>& fv, const Tensor<T>& text, Mode mode) {
    if (fv.rank() != 4 || fv.dim(1) != fv.dim(2))
      throw DimensionError("garan: expected square feature map [B,s,s,m], got " + shape_str(fv.shape()));
    auto parts = split_channels(tape, fv, heads.size());
    Result res;
    std::vector<Tensor<T>> diffused;
    for (std::size_t j = 0; j < heads.size(); ++j) {
      res.states.push_back(run_head(tape, heads[j], parts[j], text));
      diffused.push_back(res.states.back().diffused);
    }
    auto fatt = concat_channels(tape, diffused);
    res.features = output(tape, add(tape, fv, fatt), mode);
    return res;
  }

  /// Dedicated unsplit path; only valid with one head.
  Result forward_single_head(Tape<T>& tape, const Tensor<T>& fv, const Tensor<T>& text, Mode mode) {
    if (heads.size() != 1) throw std::logic_error("garan: single-head path requires k == 1");
    Result res;
    res.states.push_back(run_head(tape, heads[0], fv, text));
    res.features = output(tape, add(tape, fv, res.states[0].diffused), mode);
    return res;
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    for (std::size_t j = 0; j < heads.size(); ++j)
      heads[j].register_params(ps, prefix + ".head" + std::to_string(j));
    output.register_params(ps, prefix + ".output");
  }
};

}  // namespace rgin
