#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgin/geometry.hpp"
#include "rgin/nn.hpp"

namespace rgin {

/// Box-shape prior in grid-cell units.
struct AnchorPrior {
  double pw = 1, ph = 1;
  bool operator==(const AnchorPrior&) const = default;
};

inline constexpr std::size_t kBoxFields = 5;  // t_x, t_y, t_w, t_h, t_c
inline constexpr double kMaxLogSize = 8.0;
/// Sigma-space x/y targets are clamped to [eps, 1 - eps] before logit inversion.
inline constexpr double kSigmaTargetEps = 1e-6;

struct DecodedBox {
  Box box;                // grid units
  double confidence = 0;  // sigmoid(t_c)
  double logit = 0;       // t_c
  std::size_t row = 0, col = 0, prior = 0;
};

inline double sigmoid(double x) { return detail::stable_sigmoid(x); }
inline double logit(double p) { return std::log(p / (1 - p)); }

/// b_x = sig(t_x) + c_x, b_y = sig(t_y) + c_y, b_w = p_w e^{t_w}, b_h = p_h e^{t_h},
/// confidence = sig(t_c). |t_w|, |t_h| are clamped to kMaxLogSize.
inline DecodedBox decode_entry(std::span<const double, kBoxFields> t, std::size_t row, std::size_t col,
                               std::size_t prior_index, const AnchorPrior& prior) {
  for (double v : t)
    if (!std::isfinite(v)) throw std::invalid_argument("decode: non-finite logit");
  double tw = t[2], th = t[3];
  if (std::abs(tw) > kMaxLogSize || std::abs(th) > kMaxLogSize) {
    std::clog << "[warn] decode: size logit clamped to +-" << kMaxLogSize << '\n';
    tw = std::clamp(tw, -kMaxLogSize, kMaxLogSize);
    th = std::clamp(th, -kMaxLogSize, kMaxLogSize);
  }
  DecodedBox d;
  d.box = {sigmoid(t[0]) + static_cast<double>(col), sigmoid(t[1]) + static_cast<double>(row),
           prior.pw * std::exp(tw), prior.ph * std::exp(th)};
  d.logit = t[4];
  d.confidence = sigmoid(t[4]);
  d.row = row;
  d.col = col;
  d.prior = prior_index;
  return d;
}

/// Decodes one sample's raw head output laid out [s, s, N*5].
template <class T>
std::vector<DecodedBox> decode(std::span<const T> raw, std::size_t grid, const std::vector<AnchorPrior>& priors) {
  const std::size_t N = priors.size();
  if (raw.size() != grid * grid * N * kBoxFields)
    throw DimensionError("decode: raw output length does not match s*s*N*5");
  std::vector<DecodedBox> out;
  out.reserve(grid * grid * N);
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c)
      for (std::size_t q = 0; q < N; ++q) {
        std::array<double, kBoxFields> t;
        const std::size_t base = ((r * grid + c) * N + q) * kBoxFields;
        for (std::size_t f = 0; f < kBoxFields; ++f) t[f] = static_cast<double>(raw[base + f]);
        out.push_back(decode_entry(std::span<const double, kBoxFields>(t), r, c, q, priors[q]));
      }
  return out;
}

/// Highest-confidence box. Ranking uses t_c (sigma is monotone) so saturated
/// confidences still order correctly; ties go to the smallest (row, col, prior).
inline DecodedBox select_prediction(const std::vector<DecodedBox>& boxes) {
  if (boxes.empty()) throw std::invalid_argument("select_prediction: no boxes");
  const DecodedBox* best = &boxes[0];
  auto key = [](const DecodedBox& b) { return std::array<std::size_t, 3>{b.row, b.col, b.prior}; };
  for (const auto& b : boxes) {
    if (b.logit > best->logit || (b.logit == best->logit && key(b) < key(*best))) best = &b;
  }
  return *best;
}

/// Responsibility mask and regression targets for one ground-truth box.
struct TargetAssignment {
  std::size_t grid = 0, priors = 0;
  std::vector<std::uint8_t> positive;              // [s*s*N]
  std::vector<std::array<double, 2>> sigma_xy;     // sigma-space x/y targets per entry
  std::vector<std::array<double, 4>> encoded;      // t* = (t_x, t_y, t_w, t_h) per entry
  std::size_t best = 0;                            // forced-positive entry index

  std::size_t index(std::size_t row, std::size_t col, std::size_t q) const {
    return (row * grid + col) * priors + q;
  }
  std::size_t num_positive() const {
    return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), std::uint8_t{1}));
  }
};

/// Prior-shape boxes centered at every cell are compared with `gt` (grid units);
/// IoU > 0.5 marks an entry positive. The best prior of the cell holding the gt
/// center is always positive: it is the only cell whose decoded center can land
/// on the gt center. Targets invert the decoding equations.
inline TargetAssignment assign_targets(const Box& gt, const std::vector<AnchorPrior>& priors, std::size_t grid) {
  require_proper(gt, "assign_targets");
  const double s = static_cast<double>(grid);
  if (priors.empty()) throw std::invalid_argument("assign_targets: no priors");
  if (!(gt.cx >= 0 && gt.cy >= 0 && gt.cx < s && gt.cy < s))
    throw std::invalid_argument("assign_targets: ground-truth center outside the grid");
  TargetAssignment a;
  a.grid = grid;
  a.priors = priors.size();
  const std::size_t total = grid * grid * priors.size();
  a.positive.assign(total, 0);
  a.sigma_xy.resize(total);
  a.encoded.resize(total);
  const std::size_t home_r = static_cast<std::size_t>(gt.cy), home_c = static_cast<std::size_t>(gt.cx);
  double best_iou = -1;
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c)
      for (std::size_t q = 0; q < priors.size(); ++q) {
        const std::size_t i = a.index(r, c, q);
        const double placed = iou({c + 0.5, r + 0.5, priors[q].pw, priors[q].ph}, gt);
        if (placed > 0.5) a.positive[i] = 1;
        if (r == home_r && c == home_c && placed > best_iou) {
          best_iou = placed;
          a.best = i;
        }
        const double sx = std::clamp(gt.cx - static_cast<double>(c), kSigmaTargetEps, 1 - kSigmaTargetEps);
        const double sy = std::clamp(gt.cy - static_cast<double>(r), kSigmaTargetEps, 1 - kSigmaTargetEps);
        a.sigma_xy[i] = {sx, sy};
        a.encoded[i] = {logit(sx), logit(sy), std::log(gt.w / priors[q].pw), std::log(gt.h / priors[q].ph)};
      }
  a.positive[a.best] = 1;
  return a;
}

/// How per-entry losses are pooled within a sample. Batches are always averaged.
enum class Reduction { mean, sum };

inline Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw std::invalid_argument("unknown loss reduction '" + s + "' (mean or sum)");
}

inline std::string reduction_name(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

struct DetectionLossParts {
  double box = 0;
  double confidence = 0;
};

/// Detection loss over raw[B, s, s, N*5].
///
/// Box term, on positive entries only: BCE on (t_x, t_y) against sigma-space
/// targets plus smooth-L1 on (t_w, t_h), summed over the four coordinates and
/// averaged over positives. Confidence term: BCE of t_c against the binary mask,
/// averaged over every entry (negatives scaled by `negative_weight`).
/// With Reduction::sum both terms are summed over the entries of a sample
/// instead, then averaged over the batch.
template <class T>
Tensor<T> detection_loss(Tape<T>& tape, const Tensor<T>& raw, const std::vector<TargetAssignment>& targets,
                         double negative_weight = 1.0, DetectionLossParts* parts = nullptr,
                         Reduction reduction = Reduction::mean) {
  if (raw.rank() != 4 || targets.size() != raw.dim(0))
    throw DimensionError("detection_loss: raw " + shape_str(raw.shape()) + " vs " +
                         std::to_string(targets.size()) + " assignments");
  const std::size_t B = raw.dim(0), grid = raw.dim(1);
  const std::size_t N = targets[0].priors;
  if (raw.dim(2) != grid || raw.dim(3) != N * kBoxFields)
    throw DimensionError("detection_loss: raw output is not [B,s,s,N*5]");
  const std::size_t per_sample = grid * grid * N;
  std::vector<std::size_t> xy_idx, wh_idx, conf_idx;
  std::vector<T> xy_t, wh_t, conf_t, conf_w;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& a = targets[b];
    if (a.grid != grid || a.priors != N) throw DimensionError("detection_loss: assignment grid mismatch");
    for (std::size_t e = 0; e < per_sample; ++e) {
      const std::size_t base = (b * per_sample + e) * kBoxFields;
      const bool pos = a.positive[e] != 0;
      conf_idx.push_back(base + 4);
      conf_t.push_back(pos ? T(1) : T(0));
      conf_w.push_back(pos ? T(1) : static_cast<T>(negative_weight));
      if (!pos) continue;
      xy_idx.insert(xy_idx.end(), {base, base + 1});
      xy_t.insert(xy_t.end(), {static_cast<T>(a.sigma_xy[e][0]), static_cast<T>(a.sigma_xy[e][1])});
      wh_idx.insert(wh_idx.end(), {base + 2, base + 3});
      wh_t.insert(wh_t.end(), {static_cast<T>(a.encoded[e][2]), static_cast<T>(a.encoded[e][3])});
    }
  }
  if (xy_idx.empty()) throw std::invalid_argument("detection_loss: assignment has no positive entry");
  const std::size_t P = xy_idx.size() / 2;
  auto xy = gather(tape, raw, xy_idx);
  auto wh = gather(tape, raw, wh_idx);
  auto conf = gather(tape, raw, conf_idx);
  Tensor<T> xy_target({2 * P}, std::move(xy_t)), wh_target({2 * P}, std::move(wh_t));
  Tensor<T> conf_target({conf_idx.size()}, std::move(conf_t));
  // Means over 2P values times 2 == per-positive coordinate sums averaged over positives.
  T box_scale = 2, conf_scale = 1;
  if (reduction == Reduction::sum) {
    box_scale = static_cast<T>(2 * P) / static_cast<T>(B);
    conf_scale = static_cast<T>(per_sample);
  }
  auto box = add(tape, affine(tape, bce_with_logits(tape, xy, xy_target), box_scale),
                 affine(tape, smooth_l1(tape, wh, wh_target), box_scale));
  auto confidence = bce_with_logits(tape, conf, conf_target, conf_w);
  if (reduction == Reduction::sum) confidence = affine(tape, confidence, conf_scale);
  if (parts) {
    parts->box = static_cast<double>(box.item());
    parts->confidence = static_cast<double>(confidence.item());
  }
  return add(tape, box, confidence);
}

/// Attention supervision: BCE between each head's collect logits [B, s*s] and the
/// shared placement-IoU targets, averaged over cells and samples, summed over heads.
template <class T>
Tensor<T> attention_loss(Tape<T>& tape, const std::vector<Tensor<T>>& head_logits,
                         const std::vector<std::vector<double>>& targets, std::size_t expected_heads,
                         Reduction reduction = Reduction::mean) {
  if (head_logits.size() != expected_heads)
    throw std::invalid_argument("attention_loss: expected " + std::to_string(expected_heads) + " heads, got " +
                                std::to_string(head_logits.size()));
  if (head_logits.empty()) throw std::invalid_argument("attention_loss: no heads");
  const std::size_t B = head_logits[0].dim(0), S = head_logits[0].dim(1);
  if (targets.size() != B) throw DimensionError("attention_loss: target batch mismatch");
  std::vector<T> flat;
  flat.reserve(B * S);
  for (const auto& t : targets) {
    if (t.size() != S) throw DimensionError("attention_loss: target grid does not match logits");
    for (double v : t) flat.push_back(static_cast<T>(v));
  }
  Tensor<T> target({B, S}, std::move(flat));
  Tensor<T> total;
  for (const auto& logits : head_logits) {
    auto l = bce_with_logits(tape, logits, target);
    if (reduction == Reduction::sum) l = affine(tape, l, static_cast<T>(S));
    total = total.defined() ? add(tape, total, l) : l;
  }
  return total;
}

/// det + lambda * att
template <class T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& det, const Tensor<T>& att, double lambda) {
  if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be non-negative");
  if (!att.defined() || lambda == 0) return det;
  return add(tape, det, affine(tape, att, static_cast<T>(lambda)));
}

/// Multimodal fusion and the linear prediction layer.
template <class T>
struct GroundingHead {
  Linear<T> visual;   // m -> d, no bias
  Linear<T> textual;  // n -> d, no bias
  Linear<T> predict;  // d -> N*5 with bias (a 1x1 linear conv)
  T slope = T(kLeakySlope);

  GroundingHead() = default;
  GroundingHead(Init& init, std::size_t m, std::size_t n, std::size_t d, std::size_t priors, T slope_)
      : visual(init, m, d, false),
        textual(init, n, d, false, 1.0 / std::sqrt(static_cast<double>(n))),
        predict(init, d, priors * kBoxFields, true, 1.0 / std::sqrt(static_cast<double>(d))),
        slope(slope_) {}

  /// f_m^i = act(f_v^i W_v) * act(f_t W_t) -> [B, s, s, d]
  Tensor<T> fuse(Tape<T>& tape, const Tensor<T>& fv, const Tensor<T>& text) const {
    auto v = leaky_relu(tape, visual(tape, fv), slope);
    auto t = leaky_relu(tape, textual(tape, text), slope);
    return mul_bcast(tape, v, t);
  }

  Tensor<T> predict_raw(Tape<T>& tape, const Tensor<T>& fm) const { return predict(tape, fm); }

  void register_params(ParamSet<T>& ps, const std::string& prefix) const {
    visual.register_params(ps, prefix + ".visual");
    textual.register_params(ps, prefix + ".textual");
    predict.register_params(ps, prefix + ".predict");
  }
};

}  // namespace rgin
