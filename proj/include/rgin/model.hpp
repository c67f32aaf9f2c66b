#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rgin/afs.hpp"
#include "rgin/backbone.hpp"
#include "rgin/garan.hpp"
#include "rgin/head.hpp"
#include "rgin/text_encoder.hpp"

namespace rgin {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t vocab_size = 32;
  std::size_t embed_dim = 64;
  std::size_t text_dim = 128;   // n
  std::size_t fusion_dim = 128; // d
  std::size_t att_dim = 64;     // d_a
  std::size_t heads = 2;        // k
  std::vector<AnchorPrior> priors{{0.8, 0.8}, {1.2, 1.2}, {1.8, 1.8}};
  double slope = kLeakySlope;
  double lambda = 0.05;
  double negative_weight = 1.0;
  Reduction reduction = Reduction::sum;
  bool enable_afs = true;
  bool enable_garan = true;
  bool enable_att_loss = true;
  bool freeze_backbone = false;
  bool supervise_diffuse = false;
  bool position_embedding = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t grid() const { return backbone.grid(); }
};

/// One mini-batch as the model consumes it.
template <class T>
struct Batch {
  Tensor<T> images;                      // [B, H, W, 3] in [0, 1]
  std::vector<std::vector<int>> tokens;  // per-sample token ids
  std::vector<Box> boxes;                // ground truth, grid units (may be empty at inference)
};

template <class T>
struct ForwardResult {
  Tensor<T> raw;                          // [B, s, s, N*5]
  Tensor<T> text;                         // [B, n]
  Tensor<T> beta;                         // [B, 3] when AFS is enabled
  std::vector<AttentionState<T>> attention;
};

template <class T>
struct LossBreakdown {
  Tensor<T> total, detection, attention;
  DetectionLossParts detection_parts;
};

/// Full grounding network: text encoder, backbone with projections, optional AFS,
/// optional GARAN, multimodal fusion and the box head.
template <class T>
class RealGin {
 public:
  RealGin(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Init init(seed);
    const T slope = static_cast<T>(cfg.slope);
    BackboneConfig bc = cfg.backbone;
    bc.slope = cfg.slope;
    text_ = TextEncoder<T>(init, cfg.vocab_size, cfg.embed_dim, cfg.text_dim);
    backbone_ = Backbone<T>(init, bc);
    afs_ = Afs<T>(init, cfg.text_dim, 3);
    const std::size_t s = cfg.grid(), m = bc.fusion_channels;
    position_ = init.uniform<T>({s, s, m}, 0.1);
    garan_ = Garan<T>(init, m, cfg.text_dim, cfg.att_dim, cfg.heads, slope);
    head_ = GroundingHead<T>(init, m, cfg.text_dim, cfg.fusion_dim, cfg.priors.size(), slope);
    for_each_norm([&](BatchNorm<T>& bn) {
      bn.stats.eps = cfg.bn_eps;
      bn.stats.momentum = cfg.bn_momentum;
    });
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  ForwardResult<T> forward(Tape<T>& tape, const Batch<T>& batch) {
    ForwardResult<T> r;
    r.text = text_.encode(tape, batch.tokens);
    auto feats = backbone_.extract(tape, batch.images, mode_);
    auto proj = backbone_.project(tape, feats, mode_);
    Tensor<T> fv;
    if (cfg_.enable_afs) {
      r.beta = afs_.predict_weights(tape, r.text);
      fv = afs_fuse(tape, proj.as_list(), r.beta);
    } else {
      fv = proj.p3;
    }
    if (cfg_.position_embedding) fv = add_shared(tape, fv, position_);
    if (cfg_.enable_garan) {
      auto g = garan_.forward(tape, fv, r.text, mode_);
      fv = g.features;
      r.attention = std::move(g.states);
    }
    r.raw = head_.predict_raw(tape, head_.fuse(tape, fv, r.text));
    return r;
  }

  LossBreakdown<T> loss(Tape<T>& tape, const ForwardResult<T>& r, const Batch<T>& batch) const {
    const std::size_t s = cfg_.grid();
    std::vector<TargetAssignment> assignments;
    for (const auto& b : batch.boxes) assignments.push_back(assign_targets(b, cfg_.priors, s));
    LossBreakdown<T> out;
    out.detection = detection_loss(tape, r.raw, assignments, cfg_.negative_weight, &out.detection_parts,
                                   cfg_.reduction);
    if (!r.attention.empty()) {
      std::vector<std::vector<double>> targets;
      for (const auto& b : batch.boxes) targets.push_back(attention_targets(b, s));
      std::vector<Tensor<T>> logits;
      for (const auto& st : r.attention) logits.push_back(st.collect_logits);
      if (cfg_.supervise_diffuse)
        for (const auto& st : r.attention) logits.push_back(st.diffuse_logits);
      out.attention = attention_loss(tape, logits, targets, logits.size(), cfg_.reduction);
    }
    const double lambda = cfg_.enable_att_loss ? cfg_.lambda : 0.0;
    out.total = total_loss(tape, out.detection, out.attention, lambda);
    return out;
  }

  /// Per-sample best box in grid units.
  std::vector<DecodedBox> predict(const ForwardResult<T>& r) const {
    const std::size_t B = r.raw.dim(0), per = r.raw.size() / B;
    std::vector<DecodedBox> out;
    for (std::size_t b = 0; b < B; ++b) {
      auto raw = r.raw.data().subspan(b * per, per);
      out.push_back(select_prediction(decode<T>(raw, cfg_.grid(), cfg_.priors)));
    }
    return out;
  }

  /// Every tensor and buffer, for checkpointing.
  ParamSet<T> state() {
    ParamSet<T> ps;
    text_.register_params(ps, "text");
    backbone_.register_params(ps, "backbone");
    afs_.register_params(ps, "afs");
    ps.add("position", position_);
    garan_.register_params(ps, "garan");
    head_.register_params(ps, "head");
    return ps;
  }

  /// Tensors the optimizer updates under the current configuration.
  ParamSet<T> trainable() {
    ParamSet<T> ps;
    text_.register_params(ps, "text");
    if (!cfg_.freeze_backbone) backbone_.register_extract_params(ps, "backbone");
    backbone_.register_projection_params(ps, "backbone");
    if (cfg_.enable_afs) afs_.register_params(ps, "afs");
    if (cfg_.position_embedding) ps.add("position", position_);
    if (cfg_.enable_garan) garan_.register_params(ps, "garan");
    head_.register_params(ps, "head");
    return ps;
  }

  TextEncoder<T>& text_encoder() { return text_; }
  Backbone<T>& backbone() { return backbone_; }
  Afs<T>& afs() { return afs_; }
  Garan<T>& garan() { return garan_; }
  GroundingHead<T>& head() { return head_; }

 private:
  template <class F>
  void for_each_norm(F&& f) {
    for (auto* b : {&backbone_.stem, &backbone_.block1, &backbone_.block2, &backbone_.block3,
                    &backbone_.proj1, &backbone_.proj2, &backbone_.proj3, &garan_.output})
      f(b->norm);
  }

  ModelConfig cfg_;
  Mode mode_ = Mode::Train;
  TextEncoder<T> text_;
  Backbone<T> backbone_;
  Afs<T> afs_;
  Tensor<T> position_;
  Garan<T> garan_;
  GroundingHead<T> head_;
};

}  // namespace rgin
