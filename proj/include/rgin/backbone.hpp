#pragma once

#include <stdexcept>
#include <string>

#include "rgin/nn.hpp"

namespace rgin {

struct BackboneConfig {
  std::size_t image_size = 96;  // must be divisible by 16
  std::size_t stem_channels = 8;
  std::size_t c1 = 16, c2 = 32, c3 = 64;
  std::size_t fusion_channels = 64;  // m
  double slope = kLeakySlope;

  std::size_t grid() const { return image_size / 16; }
};

/// Three maps at strides 4, 8, 16 (s1 = 4 s3, s2 = 2 s3).
template <class T>
struct MultiScaleFeatures {
  Tensor<T> f1, f2, f3;
};

/// All three maps brought to [B, s3, s3, m].
template <class T>
struct ProjectedFeatures {
  Tensor<T> p1, p2, p3;
  std::vector<Tensor<T>> as_list() const { return {p1, p2, p3}; }
};

/// Small trainable conv stack standing in for a pretrained detector backbone.
///
///   stem  : 3x3 s2, 3 -> stem      (H/2)
///   block1: 3x3 s2, stem -> c1     (H/4)  = F_v1
///   block2: 3x3 s2, c1 -> c2       (H/8)  = F_v2
///   block3: 3x3 s2, c2 -> c3       (H/16) = F_v3
///
/// Projections: F_v1 via 3x3 stride 4, F_v2 via 3x3 stride 2, F_v3 via 1x1 stride 1,
/// each to m channels with batch norm and leaky ReLU.
template <class T>
struct Backbone {
  BackboneConfig cfg;
  ConvBlock<T> stem, block1, block2, block3;
  ConvBlock<T> proj1, proj2, proj3;

  Backbone() = default;
  Backbone(Init& init, const BackboneConfig& c) : cfg(c) {
    if (c.image_size == 0 || c.image_size % 16 != 0)
      throw std::invalid_argument("backbone: image size must be a positive multiple of 16");
    const T s = static_cast<T>(c.slope);
    stem = ConvBlock<T>(init, 3, 3, c.stem_channels, 2, s);
    block1 = ConvBlock<T>(init, 3, c.stem_channels, c.c1, 2, s);
    block2 = ConvBlock<T>(init, 3, c.c1, c.c2, 2, s);
    block3 = ConvBlock<T>(init, 3, c.c2, c.c3, 2, s);
    proj1 = ConvBlock<T>(init, 3, c.c1, c.fusion_channels, 4, s);
    proj2 = ConvBlock<T>(init, 3, c.c2, c.fusion_channels, 2, s);
    proj3 = ConvBlock<T>(init, 1, c.c3, c.fusion_channels, 1, s);
  }

  MultiScaleFeatures<T> extract(Tape<T>& tape, const Tensor<T>& images, Mode mode) {
    if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
        images.dim(3) != 3)
      throw DimensionError("backbone: expected images [B," + std::to_string(cfg.image_size) + "," +
                           std::to_string(cfg.image_size) + ",3], got " + shape_str(images.shape()));
    auto x = stem(tape, images, mode);
    MultiScaleFeatures<T> f;
    f.f1 = block1(tape, x, mode);
    f.f2 = block2(tape, f.f1, mode);
    f.f3 = block3(tape, f.f2, mode);
    return f;
  }

  ProjectedFeatures<T> project(Tape<T>& tape, const MultiScaleFeatures<T>& f, Mode mode) {
    if (f.f1.shape().back() != cfg.c1 || f.f2.shape().back() != cfg.c2 || f.f3.shape().back() != cfg.c3)
      throw DimensionError("backbone: projection channel configuration mismatch");
    ProjectedFeatures<T> p;
    p.p1 = proj1(tape, f.f1, mode);
    p.p2 = proj2(tape, f.f2, mode);
    p.p3 = proj3(tape, f.f3, mode);
    return p;
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    register_extract_params(ps, prefix);
    register_projection_params(ps, prefix);
  }

  void register_extract_params(ParamSet<T>& ps, const std::string& prefix) {
    stem.register_params(ps, prefix + ".stem");
    block1.register_params(ps, prefix + ".block1");
    block2.register_params(ps, prefix + ".block2");
    block3.register_params(ps, prefix + ".block3");
  }

  void register_projection_params(ParamSet<T>& ps, const std::string& prefix) {
    proj1.register_params(ps, prefix + ".proj1");
    proj2.register_params(ps, prefix + ".proj2");
    proj3.register_params(ps, prefix + ".proj3");
  }
};

}  // namespace rgin
