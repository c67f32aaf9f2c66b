#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rgin/gradcheck.hpp"
#include "rgin/model.hpp"

// Finite-difference suites for every differentiable op and composite block, run
// in 64-bit. Shared by the `gradcheck` command, unit tests and acceptance checks.

namespace rgin::gradsuite {

using D = double;

struct Case {
  std::string name;
  std::function<GradCheckResult(GradCheckOptions)> run;
};

class Rand {
 public:
  explicit Rand(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [-scale, scale], keeping |x - k| >= margin for each kink k.
  Tensor<D> tensor(Shape shape, double scale = 1.0, bool grad = true, std::vector<double> kinks = {},
                   double margin = 0.02) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<D> v(shape_numel(shape));
    for (auto& x : v) {
      for (;;) {
        x = u(rng_);
        bool ok = true;
        for (double k : kinks) ok = ok && std::abs(x - k) >= margin;
        if (ok) break;
      }
    }
    return Tensor<D>(std::move(shape), std::move(v), grad);
  }
  Tensor<D> unit(Shape shape) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<D> v(shape_numel(shape));
    for (auto& x : v) x = u(rng_);
    return Tensor<D>(std::move(shape), std::move(v), false);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Scalar probe of a tensor-valued output: sum(y * w) with fixed random w.
inline Tensor<D> probe(Tape<D>& tape, const Tensor<D>& y, std::uint64_t seed = 99) {
  Rand r(seed);
  auto w = r.tensor(y.shape(), 1.0, false);
  return sum(tape, mul(tape, y, w));
}

/// Toy end-to-end configuration: s = 2, m = 8, k = 2, N = 1.
inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.backbone.image_size = 32;
  c.backbone.stem_channels = 4;
  c.backbone.c1 = 4;
  c.backbone.c2 = 6;
  c.backbone.c3 = 8;
  c.backbone.fusion_channels = 8;
  c.vocab_size = 10;
  c.embed_dim = 4;
  c.text_dim = 6;
  c.fusion_dim = 8;
  c.att_dim = 4;
  c.heads = 2;
  c.priors = {{0.9, 0.7}};
  return c;
}

inline Batch<D> toy_batch(const ModelConfig& c, std::uint64_t seed) {
  Rand r(seed);
  Batch<D> b;
  const std::size_t H = c.backbone.image_size;
  b.images = r.unit({2, H, H, 3});
  b.tokens = {{2, 5, 7}, {3, 4}};
  b.boxes = {Box{0.7, 1.3, 0.8, 0.6}, Box{1.6, 0.4, 1.1, 0.9}};
  return b;
}

inline std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<GradCheckResult(GradCheckOptions)> f) {
    cases.push_back({std::move(name), std::move(f)});
  };

  add_case("matmul", [](GradCheckOptions o) {
    Rand r(1);
    auto a = r.tensor({2, 3, 4}), b = r.tensor({4, 5});
    return check_gradients("matmul", {a, b}, [=](Tape<D>& t) { return probe(t, matmul(t, a, b)); }, o);
  });
  add_case("conv2d", [](GradCheckOptions o) {
    Rand r(2);
    auto x = r.tensor({2, 7, 7, 2}), k3 = r.tensor({3, 3, 2, 3}), k1 = r.tensor({1, 1, 2, 3});
    return check_gradients("conv2d", {x, k3, k1}, [=](Tape<D>& t) {
      auto same = probe(t, conv2d(t, x, k3, 1, Padding::Same), 3);
      auto valid = probe(t, conv2d(t, x, k3, 2, Padding::Valid), 4);
      auto strided = probe(t, conv2d(t, x, k3, 4, Padding::Same), 5);
      auto point = probe(t, conv2d(t, x, k1, 1, Padding::Same), 6);
      return add(t, add(t, same, valid), add(t, strided, point));
    }, o);
  });
  add_case("add_bias", [](GradCheckOptions o) {
    Rand r(3);
    auto x = r.tensor({3, 2, 4}), b = r.tensor({4});
    return check_gradients("add_bias", {x, b}, [=](Tape<D>& t) { return probe(t, add_bias(t, x, b)); }, o);
  });
  add_case("add", [](GradCheckOptions o) {
    Rand r(4);
    auto a = r.tensor({3, 4}), b = r.tensor({3, 4});
    return check_gradients("add", {a, b}, [=](Tape<D>& t) { return probe(t, add(t, a, b)); }, o);
  });
  add_case("sub", [](GradCheckOptions o) {
    Rand r(5);
    auto a = r.tensor({3, 4}), b = r.tensor({3, 4});
    return check_gradients("sub", {a, b}, [=](Tape<D>& t) { return probe(t, sub(t, a, b)); }, o);
  });
  add_case("mul", [](GradCheckOptions o) {
    Rand r(6);
    auto a = r.tensor({3, 4}), b = r.tensor({3, 4});
    // Fan-out: `a` feeds both operands, exercising gradient accumulation.
    return check_gradients("mul", {a, b}, [=](Tape<D>& t) {
      return probe(t, add(t, mul(t, a, b), mul(t, a, a)));
    }, o);
  });
  add_case("affine", [](GradCheckOptions o) {
    Rand r(7);
    auto a = r.tensor({5});
    return check_gradients("affine", {a}, [=](Tape<D>& t) { return probe(t, affine(t, a, -1.7, 0.3)); }, o);
  });
  add_case("sigmoid", [](GradCheckOptions o) {
    Rand r(8);
    auto a = r.tensor({6}, 4.0);
    return check_gradients("sigmoid", {a}, [=](Tape<D>& t) { return probe(t, sigmoid(t, a)); }, o);
  });
  add_case("tanh", [](GradCheckOptions o) {
    Rand r(9);
    auto a = r.tensor({6}, 2.0);
    return check_gradients("tanh", {a}, [=](Tape<D>& t) { return probe(t, rgin::tanh(t, a)); }, o);
  });
  add_case("leaky_relu", [](GradCheckOptions o) {
    Rand r(10);
    auto a = r.tensor({8}, 2.0, true, {0.0});
    return check_gradients("leaky_relu", {a}, [=](Tape<D>& t) { return probe(t, leaky_relu(t, a, 0.1)); }, o);
  });
  add_case("softmax", [](GradCheckOptions o) {
    Rand r(11);
    auto a = r.tensor({3, 4, 2}, 2.0);
    return check_gradients("softmax", {a}, [=](Tape<D>& t) {
      return add(t, probe(t, softmax(t, a, 1), 1), probe(t, softmax(t, a, 2), 2));
    }, o);
  });
  add_case("batch_norm", [](GradCheckOptions o) {
    Rand r(12);
    auto x = r.tensor({3, 2, 4}), g = r.tensor({4}), b = r.tensor({4});
    return check_gradients("batch_norm", {x, g, b}, [=](Tape<D>& t) {
      BatchNormStats<D> stats(4), fixed(4);
      fixed.running_mean = {0.3, -0.2, 0.1, 0.0};
      fixed.running_var = {0.5, 1.5, 2.0, 0.8};
      auto train = probe(t, batch_norm(t, x, g, b, stats, Mode::Train), 1);
      auto eval = probe(t, batch_norm(t, x, g, b, fixed, Mode::Eval), 2);
      return add(t, train, eval);
    }, o);
  });
  add_case("bce_with_logits", [](GradCheckOptions o) {
    Rand r(13);
    auto x = r.tensor({6}, 3.0);
    auto target = r.unit({6});
    std::vector<D> w{1, 0.5, 2, 1, 1, 0.25};
    return check_gradients("bce_with_logits", {x}, [=](Tape<D>& t) {
      return add(t, bce_with_logits(t, x, target), bce_with_logits(t, x, target, w));
    }, o);
  });
  add_case("smooth_l1", [](GradCheckOptions o) {
    Rand r(14);
    // Keep |p - target| away from the quadratic/linear switch at 1.
    auto p = r.tensor({8}, 3.0, true, {-1.0, 1.0}), target = Tensor<D>::zeros({8}, true);
    return check_gradients("smooth_l1", {p}, [=](Tape<D>& t) { return smooth_l1(t, p, target); }, o);
  });
  add_case("sum", [](GradCheckOptions o) {
    Rand r(15);
    auto a = r.tensor({2, 3});
    return check_gradients("sum", {a}, [=](Tape<D>& t) { return sum(t, mul(t, a, a)); }, o);
  });
  add_case("mean", [](GradCheckOptions o) {
    Rand r(16);
    auto a = r.tensor({2, 3});
    return check_gradients("mean", {a}, [=](Tape<D>& t) { return mean(t, mul(t, a, a)); }, o);
  });
  add_case("reshape", [](GradCheckOptions o) {
    Rand r(17);
    auto a = r.tensor({2, 6});
    return check_gradients("reshape", {a}, [=](Tape<D>& t) { return probe(t, reshape(t, a, {3, 4})); }, o);
  });
  add_case("split_channels", [](GradCheckOptions o) {
    Rand r(18);
    auto a = r.tensor({2, 2, 6});
    return check_gradients("split_channels", {a}, [=](Tape<D>& t) {
      auto parts = split_channels(t, a, 3);
      return add(t, probe(t, parts[0], 1), probe(t, parts[2], 2));
    }, o);
  });
  add_case("concat_channels", [](GradCheckOptions o) {
    Rand r(19);
    auto a = r.tensor({2, 3, 2}), b = r.tensor({2, 3, 4});
    return check_gradients("concat_channels", {a, b}, [=](Tape<D>& t) {
      return probe(t, concat_channels(t, std::vector<Tensor<D>>{a, b}));
    }, o);
  });
  add_case("gather", [](GradCheckOptions o) {
    Rand r(20);
    auto a = r.tensor({10});
    return check_gradients("gather", {a}, [=](Tape<D>& t) {
      return probe(t, gather(t, a, {3, 1, 3, 9}));
    }, o);
  });
  add_case("embedding", [](GradCheckOptions o) {
    Rand r(21);
    auto table = r.tensor({5, 3});
    return check_gradients("embedding", {table}, [=](Tape<D>& t) {
      return probe(t, embedding(t, table, {4, 0, 4, 2}));
    }, o);
  });
  add_case("mul_bcast", [](GradCheckOptions o) {
    Rand r(22);
    auto x = r.tensor({2, 3, 3, 4}), v = r.tensor({2, 4});
    return check_gradients("mul_bcast", {x, v}, [=](Tape<D>& t) { return probe(t, mul_bcast(t, x, v)); }, o);
  });
  add_case("add_bcast", [](GradCheckOptions o) {
    Rand r(23);
    auto x = r.tensor({2, 3, 4}), v = r.tensor({2, 4});
    return check_gradients("add_bcast", {x, v}, [=](Tape<D>& t) { return probe(t, add_bcast(t, x, v)); }, o);
  });
  add_case("add_shared", [](GradCheckOptions o) {
    Rand r(24);
    auto x = r.tensor({3, 2, 2}), p = r.tensor({2, 2});
    return check_gradients("add_shared", {x, p}, [=](Tape<D>& t) { return probe(t, add_shared(t, x, p)); }, o);
  });
  add_case("scale_rows", [](GradCheckOptions o) {
    Rand r(25);
    auto x = r.tensor({3, 2, 2}), w = r.tensor({3});
    return check_gradients("scale_rows", {x, w}, [=](Tape<D>& t) { return probe(t, scale_rows(t, x, w)); }, o);
  });
  add_case("batched_matvec", [](GradCheckOptions o) {
    Rand r(26);
    auto A = r.tensor({2, 4, 3}), v = r.tensor({2, 3});
    return check_gradients("batched_matvec", {A, v}, [=](Tape<D>& t) { return probe(t, batched_matvec(t, A, v)); }, o);
  });
  add_case("batched_vecmat", [](GradCheckOptions o) {
    Rand r(27);
    auto u = r.tensor({2, 4}), A = r.tensor({2, 4, 3});
    return check_gradients("batched_vecmat", {u, A}, [=](Tape<D>& t) { return probe(t, batched_vecmat(t, u, A)); }, o);
  });
  add_case("batched_outer", [](GradCheckOptions o) {
    Rand r(28);
    auto u = r.tensor({2, 4}), v = r.tensor({2, 3});
    return check_gradients("batched_outer", {u, v}, [=](Tape<D>& t) { return probe(t, batched_outer(t, u, v)); }, o);
  });
  return cases;
}

inline std::vector<Case> block_cases() {
  std::vector<Case> cases;
  cases.push_back({"text_encoder", [](GradCheckOptions o) {
    Init init(31);
    auto enc = std::make_shared<TextEncoder<D>>(init, 7, 3, 5);
    ParamSet<D> ps;
    enc->register_params(ps, "text");
    std::vector<std::vector<int>> batch{{2, 3, 4, 5}, {6, 2}};
    return check_gradients("text_encoder", ps.tensors(), [=](Tape<D>& t) {
      return probe(t, enc->encode(t, batch));
    }, o);
  }});
  cases.push_back({"backbone", [](GradCheckOptions o) {
    Init init(32);
    BackboneConfig bc;
    bc.image_size = 32;
    bc.stem_channels = 3;
    bc.c1 = 4;
    bc.c2 = 4;
    bc.c3 = 6;
    bc.fusion_channels = 4;
    auto bb = std::make_shared<Backbone<D>>(init, bc);
    ParamSet<D> ps;
    bb->register_params(ps, "backbone");
    Rand r(33);
    auto images = r.unit({2, 32, 32, 3});
    return check_gradients("backbone", ps.tensors(), [=](Tape<D>& t) {
      auto f = bb->extract(t, images, Mode::Train);
      auto p = bb->project(t, f, Mode::Train);
      return add(t, add(t, probe(t, p.p1, 1), probe(t, p.p2, 2)), probe(t, p.p3, 3));
    }, o);
  }});
  cases.push_back({"afs", [](GradCheckOptions o) {
    Init init(34);
    auto afs = std::make_shared<Afs<D>>(init, 5, 3);
    Rand r(35);
    auto text = r.tensor({2, 5});
    std::vector<Tensor<D>> maps{r.tensor({2, 2, 2, 3}), r.tensor({2, 2, 2, 3}), r.tensor({2, 2, 2, 3})};
    std::vector<Tensor<D>> params{afs->predictor.weight, afs->predictor.bias, text};
    params.insert(params.end(), maps.begin(), maps.end());
    return check_gradients("afs", params, [=](Tape<D>& t) {
      return probe(t, afs_fuse(t, maps, afs->predict_weights(t, text)));
    }, o);
  }});
  cases.push_back({"garan", [](GradCheckOptions o) {
    Init init(36);
    auto g = std::make_shared<Garan<D>>(init, 4, 3, 3, 2);
    ParamSet<D> ps;
    g->register_params(ps, "garan");
    Rand r(37);
    auto fv = r.tensor({2, 3, 3, 4}), text = r.tensor({2, 3});
    auto params = ps.tensors();
    params.push_back(fv);
    params.push_back(text);
    return check_gradients("garan", params, [=](Tape<D>& t) {
      auto res = g->forward(t, fv, text, Mode::Train);
      auto out = probe(t, res.features, 1);
      // Attention supervision path through the collect logits.
      std::vector<Tensor<D>> logits;
      for (auto& st : res.states) logits.push_back(st.collect_logits);
      auto targets = std::vector<std::vector<double>>(2, attention_targets(Box{1.2, 1.7, 1.0, 1.4}, 3));
      return add(t, out, attention_loss(t, logits, targets, 2));
    }, o);
  }});
  cases.push_back({"grounding_head", [](GradCheckOptions o) {
    Init init(38);
    auto h = std::make_shared<GroundingHead<D>>(init, 4, 3, 5, 2, 0.1);
    ParamSet<D> ps;
    h->register_params(ps, "head");
    Rand r(39);
    auto fv = r.tensor({2, 2, 2, 4}), text = r.tensor({2, 3});
    auto params = ps.tensors();
    params.push_back(fv);
    params.push_back(text);
    std::vector<AnchorPrior> priors{{0.8, 0.6}, {1.3, 1.1}};
    std::vector<TargetAssignment> targets{assign_targets(Box{0.6, 1.4, 0.9, 0.7}, priors, 2),
                                          assign_targets(Box{1.5, 0.3, 1.2, 1.0}, priors, 2)};
    return check_gradients("grounding_head", params, [=](Tape<D>& t) {
      auto raw = h->predict_raw(t, h->fuse(t, fv, text));
      return detection_loss(t, raw, targets, 0.7);
    }, o);
  }});
  cases.push_back({"end_to_end", [](GradCheckOptions o) {
    auto cfg = toy_model_config();
    auto model = std::make_shared<RealGin<D>>(cfg, 40);
    auto batch = toy_batch(cfg, 41);
    return check_gradients("end_to_end", model->trainable().tensors(), [=](Tape<D>& t) {
      auto r = model->forward(t, batch);
      return model->loss(t, r, batch).total;
    }, o);
  }});
  return cases;
}

inline std::vector<Case> all_cases() {
  auto cases = op_cases();
  auto blocks = block_cases();
  cases.insert(cases.end(), blocks.begin(), blocks.end());
  return cases;
}

}  // namespace rgin::gradsuite
