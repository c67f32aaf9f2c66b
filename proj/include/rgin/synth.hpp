#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rgin/geometry.hpp"
#include "rgin/head.hpp"
#include "rgin/text_encoder.hpp"

namespace rgin::synth {

enum class ShapeKind { Circle, Square, Triangle };
enum class ColorKind { Red, Green, Blue, Yellow, Purple };
enum class SizeKind { Small, Large };
enum class TemplateClass { Category, Attribute, Location, Relational };

inline constexpr std::array<const char*, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<const char*, 5> kColorNames{"red", "green", "blue", "yellow", "purple"};
inline constexpr std::array<const char*, 2> kSizeNames{"small", "large"};
inline constexpr std::array<const char*, 4> kTemplateNames{"category", "attribute", "location", "relational"};

inline constexpr std::array<std::array<std::uint8_t, 3>, 5> kPalette{{
    {220, 40, 40}, {40, 180, 60}, {40, 70, 220}, {235, 210, 40}, {150, 50, 190}}};
inline constexpr std::array<std::uint8_t, 3> kBackground{112, 112, 112};

inline constexpr int kCanvas = 96;
inline constexpr int kMaxAttempts = 1000;

inline const char* name(ShapeKind s) { return kShapeNames[static_cast<int>(s)]; }
inline const char* name(ColorKind c) { return kColorNames[static_cast<int>(c)]; }
inline const char* name(SizeKind s) { return kSizeNames[static_cast<int>(s)]; }
inline const char* name(TemplateClass t) { return kTemplateNames[static_cast<int>(t)]; }

inline TemplateClass parse_template(const std::string& s) {
  for (std::size_t i = 0; i < kTemplateNames.size(); ++i)
    if (s == kTemplateNames[i]) return static_cast<TemplateClass>(i);
  throw std::invalid_argument("unknown template class '" + s + "'");
}

/// Axis-aligned square footprint in pixels; every shape is inscribed in it.
struct Object {
  ShapeKind shape;
  ColorKind color;
  SizeKind size;
  int x = 0, y = 0, extent = 0;  // top-left corner and side length

  double left() const { return x; }
  double top() const { return y; }
  double right() const { return x + extent; }
  double bottom() const { return y + extent; }
  double cx() const { return x + extent / 2.0; }
  double cy() const { return y + extent / 2.0; }
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<Object> objects;
  int referent = -1;
  TemplateClass kind = TemplateClass::Category;
  std::string expression;

  /// Normalized (x, y, w, h) with x/y at the top-left.
  std::array<double, 4> gt_box() const {
    const auto& o = objects.at(referent);
    return {o.x / double(kCanvas), o.y / double(kCanvas), o.extent / double(kCanvas), o.extent / double(kCanvas)};
  }
};

/// Normalized top-left box to a center box in grid units.
inline Box to_grid_box(const std::array<double, 4>& xywh, std::size_t grid) {
  const double g = static_cast<double>(grid);
  return Box{(xywh[0] + xywh[2] / 2) * g, (xywh[1] + xywh[3] / 2) * g, xywh[2] * g, xywh[3] * g};
}

inline Vocabulary make_vocabulary() {
  Vocabulary v;
  for (const char* w : {"the", "on", "at", "of", "left", "right", "top", "bottom", "above", "below"}) v.add(w);
  for (auto s : kShapeNames) v.add(s);
  for (auto c : kColorNames) v.add(c);
  for (auto s : kSizeNames) v.add(s);
  return v;
}

// ---------------------------------------------------------------------------
// Predicate checker. Parses an expression back into predicates and evaluates
// them on scene geometry, independent of how the generator chose the words.

enum class Zone { Left, Right, Top, Bottom };
enum class Relation { LeftOf, RightOf, Above, Below };

struct Description {
  std::optional<SizeKind> size;
  std::optional<ColorKind> color;
  ShapeKind shape = ShapeKind::Circle;
};

struct ParsedExpression {
  Description target;
  std::optional<Zone> zone;
  std::optional<Relation> relation;
  Description anchor;
};

inline bool in_zone(const Object& o, Zone z) {
  constexpr double third = kCanvas / 3.0;
  switch (z) {
    case Zone::Left: return o.cx() < third;
    case Zone::Right: return o.cx() > 2 * third;
    case Zone::Top: return o.cy() < third;
    case Zone::Bottom: return o.cy() > 2 * third;
  }
  return false;
}

/// a stands in relation r to b: strict separation along the relation axis.
inline bool related(const Object& a, Relation r, const Object& b) {
  switch (r) {
    case Relation::LeftOf: return a.right() <= b.left();
    case Relation::RightOf: return a.left() >= b.right();
    case Relation::Above: return a.bottom() <= b.top();
    case Relation::Below: return a.top() >= b.bottom();
  }
  return false;
}

inline bool matches(const Object& o, const Description& d) {
  return o.shape == d.shape && (!d.size || o.size == *d.size) && (!d.color || o.color == *d.color);
}

inline ParsedExpression parse_expression(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> w;
  for (std::string t; in >> t;) w.push_back(t);
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> ParsedExpression {
    throw std::invalid_argument("cannot parse expression '" + text + "': " + why);
  };
  auto expect = [&](const char* word) {
    if (i >= w.size() || w[i] != word) fail(std::string("expected '") + word + "'");
    ++i;
  };
  auto description = [&]() {
    Description d;
    expect("the");
    for (std::size_t k = 0; k < kSizeNames.size(); ++k)
      if (i < w.size() && w[i] == kSizeNames[k]) d.size = static_cast<SizeKind>(k), ++i;
    for (std::size_t k = 0; k < kColorNames.size(); ++k)
      if (i < w.size() && w[i] == kColorNames[k]) d.color = static_cast<ColorKind>(k), ++i;
    for (std::size_t k = 0; k < kShapeNames.size(); ++k)
      if (i < w.size() && w[i] == kShapeNames[k]) {
        d.shape = static_cast<ShapeKind>(k);
        ++i;
        return d;
      }
    fail("missing shape noun");
    return d;
  };
  ParsedExpression p;
  p.target = description();
  if (i == w.size()) return p;
  const std::string head = w[i++];
  if (head == "on" || head == "at") {
    expect("the");
    if (i >= w.size()) fail("missing zone");
    const std::string z = w[i++];
    if (head == "on" && z == "left") p.zone = Zone::Left;
    else if (head == "on" && z == "right") p.zone = Zone::Right;
    else if (head == "at" && z == "top") p.zone = Zone::Top;
    else if (head == "at" && z == "bottom") p.zone = Zone::Bottom;
    else fail("unknown zone '" + z + "'");
  } else {
    if (head == "left") expect("of"), p.relation = Relation::LeftOf;
    else if (head == "right") expect("of"), p.relation = Relation::RightOf;
    else if (head == "above") p.relation = Relation::Above;
    else if (head == "below") p.relation = Relation::Below;
    else fail("unknown word '" + head + "'");
    p.anchor = description();
  }
  if (i != w.size()) fail("trailing words");
  return p;
}

/// Indices of every object the expression describes.
inline std::vector<int> satisfying_objects(const Scene& scene, const std::string& expression) {
  const auto p = parse_expression(expression);
  std::vector<int> anchors;
  if (p.relation) {
    for (std::size_t j = 0; j < scene.objects.size(); ++j)
      if (matches(scene.objects[j], p.anchor)) anchors.push_back(static_cast<int>(j));
    if (anchors.size() != 1) return {};  // the anchor phrase must itself be unambiguous
  }
  std::vector<int> out;
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    const auto& o = scene.objects[j];
    if (!matches(o, p.target)) continue;
    if (p.zone && !in_zone(o, *p.zone)) continue;
    if (p.relation && (int(j) == anchors[0] || !related(o, *p.relation, scene.objects[anchors[0]]))) continue;
    out.push_back(static_cast<int>(j));
  }
  return out;
}

inline bool expression_is_unique(const Scene& scene) {
  auto hits = satisfying_objects(scene, scene.expression);
  return hits.size() == 1 && hits[0] == scene.referent;
}

// ---------------------------------------------------------------------------
// Rendering

inline bool covers(const Object& o, int px, int py) {
  const double x = px + 0.5, y = py + 0.5;
  if (x < o.left() || x >= o.right() || y < o.top() || y >= o.bottom()) return false;
  switch (o.shape) {
    case ShapeKind::Square: return true;
    case ShapeKind::Circle: {
      const double r = o.extent / 2.0, dx = x - o.cx(), dy = y - o.cy();
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::Triangle: {
      // apex at top center, base along the bottom edge
      const double t = (y - o.top()) / o.extent;
      return std::abs(x - o.cx()) <= t * o.extent / 2.0;
    }
  }
  return false;
}

/// 8-bit RGB, row-major [y][x][c]. Later objects paint over earlier ones.
inline std::vector<std::uint8_t> render(const Scene& scene) {
  std::vector<std::uint8_t> img(kCanvas * kCanvas * 3);
  for (std::size_t i = 0; i < img.size(); i += 3) std::copy(kBackground.begin(), kBackground.end(), img.begin() + i);
  for (const auto& o : scene.objects) {
    const auto& rgb = kPalette[static_cast<int>(o.color)];
    for (int py = std::max(0, o.y); py < std::min(kCanvas, o.y + o.extent); ++py)
      for (int px = std::max(0, o.x); px < std::min(kCanvas, o.x + o.extent); ++px)
        if (covers(o, px, py)) std::copy(rgb.begin(), rgb.end(), img.begin() + (py * kCanvas + px) * 3);
  }
  return img;
}

template <class T>
void to_unit_range(const std::vector<std::uint8_t>& img, T* out) {
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<T>(img[i]) / T(255);
}

// ---------------------------------------------------------------------------
// Generation

struct TemplateMix {
  std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};

  void validate() const {
    double total = 0;
    for (double w : weights) {
      if (!(w >= 0)) throw std::invalid_argument("template mix weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("template mix fractions must sum to 1");
  }

  /// "category=0.25,attribute=0.25,..."; omitted classes get 0.
  static TemplateMix parse(const std::string& s) {
    TemplateMix m;
    m.weights.fill(0.0);
    std::istringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
      auto eq = item.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("bad template mix entry '" + item + "'");
      m.weights[static_cast<int>(parse_template(item.substr(0, eq)))] = std::stod(item.substr(eq + 1));
    }
    m.validate();
    return m;
  }

  std::string str() const {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t i = 0; i < 4; ++i) out << (i ? "," : "") << kTemplateNames[i] << "=" << weights[i];
    return out.str();
  }
};

struct GeneratorParams {
  int min_objects = 2;
  int max_objects = 6;
  int small_min = 12, small_max = 16;  // side length in pixels
  int large_min = 22, large_max = 28;
  int gap = 2;             // minimum empty pixels between footprints
  double zone_margin = 8;  // same-shape distractors stay this far from a zone boundary
  double relation_margin = 4;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t scene_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ (index * 0xd1342543de82ef95ull + 1));
}

namespace detail {

inline bool separated(const Object& a, const Object& b, int gap) {
  return a.right() + gap <= b.left() || b.right() + gap <= a.left() || a.bottom() + gap <= b.top() ||
         b.bottom() + gap <= a.top();
}

inline std::optional<std::vector<Object>> place_objects(std::mt19937_64& rng, const GeneratorParams& gp, int n) {
  std::uniform_int_distribution<int> shape(0, 2), color(0, 4), size(0, 1);
  std::vector<Object> objs;
  for (int k = 0; k < n; ++k) {
    Object o;
    o.shape = static_cast<ShapeKind>(shape(rng));
    o.color = static_cast<ColorKind>(color(rng));
    o.size = static_cast<SizeKind>(size(rng));
    o.extent = o.size == SizeKind::Small ? std::uniform_int_distribution<int>(gp.small_min, gp.small_max)(rng)
                                         : std::uniform_int_distribution<int>(gp.large_min, gp.large_max)(rng);
    std::uniform_int_distribution<int> pos(0, kCanvas - o.extent);
    bool placed = false;
    for (int tries = 0; tries < 100 && !placed; ++tries) {
      o.x = pos(rng);
      o.y = pos(rng);
      placed = std::all_of(objs.begin(), objs.end(), [&](const Object& p) { return separated(o, p, gp.gap); });
    }
    if (!placed) return std::nullopt;
    objs.push_back(o);
  }
  return objs;
}

inline std::string describe(const Description& d) {
  std::string s = "the";
  if (d.size) s += std::string(" ") + name(*d.size);
  if (d.color) s += std::string(" ") + name(*d.color);
  return s + " " + name(d.shape);
}

template <class F>
std::vector<int> where(const std::vector<Object>& objs, F&& pred) {
  std::vector<int> out;
  for (std::size_t j = 0; j < objs.size(); ++j)
    if (pred(objs[j], static_cast<int>(j))) out.push_back(static_cast<int>(j));
  return out;
}

template <class V>
const auto& pick(std::mt19937_64& rng, const V& options) {
  return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

inline double zone_distance(const Object& o, Zone z) {
  constexpr double third = kCanvas / 3.0;
  switch (z) {
    case Zone::Left: return o.cx() - third;
    case Zone::Right: return 2 * third - o.cx();
    case Zone::Top: return o.cy() - third;
    case Zone::Bottom: return 2 * third - o.cy();
  }
  return 0;
}

inline double relation_violation(const Object& a, Relation r, const Object& b) {
  switch (r) {
    case Relation::LeftOf: return a.right() - b.left();
    case Relation::RightOf: return b.right() - a.left();
    case Relation::Above: return a.bottom() - b.top();
    case Relation::Below: return b.bottom() - a.top();
  }
  return 0;
}

/// Builds an expression of class `kind` for `ref`, or nothing if this scene cannot
/// support one that needs the template's reasoning.
inline std::optional<std::string> compose(std::mt19937_64& rng, const GeneratorParams& gp,
                                          const std::vector<Object>& objs, int ref, TemplateClass kind) {
  const Object& r = objs[ref];
  auto same_shape = where(objs, [&](const Object& o, int j) { return j != ref && o.shape == r.shape; });
  switch (kind) {
    case TemplateClass::Category:
      if (!same_shape.empty()) return std::nullopt;
      return describe({std::nullopt, std::nullopt, r.shape});
    case TemplateClass::Attribute: {
      if (same_shape.empty()) return std::nullopt;
      std::vector<Description> options;
      auto unique = [&](const Description& d) {
        return where(objs, [&](const Object& o, int) { return matches(o, d); }).size() == 1;
      };
      Description by_color{std::nullopt, r.color, r.shape}, by_size{r.size, std::nullopt, r.shape},
          by_both{r.size, r.color, r.shape};
      if (unique(by_color)) options.push_back(by_color);
      if (unique(by_size)) options.push_back(by_size);
      if (options.empty() && unique(by_both)) options.push_back(by_both);
      if (options.empty()) return std::nullopt;
      return describe(pick(rng, options));
    }
    case TemplateClass::Location: {
      if (same_shape.empty()) return std::nullopt;
      std::vector<Zone> zones;
      for (Zone z : {Zone::Left, Zone::Right, Zone::Top, Zone::Bottom}) {
        if (!in_zone(r, z)) continue;
        bool clear = std::all_of(same_shape.begin(), same_shape.end(),
                                 [&](int j) { return zone_distance(objs[j], z) >= gp.zone_margin; });
        if (clear) zones.push_back(z);
      }
      if (zones.empty()) return std::nullopt;
      static const char* phrase[] = {"on the left", "on the right", "at the top", "at the bottom"};
      return describe({std::nullopt, std::nullopt, r.shape}) + " " + phrase[static_cast<int>(pick(rng, zones))];
    }
    case TemplateClass::Relational: {
      if (same_shape.empty()) return std::nullopt;
      std::vector<std::pair<int, Relation>> options;
      for (std::size_t a = 0; a < objs.size(); ++a) {
        if (int(a) == ref || objs[a].shape == r.shape) continue;
        Description anchor{std::nullopt, objs[a].color, objs[a].shape};
        if (where(objs, [&](const Object& o, int) { return matches(o, anchor); }).size() != 1) continue;
        for (Relation rel : {Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below}) {
          if (!related(r, rel, objs[a])) continue;
          bool clear = std::all_of(same_shape.begin(), same_shape.end(), [&](int j) {
            return relation_violation(objs[j], rel, objs[a]) >= gp.relation_margin;
          });
          if (clear) options.emplace_back(static_cast<int>(a), rel);
        }
      }
      if (options.empty()) return std::nullopt;
      auto [a, rel] = pick(rng, options);
      static const char* phrase[] = {"left of", "right of", "above", "below"};
      return describe({std::nullopt, std::nullopt, r.shape}) + " " + phrase[static_cast<int>(rel)] + " " +
             describe({std::nullopt, objs[a].color, objs[a].shape});
    }
  }
  return std::nullopt;
}

}  // namespace detail

inline TemplateClass draw_template(std::mt19937_64& rng, const TemplateMix& mix) {
  std::discrete_distribution<int> d(mix.weights.begin(), mix.weights.end());
  return static_cast<TemplateClass>(d(rng));
}

/// One scene from its own seed: pick the template class, then rejection-sample
/// layouts until some object admits a uniquely identifying expression of that class.
inline Scene generate_scene(std::uint64_t seed, const TemplateMix& mix, const GeneratorParams& gp = {}) {
  std::mt19937_64 rng(seed);
  const TemplateClass kind = draw_template(rng, mix);
  const int min_objects = std::max(gp.min_objects, kind == TemplateClass::Relational ? 3 : 2);
  std::uniform_int_distribution<int> count(min_objects, gp.max_objects);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto objs = detail::place_objects(rng, gp, count(rng));
    if (!objs) continue;
    std::vector<int> order(objs->size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
    std::shuffle(order.begin(), order.end(), rng);
    for (int ref : order) {
      auto expr = detail::compose(rng, gp, *objs, ref, kind);
      if (!expr) continue;
      Scene s{seed, std::move(*objs), ref, kind, *expr};
      if (!expression_is_unique(s))
        throw std::logic_error("generator produced an ambiguous expression: " + s.expression);
      return s;
    }
  }
  throw GenerationError("rejection sampling failed after " + std::to_string(kMaxAttempts) +
                        " attempts for a " + name(kind) + " scene (seed " + std::to_string(seed) + ")");
}

enum class Split { Train, Val, Test };
inline const char* name(Split s) {
  static const char* n[] = {"train", "val", "test"};
  return n[static_cast<int>(s)];
}
inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
  std::size_t of(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }

  /// 80/10/10 with the remainder going to train.
  static SplitCounts from_total(std::size_t n) {
    SplitCounts c;
    c.val = n / 10;
    c.test = n / 10;
    c.train = n - c.val - c.test;
    return c;
  }
};

struct GeneratedScene {
  std::size_t index = 0;
  Split split = Split::Train;
  Scene scene;
};

/// Deterministic in (seed, counts, mix). Scenes are numbered globally; train takes
/// the first block of indices, then val, then test, so per-scene seeds never repeat
/// across splits. Work is partitioned over `threads` contiguous index ranges.
inline std::vector<GeneratedScene> generate(std::uint64_t seed, const SplitCounts& counts, const TemplateMix& mix,
                                            const GeneratorParams& gp = {}, unsigned threads = 1) {
  if (counts.total() == 0) throw std::invalid_argument("generate: scene count must be positive");
  mix.validate();
  std::vector<GeneratedScene> out(counts.total());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Split sp = i < counts.train ? Split::Train : i < counts.train + counts.val ? Split::Val : Split::Test;
      out[i] = {i, sp, generate_scene(scene_seed(seed, i), mix, gp)};
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(out.size())));
  if (threads == 1) {
    work(0, out.size());
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (out.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        work(std::min(out.size(), t * chunk), std::min(out.size(), (t + 1) * chunk));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Shape priors

/// IoU of two boxes sharing a center.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

/// k-means on (w, h) with 1 - IoU as the distance, seeded k-means++ initialization,
/// result sorted by ascending area.
inline std::vector<AnchorPrior> fit_priors(const std::vector<std::pair<double, double>>& shapes, std::size_t n,
                                           std::uint64_t seed = 0, int max_iter = 100) {
  if (n == 0) throw std::invalid_argument("fit_priors: need at least one prior");
  for (auto [w, h] : shapes)
    if (!(w > 0 && h > 0)) throw std::invalid_argument("fit_priors: box shapes must be positive");
  std::vector<std::pair<double, double>> distinct(shapes);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() == 1) {
    if (n > 1) std::clog << "warning: fit_priors: all boxes share one shape; returning " << n << " copies\n";
    return std::vector<AnchorPrior>(n, AnchorPrior{distinct[0].first, distinct[0].second});
  }
  if (distinct.size() < n)
    throw std::invalid_argument("fit_priors: " + std::to_string(distinct.size()) + " distinct shapes for " +
                                std::to_string(n) + " priors");

  std::mt19937_64 rng(seed);
  auto dist = [](const std::pair<double, double>& a, const AnchorPrior& p) {
    return 1.0 - shape_iou(a.first, a.second, p.pw, p.ph);
  };
  std::vector<AnchorPrior> centers;
  const auto& first = distinct[std::uniform_int_distribution<std::size_t>(0, distinct.size() - 1)(rng)];
  centers.push_back({first.first, first.second});
  while (centers.size() < n) {
    std::vector<double> weight(distinct.size());
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      double best = 1e300;
      for (const auto& c : centers) best = std::min(best, dist(distinct[i], c));
      weight[i] = best * best;
    }
    const auto& next = distinct[std::discrete_distribution<std::size_t>(weight.begin(), weight.end())(rng)];
    centers.push_back({next.first, next.second});
  }

  std::vector<std::size_t> assign(shapes.size(), n);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n; ++c)
        if (dist(shapes[i], centers[c]) < dist(shapes[i], centers[best])) best = c;
      if (best != assign[i]) assign[i] = best, changed = true;
    }
    if (!changed) break;
    std::vector<double> sw(n, 0), sh(n, 0), cnt(n, 0);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      sw[assign[i]] += shapes[i].first;
      sh[assign[i]] += shapes[i].second;
      cnt[assign[i]] += 1;
    }
    for (std::size_t c = 0; c < n; ++c)
      if (cnt[c] > 0) centers[c] = {sw[c] / cnt[c], sh[c] / cnt[c]};
  }
  std::sort(centers.begin(), centers.end(),
            [](const AnchorPrior& a, const AnchorPrior& b) { return a.pw * a.ph < b.pw * b.ph; });
  return centers;
}

}  // namespace rgin::synth
