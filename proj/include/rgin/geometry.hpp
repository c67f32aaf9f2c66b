#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgin {

/// Axis-aligned box given by its center and extents. Units depend on context
/// (grid cells inside the model, normalized [0,1] on disk).
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double left() const { return cx - w / 2; }
  double right() const { return cx + w / 2; }
  double top() const { return cy - h / 2; }
  double bottom() const { return cy + h / 2; }
  double area() const { return w * h; }

  static Box from_corner(double x, double y, double w, double h) { return {x + w / 2, y + h / 2, w, h}; }
  Box scaled(double s) const { return {cx * s, cy * s, w * s, h * s}; }
  bool operator==(const Box&) const = default;
};

inline void require_proper(const Box& b, const char* who) {
  if (!(b.w > 0) || !(b.h > 0)) throw std::invalid_argument(std::string(who) + ": degenerate box");
}

/// Exact intersection-over-union of two axis-aligned rectangles.
inline double iou(const Box& a, const Box& b) {
  require_proper(a, "iou");
  require_proper(b, "iou");
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Ground-truth attention scores on an s x s grid: for every cell, a copy of the
/// target box is centered on the cell center and scored by its IoU with the
/// target. `gt` is in grid units. Row-major, index = row * s + col.
inline std::vector<double> attention_targets(const Box& gt, std::size_t grid) {
  require_proper(gt, "attention_targets");
  const double s = static_cast<double>(grid);
  if (gt.cx < 0 || gt.cy < 0 || gt.cx > s || gt.cy > s)
    throw std::invalid_argument("attention_targets: box center outside the grid");
  std::vector<double> out(grid * grid);
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c) {
      Box placed{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5, gt.w, gt.h};
      out[r * grid + c] = iou(placed, gt);
    }
  return out;
}

}  // namespace rgin
