#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "rgin/dataset_io.hpp"
#include "rgin/eval.hpp"

namespace rgin {

struct VisualizedScene {
  std::string scene_id;
  std::vector<std::filesystem::path> files;
  std::vector<double> beta;
  double iou = 0;
};

inline void draw_rect(io::Image& img, const std::array<double, 4>& xywh, std::array<std::uint8_t, 3> rgb) {
  const int x0 = std::clamp(int(std::floor(xywh[0] * img.width)), 0, img.width - 1);
  const int y0 = std::clamp(int(std::floor(xywh[1] * img.height)), 0, img.height - 1);
  const int x1 = std::clamp(int(std::ceil((xywh[0] + xywh[2]) * img.width)) - 1, 0, img.width - 1);
  const int y1 = std::clamp(int(std::ceil((xywh[1] + xywh[3]) * img.height)) - 1, 0, img.height - 1);
  auto put = [&](int x, int y) { std::copy(rgb.begin(), rgb.end(), img.rgb.begin() + (y * img.width + x) * 3); };
  for (int x = x0; x <= x1; ++x) put(x, y0), put(x, y1);
  for (int y = y0; y <= y1; ++y) put(x0, y), put(x1, y);
}

/// Attention weights over the s x s grid, max-normalized and nearest-upsampled,
/// blended over a darkened copy of the scene.
inline io::Image heatmap(const io::Image& scene, const float* weights, std::size_t grid) {
  io::Image out = scene;
  float peak = 0;
  for (std::size_t i = 0; i < grid * grid; ++i) peak = std::max(peak, weights[i]);
  const double cell = double(scene.width) / double(grid);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const std::size_t gy = std::min<std::size_t>(grid - 1, std::size_t(y / cell));
      const std::size_t gx = std::min<std::size_t>(grid - 1, std::size_t(x / cell));
      const double a = peak > 0 ? weights[gy * grid + gx] / peak : 0.0;
      auto* p = &out.rgb[(y * scene.width + x) * 3];
      const double base = 0.3 * (p[0] + p[1] + p[2]) / 3.0;
      p[0] = static_cast<std::uint8_t>(std::lround(base + a * (255 - base)));
      p[1] = static_cast<std::uint8_t>(std::lround(base + a * 0.5 * (255 - base)));
      p[2] = static_cast<std::uint8_t>(std::lround(base * (1 - a)));
    }
  return out;
}

/// Writes <id>_boxes.png, <id>_head<j>.png for every GARAN head, and <id>.txt.
inline VisualizedScene visualize_scene(RealGin<float>& model, const io::LoadedSplit& data, std::size_t index,
                                       const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  model.set_mode(Mode::Eval);
  const std::size_t grid = model.config().grid();
  Tape<float> tape(false, false);
  auto batch = make_batch<float>(data, {index}, grid);
  auto r = model.forward(tape, batch);
  const auto pred = model.predict(r).at(0);
  const auto& rec = data.records.at(index);
  const auto pred_box = grid_box_to_normalized(pred.box, grid);

  VisualizedScene v;
  v.scene_id = rec.scene_id;
  v.iou = iou(normalized_to_box(pred_box), normalized_to_box(rec.gt_box));
  io::Image scene{synth::kCanvas, synth::kCanvas, data.images.at(index)};

  io::Image boxes = scene;
  draw_rect(boxes, rec.gt_box, {0, 255, 0});
  draw_rect(boxes, pred_box, {255, 0, 0});
  v.files.push_back(out_dir / (rec.scene_id + "_boxes.png"));
  io::write_png(v.files.back(), boxes);

  for (std::size_t j = 0; j < r.attention.size(); ++j) {
    v.files.push_back(out_dir / (rec.scene_id + "_head" + std::to_string(j) + ".png"));
    io::write_png(v.files.back(), heatmap(scene, r.attention[j].collect_weights.raw(), grid));
  }
  if (r.beta.defined()) v.beta.assign(r.beta.data().begin(), r.beta.data().end());

  v.files.push_back(out_dir / (rec.scene_id + ".txt"));
  std::ofstream txt(v.files.back());
  txt << std::setprecision(9);
  txt << "scene_id " << rec.scene_id << "\n";
  txt << "expression " << rec.expression << "\n";
  txt << "template " << synth::name(rec.kind) << "\n";
  txt << "gt_box " << rec.gt_box[0] << " " << rec.gt_box[1] << " " << rec.gt_box[2] << " " << rec.gt_box[3] << "\n";
  txt << "pred_box " << pred_box[0] << " " << pred_box[1] << " " << pred_box[2] << " " << pred_box[3] << "\n";
  txt << "pred_confidence " << pred.confidence << "\n";
  txt << "iou " << v.iou << "\n";
  if (!v.beta.empty()) txt << "afs_beta " << v.beta[0] << " " << v.beta[1] << " " << v.beta[2] << "\n";
  txt << "heads " << r.attention.size() << "\n";
  return v;
}

}  // namespace rgin
