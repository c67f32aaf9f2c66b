#pragma once

#include <array>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "rgin/dataset_io.hpp"
#include "rgin/model.hpp"

namespace rgin {

/// Assembles samples `idx` of a loaded split into a model batch.
template <class T>
Batch<T> make_batch(const io::LoadedSplit& data, const std::vector<std::size_t>& idx, std::size_t grid) {
  const std::size_t S = synth::kCanvas, per = S * S * 3;
  std::vector<T> pixels(idx.size() * per);
  Batch<T> b;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    synth::to_unit_range(data.images.at(idx[k]), pixels.data() + k * per);
    b.tokens.push_back(data.tokens[idx[k]]);
    b.boxes.push_back(synth::to_grid_box(data.records[idx[k]].gt_box, grid));
  }
  b.images = Tensor<T>({idx.size(), S, S, 3}, std::move(pixels));
  return b;
}

/// Anything that maps a batch to one box per sample, in normalized top-left (x, y, w, h).
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<std::array<double, 4>> predict(const io::LoadedSplit& data,
                                                     const std::vector<std::size_t>& idx) = 0;
  /// Whether predict() may be called concurrently from several threads.
  virtual bool thread_safe() const { return false; }
};

inline std::array<double, 4> grid_box_to_normalized(const Box& b, std::size_t grid) {
  const double g = static_cast<double>(grid);
  return {(b.cx - b.w / 2) / g, (b.cy - b.h / 2) / g, b.w / g, b.h / g};
}

inline Box normalized_to_box(const std::array<double, 4>& xywh) {
  return Box{xywh[0] + xywh[2] / 2, xywh[1] + xywh[3] / 2, xywh[2], xywh[3]};
}

/// Eval-mode forward with gradients off. Read-only on the model, so safe to share across threads.
template <class T>
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(RealGin<T>& model) : model_(model) { model_.set_mode(Mode::Eval); }

  std::vector<std::array<double, 4>> predict(const io::LoadedSplit& data,
                                             const std::vector<std::size_t>& idx) override {
    Tape<T> tape(false, false);
    const std::size_t grid = model_.config().grid();
    auto batch = make_batch<T>(data, idx, grid);
    auto r = model_.forward(tape, batch);
    std::vector<std::array<double, 4>> out;
    for (const auto& d : model_.predict(r)) out.push_back(grid_box_to_normalized(d.box, grid));
    return out;
  }
  bool thread_safe() const override { return true; }

 private:
  RealGin<T>& model_;
};

struct PrecisionReport {
  std::size_t correct = 0, total = 0;
  std::array<std::size_t, 4> correct_by{}, total_by{};

  double precision() const { return total ? double(correct) / double(total) : 0.0; }
  double precision(synth::TemplateClass t) const {
    auto i = static_cast<int>(t);
    return total_by[i] ? double(correct_by[i]) / double(total_by[i]) : 0.0;
  }
  void merge(const PrecisionReport& o) {
    correct += o.correct;
    total += o.total;
    for (int i = 0; i < 4; ++i) correct_by[i] += o.correct_by[i], total_by[i] += o.total_by[i];
  }
};

/// Precision@0.5: a prediction counts when its IoU with the ground truth exceeds 0.5.
inline PrecisionReport evaluate(Predictor& predictor, const io::LoadedSplit& data, std::size_t batch_size = 32,
                                unsigned threads = 1) {
  const std::size_t n = data.records.size();
  const std::size_t batches = (n + batch_size - 1) / batch_size;
  auto run = [&](std::size_t first_batch, std::size_t step, PrecisionReport& rep) {
    for (std::size_t bi = first_batch; bi < batches; bi += step) {
      std::vector<std::size_t> idx;
      for (std::size_t i = bi * batch_size; i < std::min(n, (bi + 1) * batch_size); ++i) idx.push_back(i);
      auto boxes = predictor.predict(data, idx);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& rec = data.records[idx[k]];
        const bool hit = iou(normalized_to_box(boxes[k]), normalized_to_box(rec.gt_box)) > 0.5;
        const int t = static_cast<int>(rec.kind);
        rep.correct += hit;
        rep.total += 1;
        rep.correct_by[t] += hit;
        rep.total_by[t] += 1;
      }
    }
  };
  PrecisionReport total;
  if (threads <= 1 || !predictor.thread_safe()) {
    run(0, 1, total);
    return total;
  }
  std::vector<PrecisionReport> parts(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        run(t, threads, parts[t]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& p : parts) total.merge(p);
  return total;
}

}  // namespace rgin
