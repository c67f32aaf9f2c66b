#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgin/checkpoint.hpp"
#include "rgin/config.hpp"
#include "rgin/eval.hpp"
#include "rgin/optim.hpp"

namespace rgin {

struct TrainData {
  Vocabulary vocab;
  io::LoadedSplit train, val;
};

inline TrainData load_train_data(const RunConfig& cfg) {
  io::read_manifest(cfg.data_dir);
  TrainData d;
  d.vocab = io::read_vocabulary(cfg.data_dir);
  d.train = io::load_split(cfg.data_dir, synth::Split::Train, d.vocab, cfg.train_limit);
  d.val = io::load_split(cfg.data_dir, synth::Split::Val, d.vocab, cfg.val_limit);
  if (d.train.records.size() < 2) throw io::DataError("train split needs at least 2 scenes");
  return d;
}

/// Fits shape priors (grid units) on the training boxes unless the config pins them.
inline void resolve_priors(RunConfig& cfg, const io::LoadedSplit& train) {
  if (!cfg.priors.empty()) return;
  const double g = static_cast<double>(cfg.image_size / 16);
  std::vector<std::pair<double, double>> shapes;
  for (const auto& r : train.records) shapes.emplace_back(r.gt_box[2] * g, r.gt_box[3] * g);
  cfg.priors = RunConfig::format_priors(synth::fit_priors(shapes, cfg.num_priors, cfg.seed));
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double loss = 0, detection = 0, attention = 0;
  std::size_t steps = 0;
  PrecisionReport val;
  double seconds = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"lr", m.lr},
          {"loss", m.loss},
          {"det_loss", m.detection},
          {"att_loss", m.attention},
          {"val_precision", m.val.precision()},
          {"steps", m.steps},
          {"seconds", m.seconds}};
}

struct TrainSummary {
  std::size_t epochs_run = 0;  // including resumed ones
  std::size_t best_epoch = 0;
  double best_val = 0;
  bool early_stopped = false;
  bool budget_stopped = false;
  double seconds = 0;
  std::vector<EpochMetrics> history;  // epochs run by this call
};

class NonFiniteLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Mini-batch Adam training with per-epoch validation, best/last checkpoints,
/// early stopping and resumption from last.ckpt.
class Trainer {
 public:
  Trainer(RunConfig cfg, const TrainData& data)
      : cfg_(std::move(cfg)), data_(data) {
    cfg_.validate();
    resolve_priors(cfg_, data_.train);
    model_ = std::make_unique<RealGin<float>>(cfg_.model_config(data_.vocab.size()), cfg_.seed);
    optim_ = std::make_unique<Adam<float>>(model_->trainable(),
                                           Adam<float>::Options{cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
  }

  RealGin<float>& model() { return *model_; }
  const RunConfig& config() const { return cfg_; }

  std::filesystem::path out(const std::string& file) const { return std::filesystem::path(cfg_.out_dir) / file; }

  /// Order of training samples for an epoch, a pure function of (seed, epoch).
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(data_.train.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(synth::splitmix64(cfg_.seed * 0x9e3779b97f4a7c15ull + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  TrainSummary run(std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    std::size_t start_epoch = 0;
    double spent = 0;  // seconds of epochs completed before a resume
    if (cfg_.resume) {
      if (!fs::exists(out("last.ckpt"))) throw CheckpointError("resume requested but " + out("last.ckpt").string() + " is missing");
      restore(load_checkpoint(out("last.ckpt")), start_epoch);
      // Drop lines of epochs that finished after the checkpoint was written.
      std::string kept, line;
      std::ifstream in(out("metrics.jsonl"));
      while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || j.value("epoch", std::size_t{0}) > start_epoch) continue;
        spent += j.value("seconds", 0.0);
        kept += line + "\n";
      }
      in.close();
      std::ofstream(out("metrics.jsonl"), std::ios::trunc) << kept;
    } else {
      std::ofstream(out("metrics.jsonl"), std::ios::trunc);
      if (cfg_.log_steps) std::ofstream(out("steps.jsonl"), std::ios::trunc);
    }
    std::ofstream(out("config.txt")) << cfg_.to_text();
    std::ofstream metrics(out("metrics.jsonl"), std::ios::app);
    std::ofstream steps;
    if (cfg_.log_steps) steps.open(out("steps.jsonl"), std::ios::app);

    TrainSummary summary;
    summary.best_epoch = best_epoch_;
    summary.best_val = best_total_ ? double(best_correct_) / double(best_total_) : 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t grid = model_->config().grid();
    for (std::size_t epoch = start_epoch; epoch < cfg_.max_epochs; ++epoch) {
      const auto te = std::chrono::steady_clock::now();
      EpochMetrics em;
      em.epoch = epoch + 1;
      em.lr = step_lr(cfg_.lr, epoch, cfg_.lr_halve_every);
      model_->set_mode(Mode::Train);

      auto order = epoch_order(epoch);
      std::vector<std::vector<std::size_t>> batches;
      for (std::size_t i = 0; i + 2 <= order.size(); i += cfg_.batch_size)
        batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + cfg_.batch_size));
      if (batches.size() > 1 && batches.back().size() < 2) batches.pop_back();

      std::future<Batch<float>> ahead;
      auto assemble = [&](std::size_t b) { return make_batch<float>(data_.train, batches[b], grid); };
      if (cfg_.loader_threads > 1) ahead = std::async(std::launch::async, assemble, 0);
      double sum_total = 0, sum_det = 0, sum_att = 0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        Batch<float> batch;
        if (cfg_.loader_threads > 1) {
          batch = ahead.get();
          if (b + 1 < batches.size()) ahead = std::async(std::launch::async, assemble, b + 1);
        } else {
          batch = assemble(b);
        }
        Tape<float> tape;
        auto fwd = model_->forward(tape, batch);
        auto loss = model_->loss(tape, fwd, batch);
        const double total = loss.total.item();
        const double att = loss.attention.defined() ? loss.attention.item() : 0.0;
        if (!std::isfinite(total)) {
          metrics << nlohmann::json{{"epoch", em.epoch}, {"event", "abort"}, {"reason", "non-finite loss"},
                                    {"step", b}}.dump()
                  << "\n";
          throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(em.epoch) + " step " + std::to_string(b) +
                              "; last good checkpoint kept at " + out("last.ckpt").string());
        }
        tape.backward(loss.total);
        optim_->step(em.lr);
        optim_->zero_grad();
        sum_total += total;
        sum_det += loss.detection.item();
        sum_att += att;
        if (cfg_.log_steps)
          steps << nlohmann::json{{"epoch", em.epoch}, {"step", b}, {"loss", total},
                                  {"det_loss", loss.detection.item()}, {"att_loss", att}}.dump()
                << "\n";
      }
      em.steps = batches.size();
      em.loss = sum_total / double(em.steps);
      em.detection = sum_det / double(em.steps);
      em.attention = sum_att / double(em.steps);

      ModelPredictor<float> predictor(*model_);
      em.val = evaluate(predictor, data_.val, 64, cfg_.loader_threads);
      model_->set_mode(Mode::Train);
      em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count();
      metrics << to_json(em).dump() << "\n";
      metrics.flush();
      if (progress)
        *progress << "epoch " << em.epoch << " loss " << em.loss << " det " << em.detection << " att "
                  << em.attention << " val@0.5 " << em.val.precision() << " (" << em.seconds << "s)\n";

      epochs_done_ = epoch + 1;
      if (em.val.correct > best_correct_ || best_epoch_ == 0) {
        best_correct_ = em.val.correct;
        best_total_ = em.val.total;
        best_epoch_ = em.epoch;
        bad_epochs_ = 0;
        save_checkpoint(out("best.ckpt"), snapshot(false));
      } else {
        ++bad_epochs_;
      }
      save_checkpoint(out("last.ckpt"), snapshot(true));
      summary.history.push_back(em);
      summary.best_epoch = best_epoch_;
      summary.best_val = double(best_correct_) / double(std::max<std::size_t>(best_total_, 1));
      if (bad_epochs_ >= cfg_.patience) {
        summary.early_stopped = true;
        break;
      }
      // Stop when another epoch of the same length would overrun the budget.
      const double elapsed = spent + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (cfg_.time_budget_minutes > 0 && elapsed + em.seconds > cfg_.time_budget_minutes * 60) {
        summary.budget_stopped = true;
        break;
      }
    }
    summary.epochs_run = epochs_done_;
    summary.seconds = spent + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return summary;
  }

  Checkpoint snapshot(bool with_optimizer) {
    Checkpoint c;
    capture_model(*model_, c);
    if (with_optimizer) {
      optim_->save(c);
      c.add("train.progress", Shape{5},
            {float(epochs_done_), float(best_correct_), float(best_total_), float(best_epoch_), float(bad_epochs_)});
    }
    c.config = cfg_.to_text();
    return c;
  }

 private:
  void restore(const Checkpoint& c, std::size_t& start_epoch) {
    restore_model(*model_, c);
    optim_->load(c);
    const auto& p = c.at("train.progress").data;
    epochs_done_ = static_cast<std::size_t>(p.at(0));
    best_correct_ = static_cast<std::size_t>(p.at(1));
    best_total_ = static_cast<std::size_t>(p.at(2));
    best_epoch_ = static_cast<std::size_t>(p.at(3));
    bad_epochs_ = static_cast<std::size_t>(p.at(4));
    start_epoch = epochs_done_;
  }

  RunConfig cfg_;
  const TrainData& data_;
  std::unique_ptr<RealGin<float>> model_;
  std::unique_ptr<Adam<float>> optim_;
  std::size_t epochs_done_ = 0, best_correct_ = 0, best_total_ = 0, best_epoch_ = 0, bad_epochs_ = 0;
};

/// Rebuilds a model from a checkpoint's config snapshot and arrays.
inline std::unique_ptr<RealGin<float>> model_from_checkpoint(const Checkpoint& c, RunConfig* cfg_out = nullptr) {
  RunConfig cfg;
  cfg.apply_text(c.config, "checkpoint config");
  const std::size_t vocab = c.at("text.embedding").shape.at(0);
  auto model = std::make_unique<RealGin<float>>(cfg.model_config(vocab), cfg.seed);
  restore_model(*model, c);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

}  // namespace rgin
