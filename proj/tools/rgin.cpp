#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "rgin/bench.hpp"
#include "rgin/blas.hpp"
#include "rgin/gradcheck_suite.hpp"
#include "rgin/train.hpp"
#include "rgin/visualize.hpp"

namespace fs = std::filesystem;
using namespace rgin;

namespace {

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

/// Every config key doubles as a --key flag on every subcommand.
Command add_command(CLI::App& root, const std::string& name, const std::string& help) {
  Command c;
  c.app = root.add_subcommand(name, help);
  return c;
}

void bind_flags(Command& c) {
  c.app->add_option("--config", c.config_path, "line-based key = value config file");
  for (const auto& [key, field] : RunConfig::fields()) {
    std::string dashed = key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    std::string names = "--" + key + (dashed != key ? ",--" + dashed : "");
    c.app->add_option(names, c.overrides[key], field.help);
  }
}

RunConfig resolve(const Command& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = RunConfig::load(c.config_path);
  cfg.apply_env();
  for (const auto& [key, _] : RunConfig::fields()) {
    std::string dashed = key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (c.app->count("--" + key) > 0) cfg.set(key, c.overrides.at(key));
  }
  cfg.validate();
  return cfg;
}

int cmd_gen_data(const RunConfig& cfg) {
  auto counts = synth::SplitCounts::from_total(cfg.num_scenes);
  auto mix = synth::TemplateMix::parse(cfg.template_mix);
  auto s = io::write_dataset(cfg.data_dir, cfg.data_seed, counts, mix, {}, cfg.gen_threads);
  std::cout << "wrote " << s.scenes << " scenes to " << cfg.data_dir << " (train " << counts.train << ", val "
            << counts.val << ", test " << counts.test << ")\n";
  std::cout << "predicate oracle: " << s.oracle_passed << "/" << s.scenes << " unique ("
            << std::setprecision(4) << 100.0 * double(s.oracle_passed) / double(s.scenes) << "%)\n";
  std::cout << "manifest hash: " << s.manifest.content_hash << "\n";
  return s.oracle_passed == s.scenes ? 0 : 1;
}

int cmd_train(const RunConfig& cfg) {
  auto data = load_train_data(cfg);
  std::cout << "train " << data.train.records.size() << " / val " << data.val.records.size() << " scenes\n";
  Trainer trainer(cfg, data);
  std::cout << "priors " << trainer.config().priors << "; " << trainer.model().trainable().count()
            << " trainable parameters\n";
  auto s = trainer.run(&std::cout);
  std::cout << "done: " << s.epochs_run << " epochs, best val@0.5 " << s.best_val << " at epoch " << s.best_epoch
            << (s.early_stopped ? " (early stop)" : "") << (s.budget_stopped ? " (time budget)" : "") << ", "
            << s.seconds << "s\n";
  std::cout << "checkpoints: " << trainer.out("best.ckpt").string() << ", " << trainer.out("last.ckpt").string()
            << "\n";
  return 0;
}

void print_report(const PrecisionReport& r) {
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "precision@0.5 overall " << r.precision() << " (" << r.correct << "/" << r.total << ")\n";
  for (int t = 0; t < 4; ++t) {
    auto k = static_cast<synth::TemplateClass>(t);
    std::cout << "precision@0.5 " << synth::name(k) << " " << r.precision(k) << " (" << r.correct_by[t] << "/"
              << r.total_by[t] << ")\n";
  }
}

int cmd_eval(const RunConfig& cfg) {
  auto ckpt = load_checkpoint(cfg.checkpoint_path());
  auto model = model_from_checkpoint(ckpt);
  io::read_manifest(cfg.data_dir);
  auto vocab = io::read_vocabulary(cfg.data_dir);
  auto split = io::load_split(cfg.data_dir, synth::parse_split(cfg.split), vocab);
  ModelPredictor<float> predictor(*model);
  std::cout << "split " << cfg.split << ", checkpoint " << cfg.checkpoint_path() << "\n";
  print_report(evaluate(predictor, split, 64, cfg.eval_threads));
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  std::cout << std::left << std::setw(18) << "case" << std::right << std::setw(9) << "entries" << std::setw(9)
            << "refined" << std::setw(16) << "max_rel_error"
            << "  result\n";
  for (const auto& c : gradsuite::all_cases()) {
    auto r = c.run({});
    ok = ok && r.passed;
    std::cout << std::left << std::setw(18) << c.name << std::right << std::setw(9) << r.entries << std::setw(9)
              << r.refined << std::setw(16) << std::scientific << std::setprecision(3) << r.max_rel_error
              << std::defaultfloat << "  " << (r.passed ? "PASS" : "FAIL") << "\n";
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_bench(const RunConfig& cfg) {
  std::unique_ptr<RealGin<float>> model;
  std::string source;
  if (!cfg.checkpoint.empty() || fs::exists(cfg.checkpoint_path())) {
    model = model_from_checkpoint(load_checkpoint(cfg.checkpoint_path()));
    source = cfg.checkpoint_path();
  } else {
    model = std::make_unique<RealGin<float>>(cfg.model_config(synth::make_vocabulary().size()), cfg.seed);
    source = "random initialization from config";
  }
  auto input = bench_input<float>(model->config().backbone.image_size);
  auto r = benchmark(*model, input, cfg.bench_iterations, cfg.bench_warmup, cfg.bench_mode, cfg.bench_threads);
  const auto& m = model->config();
  std::cout << "model: " << source << " (afs " << m.enable_afs << ", garan " << m.enable_garan << ", heads "
            << m.heads << ")\n";
  std::cout << "mode " << r.mode << ", threads " << r.threads << ", warmup " << r.warmup << ", iterations "
            << r.iterations << "\n";
  std::cout << std::fixed << std::setprecision(3);
  std::cout << "latency_ms mean " << r.latency_ms.mean << " median " << r.latency_ms.median << " p95 "
            << r.latency_ms.p95 << " ci95 +/-" << r.latency_ms.ci95 << "\n";
  std::cout << "fps " << r.fps << "\n";
  return 0;
}

int cmd_visualize(const RunConfig& cfg) {
  auto model = model_from_checkpoint(load_checkpoint(cfg.checkpoint_path()));
  auto vocab = io::read_vocabulary(cfg.data_dir);
  auto split = io::load_split(cfg.data_dir, synth::parse_split(cfg.split), vocab);
  std::vector<std::size_t> picks;
  if (cfg.scene_ids.empty()) {
    for (std::size_t i = 0; i < std::min(cfg.visualize_count, split.records.size()); ++i) picks.push_back(i);
  } else {
    std::istringstream in(cfg.scene_ids);
    for (std::string id; std::getline(in, id, ',');) {
      auto it = std::find_if(split.records.begin(), split.records.end(),
                             [&](const io::Record& r) { return r.scene_id == id; });
      if (it == split.records.end()) throw io::DataError("scene " + id + " is not in split " + cfg.split);
      picks.push_back(static_cast<std::size_t>(it - split.records.begin()));
    }
  }
  const fs::path out = fs::path(cfg.out_dir) / "visualize";
  for (auto i : picks) {
    auto v = visualize_scene(*model, split, i, out);
    std::cout << v.scene_id << ": iou " << v.iou << ", " << v.files.size() << " files\n";
  }
  std::cout << "wrote " << picks.size() << " scenes to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  blas::set_threads(1);
  CLI::App app{"RealGIN referring-expression grounding on synthetic shapes"};
  app.require_subcommand(1);
  std::vector<std::pair<std::string, std::string>> specs{
      {"gen-data", "generate the synthetic dataset"},
      {"train", "train a model and write checkpoints and metrics"},
      {"eval", "precision@0.5 of a checkpoint on a split"},
      {"gradcheck", "finite-difference gradient checks in double precision"},
      {"bench", "forward-pass latency report"},
      {"visualize", "boxes, attention heatmaps and AFS weights for scenes"}};
  std::vector<Command> commands;
  for (const auto& [n, h] : specs) commands.push_back(add_command(app, n, h));
  for (auto& c : commands) bind_flags(c);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (auto& c : commands) {
      if (!c.app->parsed()) continue;
      const std::string name = c.app->get_name();
      if (name == "gradcheck") return cmd_gradcheck();
      RunConfig cfg = resolve(c);
      if (name == "gen-data") return cmd_gen_data(cfg);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "bench") return cmd_bench(cfg);
      if (name == "visualize") return cmd_visualize(cfg);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}
