#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgin/model.hpp"
#include "rgin/synth.hpp"

namespace rgin {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command needs, loadable from line-based `key = value` text.
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string out_dir = "runs/default";
  std::string checkpoint;  // empty: <out_dir>/best.ckpt where a checkpoint is needed

  // seeds
  std::uint64_t seed = 1;       // model init and batch order
  std::uint64_t data_seed = 1;  // dataset generation

  // data generation
  std::size_t num_scenes = 25000;
  std::string template_mix = "category=0.25,attribute=0.25,location=0.25,relational=0.25";
  unsigned gen_threads = 1;

  // model
  std::size_t image_size = 96;
  std::size_t fusion_channels = 64;
  std::size_t backbone_width = 1;  // multiplies the 8/16/32/64 backbone channels
  std::size_t embed_dim = 64;
  std::size_t text_dim = 128;
  std::size_t fusion_dim = 128;
  std::size_t att_dim = 64;
  std::size_t heads = 2;
  std::size_t num_priors = 3;
  std::string priors;  // "w:h,w:h,..." in grid units; empty means fit on the train split
  double lambda = 0.05;
  double slope = 0.1;
  double negative_weight = 1.0;
  std::string loss_reduction = "sum";  // sum | mean over the entries of a sample
  bool enable_afs = true;
  bool enable_garan = true;
  bool enable_att_loss = true;
  bool freeze_backbone = false;
  bool supervise_diffuse = false;
  bool position_embedding = true;

  // optimization
  double lr = 1e-3;
  std::size_t lr_halve_every = 10;
  std::size_t max_epochs = 60;
  std::size_t patience = 5;
  std::size_t batch_size = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t train_limit = 0;  // 0: whole split
  std::size_t val_limit = 0;
  bool resume = false;
  bool log_steps = false;
  unsigned loader_threads = 1;  // >1: batches are assembled ahead on a worker thread
  double time_budget_minutes = 0;  // 0: none

  // evaluation / benchmarking / visualization
  std::string split = "test";
  unsigned eval_threads = 1;
  std::size_t bench_iterations = 50;
  std::size_t bench_warmup = 5;
  std::string bench_mode = "single";  // single | parallel
  unsigned bench_threads = 2;
  std::string scene_ids;  // comma separated; empty: first `visualize_count` of the split
  std::size_t visualize_count = 8;

  using Setter = std::function<void(RunConfig&, const std::string&)>;
  using Getter = std::function<std::string(const RunConfig&)>;
  struct Field {
    Setter set;
    Getter get;
    std::string help;
  };

  static const std::map<std::string, Field>& fields();

  void set(const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.set(*this, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  std::string get(const std::string& key) const {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  /// Applies `key = value` lines; '#' starts a comment.
  void apply_text(const std::string& text, const std::string& origin = "<config>") {
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      auto trim = [](std::string s) {
        const char* ws = " \t\r";
        s.erase(0, s.find_first_not_of(ws));
        s.erase(s.find_last_not_of(ws) + 1);
        return s;
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      try {
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c;
    c.apply_text(ss.str(), path);
    return c;
  }

  void apply_env() {
    if (const char* s = std::getenv("RGIN_SEED")) set("seed", s);
  }

  std::string to_text() const {
    std::ostringstream out;
    for (const auto& [k, f] : fields()) out << k << " = " << f.get(*this) << "\n";
    return out.str();
  }

  void validate() const;

  std::vector<AnchorPrior> parsed_priors() const {
    std::vector<AnchorPrior> out;
    std::istringstream in(priors);
    for (std::string item; std::getline(in, item, ',');) {
      auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("priors: expected w:h, got '" + item + "'");
      AnchorPrior p{std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))};
      if (!(p.pw > 0 && p.ph > 0)) throw ConfigError("priors: shapes must be positive");
      out.push_back(p);
    }
    return out;
  }

  static std::string format_priors(const std::vector<AnchorPrior>& ps) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t i = 0; i < ps.size(); ++i) out << (i ? "," : "") << ps[i].pw << ":" << ps[i].ph;
    return out.str();
  }

  ModelConfig model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.backbone.image_size = image_size;
    m.backbone.fusion_channels = fusion_channels;
    m.backbone.stem_channels = 8 * backbone_width;
    m.backbone.c1 = 16 * backbone_width;
    m.backbone.c2 = 32 * backbone_width;
    m.backbone.c3 = 64 * backbone_width;
    m.vocab_size = vocab_size;
    m.embed_dim = embed_dim;
    m.text_dim = text_dim;
    m.fusion_dim = fusion_dim;
    m.att_dim = att_dim;
    m.heads = heads;
    if (!priors.empty()) m.priors = parsed_priors();
    m.slope = slope;
    m.lambda = lambda;
    m.negative_weight = negative_weight;
    m.reduction = parse_reduction(loss_reduction);
    m.enable_afs = enable_afs;
    m.enable_garan = enable_garan;
    m.enable_att_loss = enable_att_loss;
    m.freeze_backbone = freeze_backbone;
    m.supervise_diffuse = supervise_diffuse;
    m.position_embedding = position_embedding;
    return m;
  }

  std::string checkpoint_path(const std::string& fallback = "best.ckpt") const {
    return checkpoint.empty() ? out_dir + "/" + fallback : checkpoint;
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

template <class T>
T parse_number(const std::string& s) {
  std::size_t used = 0;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      T v = static_cast<T>(std::stod(s, &used));
      if (used == s.size()) return v;
    } else {
      if (!s.empty() && s[0] == '-') throw ConfigError("expected a non-negative integer, got '" + s + "'");
      T v = static_cast<T>(std::stoull(s, &used));
      if (used == s.size()) return v;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("cannot parse '" + s + "' as a number");
}

inline bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

template <class T>
RunConfig::Field num(T RunConfig::* m, std::string help) {
  return {[m](RunConfig& c, const std::string& s) { c.*m = parse_number<T>(s); },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*m);
            else return std::to_string(c.*m);
          },
          std::move(help)};
}

inline RunConfig::Field flag(bool RunConfig::* m, std::string help) {
  return {[m](RunConfig& c, const std::string& s) { c.*m = parse_bool(s); },
          [m](const RunConfig& c) { return std::string(c.*m ? "1" : "0"); }, std::move(help)};
}

inline RunConfig::Field text(std::string RunConfig::* m, std::string help) {
  return {[m](RunConfig& c, const std::string& s) { c.*m = s; }, [m](const RunConfig& c) { return c.*m; },
          std::move(help)};
}

}  // namespace config_detail

inline const std::map<std::string, RunConfig::Field>& RunConfig::fields() {
  using namespace config_detail;
  using C = RunConfig;
  static const std::map<std::string, Field> table{
      {"data_dir", text(&C::data_dir, "dataset directory")},
      {"out_dir", text(&C::out_dir, "run directory for checkpoints, logs and artifacts")},
      {"checkpoint", text(&C::checkpoint, "checkpoint to read (default <out_dir>/best.ckpt)")},
      {"seed", num(&C::seed, "model initialization and batch-order seed (RGIN_SEED overrides)")},
      {"data_seed", num(&C::data_seed, "dataset generation seed")},
      {"num_scenes", num(&C::num_scenes, "total scenes, split 80/10/10")},
      {"template_mix", text(&C::template_mix, "template fractions, e.g. category=0.5,relational=0.5")},
      {"gen_threads", num(&C::gen_threads, "threads for scene generation")},
      {"image_size", num(&C::image_size, "canvas side in pixels")},
      {"fusion_channels", num(&C::fusion_channels, "channels m of the projected maps")},
      {"backbone_width", num(&C::backbone_width, "multiplier on backbone block channels")},
      {"embed_dim", num(&C::embed_dim, "word embedding size")},
      {"text_dim", num(&C::text_dim, "GRU hidden size n")},
      {"fusion_dim", num(&C::fusion_dim, "multimodal fusion size d")},
      {"att_dim", num(&C::att_dim, "attention projection size")},
      {"heads", num(&C::heads, "GARAN heads k")},
      {"num_priors", num(&C::num_priors, "shape priors N per cell")},
      {"priors", text(&C::priors, "explicit priors w:h,... in grid units")},
      {"lambda", num(&C::lambda, "attention loss weight")},
      {"slope", num(&C::slope, "leaky ReLU negative slope")},
      {"loss_reduction", text(&C::loss_reduction, "pool per-entry losses of a sample by mean or sum")},
      {"negative_weight", num(&C::negative_weight, "confidence loss weight on negative entries")},
      {"enable_afs", flag(&C::enable_afs, "adaptive feature selection")},
      {"enable_garan", flag(&C::enable_garan, "global attentive reasoning")},
      {"enable_att_loss", flag(&C::enable_att_loss, "attention supervision in the total loss")},
      {"freeze_backbone", flag(&C::freeze_backbone, "exclude backbone blocks from optimization")},
      {"supervise_diffuse", flag(&C::supervise_diffuse, "also supervise diffuse gates")},
      {"position_embedding", flag(&C::position_embedding, "learned position embedding on the fused map")},
      {"lr", num(&C::lr, "initial Adam learning rate")},
      {"lr_halve_every", num(&C::lr_halve_every, "epochs between learning-rate halvings")},
      {"max_epochs", num(&C::max_epochs, "epoch limit")},
      {"patience", num(&C::patience, "early stop after this many epochs without val improvement")},
      {"batch_size", num(&C::batch_size, "mini-batch size")},
      {"adam_beta1", num(&C::adam_beta1, "Adam first-moment decay")},
      {"adam_beta2", num(&C::adam_beta2, "Adam second-moment decay")},
      {"adam_eps", num(&C::adam_eps, "Adam epsilon")},
      {"train_limit", num(&C::train_limit, "use only the first N train scenes (0: all)")},
      {"val_limit", num(&C::val_limit, "use only the first N val scenes (0: all)")},
      {"resume", flag(&C::resume, "continue from <out_dir>/last.ckpt")},
      {"log_steps", flag(&C::log_steps, "also log every step's losses to steps.jsonl")},
      {"loader_threads", num(&C::loader_threads, "batch assembly threads (1: deterministic inline)")},
      {"time_budget_minutes", num(&C::time_budget_minutes, "stop after the epoch that exceeds this")},
      {"split", text(&C::split, "split for eval and visualize")},
      {"eval_threads", num(&C::eval_threads, "threads for evaluation")},
      {"bench_iterations", num(&C::bench_iterations, "timed forward passes")},
      {"bench_warmup", num(&C::bench_warmup, "untimed warmup passes")},
      {"bench_mode", text(&C::bench_mode, "single or parallel")},
      {"bench_threads", num(&C::bench_threads, "workers in parallel mode")},
      {"scene_ids", text(&C::scene_ids, "comma separated scene ids to visualize")},
      {"visualize_count", num(&C::visualize_count, "scenes to visualize when scene_ids is empty")},
  };
  return table;
}

inline void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(image_size >= 16 && image_size % 16 == 0, "image_size must be a positive multiple of 16");
  need(fusion_channels > 0 && backbone_width > 0 && embed_dim > 0 && text_dim > 0 && fusion_dim > 0 && att_dim > 0,
       "model dimensions must be positive");
  need(heads > 0 && fusion_channels % heads == 0, "heads must divide fusion_channels");
  need(num_priors > 0, "num_priors must be positive");
  if (!priors.empty()) need(parsed_priors().size() == num_priors, "priors must list num_priors shapes");
  need(lambda >= 0, "lambda must be non-negative");
  need(slope > 0 && slope < 1, "slope must lie in (0,1)");
  need(negative_weight >= 0, "negative_weight must be non-negative");
  need(loss_reduction == "mean" || loss_reduction == "sum", "loss_reduction must be mean or sum");
  need(lr > 0, "lr must be positive");
  need(lr_halve_every > 0, "lr_halve_every must be positive");
  need(batch_size >= 2, "batch_size must be at least 2 (batch norm needs batch statistics)");
  need(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "Adam betas must lie in [0,1)");
  need(adam_eps > 0, "adam_eps must be positive");
  need(num_scenes > 0, "num_scenes must be positive");
  need(gen_threads > 0 && loader_threads > 0 && eval_threads > 0 && bench_threads > 0,
       "thread counts must be positive");
  need(bench_mode == "single" || bench_mode == "parallel", "bench_mode must be single or parallel");
  need(split == "train" || split == "val" || split == "test", "split must be train, val or test");
  synth::TemplateMix::parse(template_mix);
}

}  // namespace rgin
