#pragma once

#include <png.h>
#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgin/synth.hpp"

namespace rgin::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kDatasetVersion = 1;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 channels
};

inline void write_png(const fs::path& path, const Image& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.rgb.data(), 0, nullptr))
    throw DataError(path.string() + ": " + pi.message);
}

inline Image read_png(const fs::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw DataError(path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  Image img{static_cast<int>(pi.width), static_cast<int>(pi.height), {}};
  img.rgb.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw DataError(path.string() + ": " + msg);
  }
  return img;
}

inline std::string sha256_hex(const std::vector<std::string>& chunks) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& c : chunks) EVP_DigestUpdate(ctx, c.data(), c.size());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream out;
  for (unsigned i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return out.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// One line of a split's JSONL file.
struct Record {
  std::string scene_id;
  synth::Split split = synth::Split::Train;
  std::string expression;
  synth::TemplateClass kind = synth::TemplateClass::Category;
  std::array<double, 4> gt_box{};  // normalized x, y (top-left), w, h
  std::string image;               // relative to the dataset root
  std::uint64_t seed = 0;
  std::vector<synth::Object> objects;
  int referent = -1;
};

inline json to_json(const Record& r) {
  json objs = json::array();
  for (const auto& o : r.objects)
    objs.push_back({{"shape", synth::name(o.shape)},
                    {"color", synth::name(o.color)},
                    {"size", synth::name(o.size)},
                    {"x", o.x},
                    {"y", o.y},
                    {"extent", o.extent}});
  return {{"scene_id", r.scene_id},     {"split", synth::name(r.split)},
          {"expression", r.expression}, {"template", synth::name(r.kind)},
          {"gt_box", r.gt_box},         {"image", r.image},
          {"seed", r.seed},             {"referent", r.referent},
          {"objects", objs}};
}

template <class Names>
int index_of(const Names& names, const std::string& s, const char* what) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (s == names[i]) return static_cast<int>(i);
  throw DataError(std::string("unknown ") + what + " '" + s + "'");
}

inline Record record_from_json(const json& j) {
  Record r;
  r.scene_id = j.at("scene_id").get<std::string>();
  r.split = synth::parse_split(j.at("split").get<std::string>());
  r.expression = j.at("expression").get<std::string>();
  r.kind = synth::parse_template(j.at("template").get<std::string>());
  r.gt_box = j.at("gt_box").get<std::array<double, 4>>();
  r.image = j.at("image").get<std::string>();
  r.seed = j.value("seed", std::uint64_t{0});
  r.referent = j.value("referent", -1);
  if (j.contains("objects"))
    for (const auto& o : j.at("objects")) {
      synth::Object ob;
      ob.shape = static_cast<synth::ShapeKind>(index_of(synth::kShapeNames, o.at("shape"), "shape"));
      ob.color = static_cast<synth::ColorKind>(index_of(synth::kColorNames, o.at("color"), "color"));
      ob.size = static_cast<synth::SizeKind>(index_of(synth::kSizeNames, o.at("size"), "size"));
      ob.x = o.at("x");
      ob.y = o.at("y");
      ob.extent = o.at("extent");
      r.objects.push_back(ob);
    }
  for (double v : r.gt_box)
    if (!(v >= 0 && v <= 1)) throw DataError(r.scene_id + ": gt_box outside [0,1]");
  if (r.gt_box[0] + r.gt_box[2] > 1 + 1e-9 || r.gt_box[1] + r.gt_box[3] > 1 + 1e-9 || r.gt_box[2] <= 0 ||
      r.gt_box[3] <= 0)
    throw DataError(r.scene_id + ": gt_box does not fit the canvas");
  return r;
}

inline synth::Scene scene_of(const Record& r) {
  return synth::Scene{r.seed, r.objects, r.referent, r.kind, r.expression};
}

struct Manifest {
  int version = kDatasetVersion;
  std::uint64_t seed = 0;
  synth::SplitCounts counts;
  synth::TemplateMix mix;
  int image_size = synth::kCanvas;
  std::string content_hash;
};

inline json to_json(const Manifest& m) {
  json mix;
  for (std::size_t i = 0; i < 4; ++i) mix[synth::kTemplateNames[i]] = m.mix.weights[i];
  return {{"version", m.version},
          {"seed", m.seed},
          {"counts", {{"train", m.counts.train}, {"val", m.counts.val}, {"test", m.counts.test}}},
          {"mix", mix},
          {"image_size", m.image_size},
          {"vocabulary", "vocab.txt"},
          {"splits", {{"train", "train.jsonl"}, {"val", "val.jsonl"}, {"test", "test.jsonl"}}},
          {"content_hash", m.content_hash}};
}

inline Manifest read_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.json";
  if (!fs::exists(p)) throw DataError("dataset not found: " + p.string() + " does not exist");
  json j;
  try {
    j = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
  Manifest m;
  m.version = j.at("version");
  if (m.version != kDatasetVersion)
    throw DataError(p.string() + ": unsupported dataset version " + std::to_string(m.version));
  m.seed = j.at("seed");
  m.counts = {j.at("counts").at("train"), j.at("counts").at("val"), j.at("counts").at("test")};
  for (std::size_t i = 0; i < 4; ++i) m.mix.weights[i] = j.at("mix").value(synth::kTemplateNames[i], 0.0);
  m.image_size = j.value("image_size", synth::kCanvas);
  m.content_hash = j.value("content_hash", "");
  return m;
}

struct WriteSummary {
  Manifest manifest;
  std::size_t scenes = 0;
  std::size_t oracle_passed = 0;
};

/// Writes manifest.json, vocab.txt, {train,val,test}.jsonl and images/*.png.
inline WriteSummary write_dataset(const fs::path& root, std::uint64_t seed, const synth::SplitCounts& counts,
                                  const synth::TemplateMix& mix, const synth::GeneratorParams& gp = {},
                                  unsigned threads = 1) {
  auto scenes = synth::generate(seed, counts, mix, gp, threads);
  fs::create_directories(root / "images");
  {
    std::ofstream v(root / "vocab.txt");
    synth::make_vocabulary().save(v);
  }
  std::array<std::string, 3> lines;
  WriteSummary summary;
  std::vector<std::string> digest_parts;
  for (const auto& g : scenes) {
    std::ostringstream id;
    id << "s" << std::setw(6) << std::setfill('0') << g.index;
    Record r{id.str(), g.split, g.scene.expression, g.scene.kind, g.scene.gt_box(), "images/" + id.str() + ".png",
             g.scene.seed, g.scene.objects, g.scene.referent};
    Image img{synth::kCanvas, synth::kCanvas, synth::render(g.scene)};
    write_png(root / r.image, img);
    lines[static_cast<int>(g.split)] += to_json(r).dump() + "\n";
    digest_parts.emplace_back(img.rgb.begin(), img.rgb.end());
    summary.oracle_passed += synth::expression_is_unique(g.scene);
    ++summary.scenes;
  }
  for (synth::Split s : {synth::Split::Train, synth::Split::Val, synth::Split::Test}) {
    std::ofstream out(root / (std::string(synth::name(s)) + ".jsonl"));
    out << lines[static_cast<int>(s)];
    digest_parts.push_back(lines[static_cast<int>(s)]);
  }
  Manifest m{kDatasetVersion, seed, counts, mix, synth::kCanvas, sha256_hex(digest_parts)};
  std::ofstream(root / "manifest.json") << to_json(m).dump(2) << "\n";
  summary.manifest = m;
  return summary;
}

inline std::vector<Record> read_split(const fs::path& root, synth::Split split) {
  const fs::path p = root / (std::string(synth::name(split)) + ".jsonl");
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::vector<Record> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(p.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline Vocabulary read_vocabulary(const fs::path& root) {
  std::ifstream in(root / "vocab.txt");
  if (!in) throw DataError("cannot open " + (root / "vocab.txt").string());
  return Vocabulary::load(in);
}

/// A split held in memory: records plus decoded 8-bit images.
struct LoadedSplit {
  std::vector<Record> records;
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::vector<int>> tokens;
};

inline LoadedSplit load_split(const fs::path& root, synth::Split split, const Vocabulary& vocab,
                              std::size_t limit = 0) {
  LoadedSplit ls;
  ls.records = read_split(root, split);
  if (limit && ls.records.size() > limit) ls.records.resize(limit);
  for (const auto& r : ls.records) {
    auto img = read_png(root / r.image);
    if (img.width != synth::kCanvas || img.height != synth::kCanvas)
      throw DataError(r.image + ": expected " + std::to_string(synth::kCanvas) + "x" +
                      std::to_string(synth::kCanvas) + " image");
    ls.images.push_back(std::move(img.rgb));
    ls.tokens.push_back(tokenize(r.expression, vocab).ids);
  }
  return ls;
}

}  // namespace rgin::io
