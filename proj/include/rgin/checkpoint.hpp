#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgin/model.hpp"

namespace rgin {

inline constexpr char kCheckpointMagic[4] = {'R', 'G', 'I', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Named float32 arrays plus the config text they were produced under.
struct Checkpoint {
  std::vector<NamedArray> arrays;
  std::string config;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  const NamedArray& at(const std::string& name) const {
    if (auto* a = find(name)) return *a;
    throw CheckpointError("checkpoint has no array '" + name + "'");
  }
  void add(std::string name, Shape shape, std::vector<float> data) {
    if (shape_numel(shape) != data.size())
      throw CheckpointError("array '" + name + "': shape " + shape_str(shape) + " does not match " +
                            std::to_string(data.size()) + " values");
    arrays.push_back({std::move(name), std::move(shape), std::move(data)});
  }
};

namespace ckpt_detail {

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <class U>
void put(std::ostream& out, U v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& in, const std::string& what) {
  U v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw CheckpointError("truncated checkpoint reading " + what);
  return to_le(v);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& what, std::size_t limit = 1u << 28) {
  auto n = get<std::uint32_t>(in, what);
  if (n > limit) throw CheckpointError("implausible length " + std::to_string(n) + " for " + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw CheckpointError("truncated checkpoint reading " + what);
  return s;
}

}  // namespace ckpt_detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  using namespace ckpt_detail;
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    put_string(out, a.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) put<std::uint64_t>(out, e);
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * 4));
    } else {
      for (float f : a.data) put<float>(out, f);
    }
  }
  put_string(out, c.config);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using namespace ckpt_detail;
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  auto count = get<std::uint32_t>(in, "array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = get_string(in, "array name", 4096);
    auto rank = get<std::uint32_t>(in, a.name + " rank");
    if (rank > 8) throw CheckpointError("array '" + a.name + "' has implausible rank " + std::to_string(rank));
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::uint64_t>(in, a.name + " extent"));
    const std::size_t n = shape_numel(a.shape);
    if (n > (std::size_t{1} << 32)) throw CheckpointError("array '" + a.name + "' is implausibly large");
    a.data.resize(n);
    if (!in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * 4)))
      throw CheckpointError("truncated checkpoint reading " + a.name);
    if constexpr (std::endian::native == std::endian::big)
      for (auto& f : a.data) f = to_le(f);
    c.arrays.push_back(std::move(a));
  }
  c.config = get_string(in, "config snapshot");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    write_checkpoint(out, c);
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

/// Appends every parameter and batch-norm buffer of the model.
template <class T>
void capture_model(RealGin<T>& model, Checkpoint& c) {
  auto st = model.state();
  for (const auto& [name, t] : st.params) c.add(name, t.shape(), {t.data().begin(), t.data().end()});
  for (const auto& [name, buf] : st.buffers) c.add(name, Shape{buf->size()}, {buf->begin(), buf->end()});
}

/// Overwrites the model's tensors and buffers; every one must be present with its exact shape.
template <class T>
void restore_model(RealGin<T>& model, const Checkpoint& c) {
  auto st = model.state();
  for (auto& [name, t] : st.params) {
    const auto& a = c.at(name);
    if (a.shape != t.shape())
      throw CheckpointError("array '" + name + "' has shape " + shape_str(a.shape) + ", model expects " +
                            shape_str(t.shape()));
    auto dst = t.mutable_data();
    std::copy(a.data.begin(), a.data.end(), dst.begin());
  }
  for (auto& [name, buf] : st.buffers) {
    const auto& a = c.at(name);
    if (a.data.size() != buf->size()) throw CheckpointError("buffer '" + name + "' has the wrong length");
    std::copy(a.data.begin(), a.data.end(), buf->begin());
  }
}

}  // namespace rgin
