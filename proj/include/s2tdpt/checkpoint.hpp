#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "s2tdpt/config.hpp"
#include "s2tdpt/data.hpp"

namespace s2tdpt {

// Checkpoint layout (all integers little-endian):
//   "S2TDPT"                      6-byte magic
//   u32 version
//   u32 n, n bytes                config text (emit_config)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               float32 data[prod(dims)]
// Parameters come first, then BN running statistics.
inline constexpr char kCheckpointMagic[6] = {'S', '2', 'T', 'D', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string origin) : bytes_(b), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      fail(ErrorCategory::data, origin_ + ": truncated checkpoint at byte offset " + std::to_string(pos_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const RunConfig& cfg, Model<T>& model) {
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(buf, kCheckpointVersion);
  const std::string text = emit_config(cfg);
  detail::put_u32(buf, static_cast<std::uint32_t>(text.size()));
  buf += text;
  auto params = model.parameters();
  auto buffers = model.buffers();
  detail::put_u32(buf, static_cast<std::uint32_t>(params.size() + buffers.size()));
  auto put_tensor = [&](const std::string& name, const Tensor<T>& t) {
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (T v : t.data()) detail::put_f32(buf, static_cast<float>(v));
  };
  for (auto& p : params) put_tensor(p.name, p.var->value());
  for (auto& b : buffers) put_tensor(b.name, *b.tensor);
  return buf;
}

template <class T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, Model<T>& model) {
  const std::string buf = serialize_checkpoint(cfg, model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCategory::io, "cannot write checkpoint " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCategory::io, "write failed: " + path);
}

template <class T>
struct LoadedCheckpoint {
  RunConfig config;
  Model<T> model;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  require(std::filesystem::exists(path), ErrorCategory::config, "checkpoint not found: " + path);
  const auto bytes = read_file_bytes(path);
  detail::ByteReader r(bytes, path);
  const std::string magic = r.str(sizeof kCheckpointMagic);
  require(magic == std::string(kCheckpointMagic, sizeof kCheckpointMagic), ErrorCategory::data,
          path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCategory::data,
          path + ": unsupported checkpoint version " + std::to_string(version));
  const std::string text = r.str(r.u32());
  RunConfig cfg = parse_config(text);
  cfg.validate();
  Model<T> model(cfg.model, cfg.train.seed);

  std::map<std::string, Tensor<T>*> slots;
  for (auto& p : model.parameters()) slots[p.name] = &p.var->mutable_value();
  for (auto& b : model.buffers()) slots[b.name] = b.tensor;

  const std::uint32_t count = r.u32();
  require(count == slots.size(), ErrorCategory::data,
          path + ": checkpoint holds " + std::to_string(count) + " tensors, model expects " + std::to_string(slots.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    auto it = slots.find(name);
    require(it != slots.end(), ErrorCategory::data, path + ": unexpected tensor '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    require(shape == it->second->shape(), ErrorCategory::data,
            path + ": tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                shape_str(it->second->shape()));
    for (auto& v : it->second->data()) v = static_cast<T>(r.f32());
  }
  require(r.done(), ErrorCategory::data, path + ": trailing bytes after last tensor");
  return {std::move(cfg), std::move(model)};
}

}  // namespace s2tdpt
