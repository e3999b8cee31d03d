#pragma once

// Versioned binary checkpoint: header {magic, format version, scalar width,
// config hash, step, embedded config text}, then named tensors as
// (name length, name, rank, dims, raw little-endian values).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tse/errors.hpp"
#include "tse/tensor.hpp"

namespace tse {

inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'E', 'C', 'K', 'P', 'T', '1'};

template <class S>
struct Checkpoint {
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

namespace detail {

template <class T>
void write_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T read_pod(const char*& p, const char* end) {
  if (p + sizeof(T) > end) throw IoError("checkpoint truncated");
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace detail

template <class S>
void Checkpoint<S>::save(const std::string& path) const {
  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::write_pod<std::uint32_t>(out, 1);  // format version
  detail::write_pod<std::uint32_t>(out, sizeof(S));
  detail::write_pod<std::uint64_t>(out, config_hash);
  detail::write_pod<std::uint64_t>(out, step);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_text.size()));
  out.append(config_text);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d)
      detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.dim(d)));
    const char* raw = reinterpret_cast<const char*>(tensor.data());
    out.append(raw, tensor.size() * sizeof(S));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short checkpoint write: " + path);
}

template <class S>
Checkpoint<S> Checkpoint<S>::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const char* p = bytes.data();
  const char* end = p + bytes.size();

  if (bytes.size() < 8 || std::memcmp(p, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  p += 8;
  const auto version = detail::read_pod<std::uint32_t>(p, end);
  if (version != 1) throw IoError("unsupported checkpoint version");
  const auto scalar_size = detail::read_pod<std::uint32_t>(p, end);
  if (scalar_size != sizeof(S))
    throw IoError("checkpoint precision does not match this build path");

  Checkpoint ckpt;
  ckpt.config_hash = detail::read_pod<std::uint64_t>(p, end);
  ckpt.step = detail::read_pod<std::uint64_t>(p, end);
  const auto cfg_len = detail::read_pod<std::uint32_t>(p, end);
  if (p + cfg_len > end) throw IoError("checkpoint truncated");
  ckpt.config_text.assign(p, cfg_len);
  p += cfg_len;

  const auto count = detail::read_pod<std::uint32_t>(p, end);
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(p, end);
    if (p + name_len > end) throw IoError("checkpoint truncated");
    std::string name(p, name_len);
    p += name_len;
    const auto rank = detail::read_pod<std::uint32_t>(p, end);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = detail::read_pod<std::uint64_t>(p, end);
      shape.push_back(static_cast<int>(dim));
      numel *= static_cast<std::int64_t>(dim);
    }
    if (p + numel * static_cast<std::int64_t>(sizeof(S)) > end)
      throw IoError("checkpoint truncated");
    std::vector<S> values(static_cast<std::size_t>(numel));
    std::memcpy(values.data(), p, static_cast<std::size_t>(numel) * sizeof(S));
    p += numel * sizeof(S);
    ckpt.tensors.emplace_back(std::move(name), Tensor<S>::from(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace tse
