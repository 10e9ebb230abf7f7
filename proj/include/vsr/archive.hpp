#pragma once

#include "vsr/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace vsr {

// Single-file archive of named float32 tensors plus string metadata.
// Layout (all integers little-endian):
//   magic "VSRA", u32 version
//   u32 meta count,   each: u32 key len, key bytes, u32 value len, value bytes
//   u32 tensor count, each: u32 name len, name bytes, u32 h, u32 w, u32 c,
//                           h*w*c float32 values
// Used for checkpoints, feature-extractor weights and any named-tensor blob.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail("archive: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is) {
  std::uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, std::uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_str(std::istream& is) {
  std::uint32_t len = get_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) fail("archive: truncated string");
  return s;
}

}  // namespace detail

struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  void add(const std::string& name, const Tensor<float>& t) { tensors.emplace_back(name, t); }

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor<float>& get(const std::string& name) const {
    const Tensor<float>* t = find(name);
    if (!t) fail("archive: missing tensor '" + name + "'");
    return *t;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("archive: cannot write " + path);
    os.write("VSRA", 4);
    detail::put_u32(os, kVersion);
    detail::put_u32(os, std::uint32_t(meta.size()));
    for (const auto& [k, v] : meta) {
      detail::put_str(os, k);
      detail::put_str(os, v);
    }
    detail::put_u32(os, std::uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
      detail::put_str(os, name);
      detail::put_u32(os, std::uint32_t(t.h));
      detail::put_u32(os, std::uint32_t(t.w));
      detail::put_u32(os, std::uint32_t(t.c));
      for (std::int64_t i = 0; i < t.size(); ++i) detail::put_f32(os, t.data[i]);
    }
    if (!os) fail("archive: write failed for " + path);
  }

  static TensorArchive load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("archive: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VSRA", 4) != 0) fail("archive: bad magic in " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != kVersion)
      fail("archive: unsupported version " + std::to_string(version) + " in " + path);
    TensorArchive a;
    std::uint32_t nmeta = detail::get_u32(is);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
      std::string k = detail::get_str(is);
      a.meta[k] = detail::get_str(is);
    }
    std::uint32_t nt = detail::get_u32(is);
    for (std::uint32_t i = 0; i < nt; ++i) {
      std::string name = detail::get_str(is);
      int h = int(detail::get_u32(is));
      int w = int(detail::get_u32(is));
      int c = int(detail::get_u32(is));
      Tensor<float> t(h, w, c);
      for (std::int64_t j = 0; j < t.size(); ++j) t.data[j] = detail::get_f32(is);
      if (!is) fail("archive: truncated tensor '" + name + "' in " + path);
      a.tensors.emplace_back(std::move(name), std::move(t));
    }
    return a;
  }
};

}  // namespace vsr
