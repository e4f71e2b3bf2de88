#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "accr/errors.hpp"
#include "accr/tensor.hpp"
#include "json.hpp"

namespace accr {

/// Single-file tensor archive:
///   "ACCRCKPT" | u32 version | u32 manifest_len | manifest JSON
///   | u32 count | count x (u32 name_len | name | u32 rank | u64 dims[rank] | f32 data[])
/// All integers and floats little-endian.
struct Archive {
  static constexpr char kMagic[8] = {'A', 'C', 'C', 'R', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;

  const Tensor<float>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("archive has no tensor '" + name + "'");
    return it->second;
  }

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

namespace io {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <class U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::string& where) {
  U v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw IoError("truncated file: " + where);
  return to_little(v);
}

inline void put_floats(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put(os, p[i]);
  }
}

inline void get_floats(std::istream& is, float* p, std::size_t n, const std::string& where) {
  if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float))))
    throw IoError("truncated file: " + where);
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < n; ++i) p[i] = to_little(p[i]);
}

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a half-written file under the final name.
template <class Fn>
void atomic_write(const std::filesystem::path& path, Fn&& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    body(os);
    os.flush();
    if (!os) throw IoError("write failed for '" + path.string() + "' (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

}  // namespace io

inline void Archive::save(const std::filesystem::path& path) const {
  io::atomic_write(path, [&](std::ostream& os) {
    os.write(kMagic, 8);
    io::put<std::uint32_t>(os, kVersion);
    const std::string m = manifest.dump();
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.size()));
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) io::put<std::uint64_t>(os, d);
      io::put_floats(os, t.data(), t.size());
    }
  });
}

inline Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive '" + path.string() + "'");
  const std::string where = path.string();
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError("'" + where + "' is not an archive");
  if (io::get<std::uint32_t>(is, where) != kVersion) throw IoError("unsupported archive version in '" + where + "'");
  Archive a;
  std::string m(io::get<std::uint32_t>(is, where), '\0');
  if (!is.read(m.data(), static_cast<std::streamsize>(m.size()))) throw IoError("truncated manifest: " + where);
  try {
    a.manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest in '" + where + "': " + e.what());
  }
  const auto count = io::get<std::uint32_t>(is, where);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(io::get<std::uint32_t>(is, where), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("truncated name: " + where);
    const auto rank = io::get<std::uint32_t>(is, where);
    if (rank > 8) throw IoError("corrupt tensor rank in '" + where + "'");
    Shape s(rank);
    for (auto& d : s) d = io::get<std::uint64_t>(is, where);
    Tensor<float> t(s);
    io::get_floats(is, t.data(), t.size(), where);
    a.tensors.emplace(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace accr
