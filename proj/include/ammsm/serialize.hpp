#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ammsm/tensor.hpp"

// AMMT tensor container: magic "AMMT", u32 LE rank, rank x u32 LE dims, then
// raw little-endian f32 payload in row-major order. Checkpoints concatenate
// AMMT records into one blob with a JSON byte-offset index alongside.

namespace ammsm {

namespace detail {
inline void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xFF);
  b[1] = static_cast<char>((v >> 8) & 0xFF);
  b[2] = static_cast<char>((v >> 16) & 0xFF);
  b[3] = static_cast<char>((v >> 24) & 0xFF);
  buf.append(b, 4);
}

inline std::uint32_t get_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24);
}
}  // namespace detail

template <typename S>
std::string encode_ammt(const Tensor<S>& t) {
  std::string buf;
  buf.reserve(8 + t.shape().size() * 4 + static_cast<std::size_t>(t.numel()) * 4);
  buf.append("AMMT", 4);
  detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
  static_assert(sizeof(float) == 4);
  for (S v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::put_u32(buf, u);
  }
  return buf;
}

// Decodes one record starting at `off` within `buf`; advances `off`.
template <typename S>
Tensor<S> decode_ammt(const std::string& buf, std::size_t& off, const std::string& origin) {
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError(origin + ": " + what + " at byte offset " + std::to_string(off));
  };
  if (off + 8 > buf.size()) throw fail("truncated AMMT header");
  if (std::memcmp(buf.data() + off, "AMMT", 4) != 0) throw fail("bad magic (expected AMMT)");
  const std::uint32_t rank = detail::get_u32(buf.data() + off + 4);
  if (rank > 8) throw fail("implausible rank " + std::to_string(rank));
  if (off + 8 + 4ull * rank > buf.size()) throw fail("truncated dim list");
  Shape shape(rank);
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<Index>(detail::get_u32(buf.data() + off + 8 + 4 * i));
    if (shape[i] <= 0) throw fail("non-positive dimension");
    n *= static_cast<std::uint64_t>(shape[i]);
  }
  const std::size_t payload = off + 8 + 4ull * rank;
  if (payload + 4ull * n > buf.size()) throw fail("truncated tensor payload");
  std::vector<S> values(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t u = detail::get_u32(buf.data() + payload + 4 * i);
    float f;
    std::memcpy(&f, &u, 4);
    values[i] = static_cast<S>(f);
  }
  off = payload + 4ull * n;
  return Tensor<S>::from_vector(std::move(shape), std::move(values));
}

template <typename S>
void write_ammt(const std::filesystem::path& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const std::string buf = encode_ammt(t);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename S>
Tensor<S> read_ammt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  Tensor<S> t = decode_ammt<S>(buf, off, path.string());
  if (off != buf.size()) throw FormatError(path.string() + ": trailing bytes after tensor payload");
  return t;
}

// Checkpoint: blob of AMMT records at <path>, name -> byte offset index at
// <path>.index.json.
template <typename S>
void write_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor<S>>& params) {
  std::string blob;
  nlohmann::json index = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    index[name] = blob.size();
    blob += encode_ammt(t);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream idx(path.string() + ".index.json");
  if (!idx) throw FormatError("cannot open " + path.string() + ".index.json for writing");
  idx << index.dump(2) << "\n";
}

template <typename S>
std::map<std::string, Tensor<S>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::ifstream idxs(path.string() + ".index.json");
  if (!idxs) throw FormatError("cannot open " + path.string() + ".index.json");
  nlohmann::json index;
  try {
    idxs >> index;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ".index.json: " + e.what());
  }
  std::map<std::string, Tensor<S>> out;
  for (auto it = index.begin(); it != index.end(); ++it) {
    std::size_t off = it.value().get<std::size_t>();
    out.emplace(it.key(), decode_ammt<S>(blob, off, path.string() + "[" + it.key() + "]"));
  }
  return out;
}

}  // namespace ammsm
