#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mrla/errors.hpp"
#include "mrla/tensor.hpp"

// Binary tensor format:
//   magic "MRLT", 1-byte dtype (0 = f32, 1 = f64), 1-byte rank,
//   rank x 8-byte little-endian extents, little-endian payload.
// Checkpoint: concatenation of (2-byte LE name length, UTF-8 name, record).

namespace mrla::io {

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw io_error("tensor record truncated");
  }
}

inline void put_u16le(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  put_bytes(os, b, 2);
}

inline std::uint16_t get_u16le(std::istream& is) {
  unsigned char b[2];
  get_bytes(is, b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void put_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(os, b, 8);
}

inline std::uint64_t get_u64le(std::istream& is) {
  unsigned char b[8];
  get_bytes(is, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

template <class S>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 0 : 1;
}

template <class S>
void put_scalar_le(std::ostream& os, S v) {
  if constexpr (std::is_same_v<S, float>) {
    put_bytes(os, &v, 4);  // assumes little-endian host; checked below
  } else {
    put_bytes(os, &v, 8);
  }
}

template <class S>
S get_scalar_le(std::istream& is) {
  S v;
  get_bytes(is, &v, sizeof(S));
  return v;
}

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

}  // namespace detail

inline constexpr char kMagic[4] = {'M', 'R', 'L', 'T'};

template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  detail::put_bytes(os, kMagic, 4);
  const std::uint8_t dtype = detail::dtype_tag<S>();
  detail::put_bytes(os, &dtype, 1);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  detail::put_bytes(os, &rank, 1);
  for (std::size_t e : t.shape()) detail::put_u64le(os, e);
  for (S v : t.data()) detail::put_scalar_le(os, v);
}

template <class S>
Tensor<S> read_tensor(std::istream& is) {
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw io_error("bad tensor magic (expected MRLT)");
  }
  std::uint8_t dtype = 0, rank = 0;
  detail::get_bytes(is, &dtype, 1);
  detail::get_bytes(is, &rank, 1);
  if (dtype != detail::dtype_tag<S>()) {
    throw io_error("tensor dtype tag " + std::to_string(dtype) +
                   " does not match the requested scalar type");
  }
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_u64le(is);
  std::vector<S> vals(shape_numel(shape));
  for (auto& v : vals) v = detail::get_scalar_le<S>(is);
  return Tensor<S>::from_data(std::move(shape), std::move(vals));
}

template <class S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

template <class S>
void write_checkpoint(std::ostream& os, const NamedTensors<S>& entries) {
  for (const auto& [name, t] : entries) {
    detail::put_u16le(os, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(os, name.data(), name.size());
    write_tensor(os, t);
  }
}

template <class S>
void write_checkpoint_file(const std::string& path, const NamedTensors<S>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, entries);
  if (!os) throw io_error("failed writing checkpoint: " + path);
}

template <class S>
NamedTensors<S> read_checkpoint(std::istream& is) {
  NamedTensors<S> entries;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint16_t len = detail::get_u16le(is);
    std::string name(len, '\0');
    detail::get_bytes(is, name.data(), len);
    entries.emplace_back(std::move(name), read_tensor<S>(is));
  }
  return entries;
}

template <class S>
NamedTensors<S> read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + path);
  return read_checkpoint<S>(is);
}

}  // namespace mrla::io
