#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

// Little-endian primitives shared by the checkpoint and dataset formats.
namespace pkd::io {

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  os.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U)))
    throw std::runtime_error(std::string("truncated file while reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  return v;
}

inline void put_f32(std::ostream& os, double v) {
  put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double get_f32(std::istream& is, const char* what) {
  return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is, what)));
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const char* kind) {
  char buf[4];
  if (!is.read(buf, 4) || std::string(buf, 4) != std::string(magic, 4))
    throw std::runtime_error(std::string("not a ") + kind + " file (bad magic)");
}

}  // namespace pkd::io
