#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <vector>

#include "qafel/core.hpp"

namespace qafel {

// Little-endian bit packing: the first field written occupies the lowest
// bits of byte 0, and every field is written least-significant bit first.
class BitWriter {
 public:
  // Writes the low `width` bits, least significant first, a byte at a time.
  void write(std::uint64_t value, unsigned width) {
    while (width > 0) {
      const unsigned off = static_cast<unsigned>(bits_ & 7u);
      if (off == 0) bytes_.push_back(0);
      const unsigned n = std::min(width, 8u - off);
      bytes_.back() |= static_cast<std::uint8_t>((value & ((1u << n) - 1u)) << off);
      value >>= n;
      width -= n;
      bits_ += n;
    }
  }

  void reserve_bits(std::uint64_t n) { bytes_.reserve((bits_ + n + 7) / 8); }

  void write_f32(float v) { write(std::bit_cast<std::uint32_t>(v), 32); }

  std::uint64_t bit_count() const noexcept { return bits_; }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  BitReader(const std::vector<std::uint8_t>& bytes, std::uint64_t bit_count)
      : bytes_(bytes), limit_(bit_count) {}

  std::uint64_t read(unsigned width) {
    if (pos_ + width > limit_) throw Error("bit stream truncated");
    std::uint64_t v = 0;
    for (unsigned done = 0; done < width;) {
      const unsigned off = static_cast<unsigned>(pos_ & 7u);
      const unsigned n = std::min(width - done, 8u - off);
      const std::uint64_t chunk = (bytes_[pos_ >> 3] >> off) & ((1u << n) - 1u);
      v |= chunk << done;
      done += n;
      pos_ += n;
    }
    return v;
  }

  float read_f32() {
    return std::bit_cast<float>(static_cast<std::uint32_t>(read(32)));
  }

  std::uint64_t position() const noexcept { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

// Number of bits needed to address d slots: ceil(log2 d), 0 for d <= 1.
constexpr unsigned index_bits(std::uint64_t d) {
  return d <= 1 ? 0u : static_cast<unsigned>(std::bit_width(d - 1));
}

}  // namespace qafel
