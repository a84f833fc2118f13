#pragma once

// Little-endian scalar encoding shared by the binary container formats.

#include <bit>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "knnlens/error.hpp"

namespace knnlens::detail {

template <typename T>
using WireWord = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    const auto bits = std::bit_cast<WireWord<T>>(value);
    for (std::size_t i = 0; i < sizeof(bits); ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    using U = WireWord<T>;
    if (in_.size() - pos_ < sizeof(U)) fail(ErrorCode::TruncatedFile, "unexpected end of data");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  void skip(std::size_t bytes) { pos_ += bytes; }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace knnlens::detail
