#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "qdz/errors.hpp"

namespace qdz {

/// Packs indices at a fixed width of `bits` per index (1..8), MSB-first
/// within each byte; the final byte is zero-padded.
inline std::vector<std::uint8_t> pack_indices(
    std::span<const std::uint32_t> indices, std::uint32_t bits) {
  if (bits < 1 || bits > 8) {
    throw std::invalid_argument("pack_indices: bits must be in 1..8");
  }
  const std::uint32_t limit = 1u << bits;
  std::vector<std::uint8_t> bytes((indices.size() * bits + 7) / 8, 0);
  std::size_t pos = 0;
  for (auto idx : indices) {
    if (idx >= limit) {
      throw std::invalid_argument("pack_indices: index does not fit in width");
    }
    for (std::uint32_t i = bits; i-- > 0;) {
      const std::uint32_t bit = (idx >> i) & 1u;
      bytes[pos >> 3] |= static_cast<std::uint8_t>(bit << (7 - (pos & 7)));
      ++pos;
    }
  }
  return bytes;
}

inline std::vector<std::uint32_t> unpack_indices(
    std::span<const std::uint8_t> bytes, std::uint32_t bits, std::size_t n) {
  if (bits < 1 || bits > 8) {
    throw std::invalid_argument("unpack_indices: bits must be in 1..8");
  }
  if (bytes.size() * 8 < n * bits) {
    throw ContainerError("unpack_indices: truncated payload");
  }
  std::vector<std::uint32_t> out(n, 0);
  std::size_t pos = 0;
  for (std::size_t e = 0; e < n; ++e) {
    std::uint32_t value = 0;
    for (std::uint32_t i = 0; i < bits; ++i) {
      const std::uint32_t bit = (bytes[pos >> 3] >> (7 - (pos & 7))) & 1u;
      value = (value << 1) | bit;
      ++pos;
    }
    out[e] = value;
  }
  return out;
}

}  // namespace qdz
