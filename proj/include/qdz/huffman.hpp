#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <span>
#include <stdexcept>
#include <vector>

#include "qdz/errors.hpp"

namespace qdz {

/// Optimal prefix code over a symbol histogram. Codewords are stored
/// right-aligned in `codes` with their bit count in `lengths`; symbols with
/// zero count have no codeword (length 0 and absent from the tree). A
/// single-symbol alphabet gets code length 0: it occupies no payload bits and
/// is reconstructed from the element count alone.
struct HuffmanCode {
  std::vector<std::uint64_t> counts;
  std::vector<std::uint32_t> lengths;
  std::vector<std::uint64_t> codes;

  std::size_t distinct_symbols() const {
    std::size_t k = 0;
    for (auto c : counts) k += c > 0 ? 1 : 0;
    return k;
  }

  std::uint64_t total_bits() const {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      bits += counts[i] * lengths[i];
    }
    return bits;
  }

  /// Mean codeword length in bits per encoded symbol.
  double mean_length() const {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) return 0.0;
    return static_cast<double>(total_bits()) / static_cast<double>(total);
  }
};

namespace detail {

/// Canonical codeword assignment from lengths: symbols ordered by
/// (length, index) receive consecutive codes. Reproducible from the length
/// table alone, which is what the container serializes.
inline void assign_canonical_codes(HuffmanCode& code) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < code.counts.size(); ++i) {
    if (code.lengths[i] > 0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (code.lengths[a] != code.lengths[b]) {
      return code.lengths[a] < code.lengths[b];
    }
    return a < b;
  });
  std::uint64_t next = 0;
  std::uint32_t prev_len = 0;
  for (auto sym : order) {
    next <<= (code.lengths[sym] - prev_len);
    code.codes[sym] = next;
    ++next;
    prev_len = code.lengths[sym];
  }
}

}  // namespace detail

/// Builds the optimal prefix code for `counts`. The merge queue orders nodes
/// by (frequency, sequence) where leaves take their symbol index as sequence
/// and merged nodes take alphabet_size + creation order, so equal-frequency
/// ties resolve identically on every platform. Codewords are the canonical
/// assignment for the resulting lengths.
inline HuffmanCode huffman_build(std::span<const std::uint64_t> counts) {
  bool any = false;
  for (auto c : counts) any = any || c > 0;
  if (!any) throw std::invalid_argument("huffman_build: empty histogram");

  struct Node {
    std::uint64_t freq;
    std::uint64_t seq;
    int symbol;  // -1 for internal
    int left = -1, right = -1;
  };
  std::vector<Node> nodes;
  nodes.reserve(counts.size() * 2);

  using Entry = std::pair<std::pair<std::uint64_t, std::uint64_t>, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    nodes.push_back({counts[i], i, static_cast<int>(i)});
    queue.push({{counts[i], i}, static_cast<int>(nodes.size() - 1)});
  }

  HuffmanCode code;
  code.counts.assign(counts.begin(), counts.end());
  code.lengths.assign(counts.size(), 0);
  code.codes.assign(counts.size(), 0);
  if (queue.size() == 1) return code;  // degenerate alphabet, zero-bit code

  std::uint64_t next_seq = counts.size();
  while (queue.size() > 1) {
    const auto a = queue.top();
    queue.pop();
    const auto b = queue.top();
    queue.pop();
    nodes.push_back({a.first.first + b.first.first, next_seq, -1, a.second, b.second});
    queue.push({{nodes.back().freq, next_seq}, static_cast<int>(nodes.size() - 1)});
    ++next_seq;
  }

  // Depth-first walk to read off codeword lengths.
  struct Frame {
    int node;
    std::uint32_t depth;
  };
  std::vector<Frame> stack{{queue.top().second, 0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    const Node& n = nodes[f.node];
    if (n.symbol >= 0) {
      code.lengths[n.symbol] = f.depth;
      continue;
    }
    stack.push_back({n.right, f.depth + 1});
    stack.push_back({n.left, f.depth + 1});
  }
  detail::assign_canonical_codes(code);
  return code;
}

/// Reconstructs a decode-capable code from a serialized length table.
/// `lengths` uses 0xFF for absent symbols; a 0 marks the single symbol of a
/// degenerate alphabet.
inline HuffmanCode huffman_from_lengths(std::span<const std::uint8_t> lengths) {
  HuffmanCode code;
  code.counts.assign(lengths.size(), 0);
  code.lengths.assign(lengths.size(), 0);
  code.codes.assign(lengths.size(), 0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0xFF) continue;
    code.counts[i] = 1;
    code.lengths[i] = lengths[i];
  }
  detail::assign_canonical_codes(code);
  return code;
}

/// Serialized length table: one byte per symbol, 0xFF = absent.
inline std::vector<std::uint8_t> huffman_length_table(const HuffmanCode& code) {
  std::vector<std::uint8_t> table(code.counts.size(), 0xFF);
  for (std::size_t i = 0; i < code.counts.size(); ++i) {
    if (code.counts[i] == 0) continue;
    if (code.lengths[i] > 254) {
      throw ContainerError("huffman_length_table: codeword too long");
    }
    table[i] = static_cast<std::uint8_t>(code.lengths[i]);
  }
  return table;
}

/// MSB-first bit writer over a growing byte buffer.
class BitWriter {
 public:
  void put(std::uint64_t value, std::uint32_t bits) {
    for (std::uint32_t i = bits; i-- > 0;) {
      const std::uint32_t bit = (value >> i) & 1u;
      if (bit_pos_ == 0) bytes_.push_back(0);
      bytes_.back() |= static_cast<std::uint8_t>(bit << (7 - bit_pos_));
      bit_pos_ = (bit_pos_ + 1) % 8;
      ++bit_count_;
    }
  }

  std::uint64_t bit_count() const { return bit_count_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint32_t bit_pos_ = 0;
  std::uint64_t bit_count_ = 0;
};

/// MSB-first bit reader.
class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool next(std::uint32_t& bit) {
    const std::size_t byte = pos_ >> 3;
    if (byte >= bytes_.size()) return false;
    bit = (bytes_[byte] >> (7 - (pos_ & 7))) & 1u;
    ++pos_;
    return true;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct HuffmanPayload {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bit_count = 0;
};

inline HuffmanPayload huffman_encode(std::span<const std::uint32_t> indices,
                                     const HuffmanCode& code) {
  BitWriter writer;
  for (auto idx : indices) {
    if (idx >= code.counts.size() || code.counts[idx] == 0) {
      throw std::invalid_argument("huffman_encode: symbol not in code");
    }
    writer.put(code.codes[idx], code.lengths[idx]);
  }
  return {writer.take(), writer.bit_count()};
}

inline std::vector<std::uint32_t> huffman_decode(
    std::span<const std::uint8_t> bytes, const HuffmanCode& code,
    std::size_t n) {
  std::vector<std::uint32_t> out;
  out.reserve(n);

  // Degenerate single-symbol alphabet: zero payload bits per element.
  if (code.distinct_symbols() == 1) {
    std::uint32_t symbol = 0;
    for (std::size_t i = 0; i < code.counts.size(); ++i) {
      if (code.counts[i] > 0) symbol = static_cast<std::uint32_t>(i);
    }
    out.assign(n, symbol);
    return out;
  }

  // Rebuild the decode trie from the codewords.
  struct TrieNode {
    int child[2] = {-1, -1};
    int symbol = -1;
  };
  std::vector<TrieNode> trie(1);
  for (std::size_t sym = 0; sym < code.counts.size(); ++sym) {
    if (code.counts[sym] == 0) continue;
    int node = 0;
    for (std::uint32_t i = code.lengths[sym]; i-- > 0;) {
      const std::uint32_t bit = (code.codes[sym] >> i) & 1u;
      if (trie[node].child[bit] < 0) {
        trie[node].child[bit] = static_cast<int>(trie.size());
        trie.emplace_back();
      }
      node = trie[node].child[bit];
    }
    trie[node].symbol = static_cast<int>(sym);
  }

  BitReader reader(bytes);
  while (out.size() < n) {
    int node = 0;
    while (trie[node].symbol < 0) {
      std::uint32_t bit = 0;
      if (!reader.next(bit)) {
        throw ContainerError("huffman_decode: truncated stream");
      }
      const int next = trie[node].child[bit];
      if (next < 0) throw ContainerError("huffman_decode: invalid codeword");
      node = next;
    }
    out.push_back(static_cast<std::uint32_t>(trie[node].symbol));
  }
  return out;
}

}  // namespace qdz
