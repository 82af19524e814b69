#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qdz/container.hpp"
#include "qdz/huffman.hpp"

namespace qdz {

/// Size gain of quantizing N weights at b bits with bucket size k against
/// f-bit full precision: g(b, k; f) = kf / (kb + 2f). The two f-bit scale
/// factors per bucket are the denominator's second term.
inline double size_gain(double bits_per_weight, double bucket_size,
                        double full_precision_bits) {
  if (bits_per_weight < 1 || bucket_size < 1 || full_precision_bits < 1) {
    throw std::invalid_argument("size_gain: arguments must be >= 1");
  }
  return bucket_size * full_precision_bits /
         (bucket_size * bits_per_weight + 2 * full_precision_bits);
}

/// Aggregate compression accounting for one quantized container.
/// Quantized layers contribute b*N index bits plus 2f bits per bucket; the
/// Huffman variant replaces the index portion with the optimal per-layer
/// code. Raw f64 layers (biases, unquantized tails) are excluded, as is the
/// non-uniform point table, whose cost does not grow with N.
struct SizeReport {
  std::uint64_t full_precision_bits = 0;
  std::uint64_t quantized_bits = 0;
  std::uint64_t huffman_bits = 0;
  double gain_plain = 0.0;
  double gain_huffman = 0.0;
  double mean_code_length = 0.0;  // Huffman bits per weight, index portion only
};

inline SizeReport model_size_report(const ModelContainer& model,
                                    std::uint32_t full_precision_bits = 32) {
  SizeReport report;
  std::uint64_t weights = 0;
  std::uint64_t huffman_index_bits = 0;
  const std::uint64_t f = full_precision_bits;

  for (const auto& layer : model.layers) {
    if (layer.scheme == kSchemeRawF64) continue;
    const std::uint64_t scale_bits = 2 * f * layer.bucket_count();
    report.full_precision_bits += f * layer.count;
    report.quantized_bits += layer.bits * layer.count + scale_bits;

    const auto indices = decode_layer_indices(layer);
    const std::uint64_t symbols =
        layer.scheme == kSchemeUniform ? layer.levels + 1ull : layer.levels;
    std::vector<std::uint64_t> counts(symbols, 0);
    for (auto idx : indices) ++counts[idx];
    const HuffmanCode code = huffman_build(counts);
    huffman_index_bits += code.total_bits();
    report.huffman_bits += code.total_bits() + scale_bits;
    weights += layer.count;
  }

  if (report.quantized_bits > 0) {
    report.gain_plain = static_cast<double>(report.full_precision_bits) /
                        static_cast<double>(report.quantized_bits);
  }
  if (report.huffman_bits > 0) {
    report.gain_huffman = static_cast<double>(report.full_precision_bits) /
                          static_cast<double>(report.huffman_bits);
  }
  if (weights > 0) {
    report.mean_code_length =
        static_cast<double>(huffman_index_bits) / static_cast<double>(weights);
  }
  return report;
}

}  // namespace qdz
