#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qdz/bitpack.hpp"
#include "qdz/crc32.hpp"
#include "qdz/errors.hpp"
#include "qdz/huffman.hpp"
#include "qdz/quant.hpp"

namespace qdz {

// Layer scheme tags.
inline constexpr std::uint8_t kSchemeUniform = 0;
inline constexpr std::uint8_t kSchemeNonUniform = 1;
inline constexpr std::uint8_t kSchemeRawF64 = 2;

// Payload encoding tags.
inline constexpr std::uint8_t kEncodingPacked = 0;
inline constexpr std::uint8_t kEncodingHuffman = 1;

inline constexpr std::uint16_t kContainerVersion = 1;

/// One serialized layer. For quantized schemes the payload holds level
/// indices (fixed-width packed or Huffman coded with a leading length
/// table); for the raw scheme it holds little-endian f64 weights.
struct LayerRecord {
  std::string name;
  std::uint8_t scheme = kSchemeUniform;
  std::uint8_t bits = 0;        // index width b; 64 for raw layers
  std::uint32_t levels = 0;     // uniform: intervals s; nonuniform: point count
  std::uint32_t bucket_size = 0;
  std::uint64_t count = 0;      // N, number of weights
  std::vector<float> scale_pairs;  // alpha,beta interleaved, one pair per bucket
  std::vector<float> points;       // nonuniform only
  std::uint8_t encoding = kEncodingPacked;
  std::vector<std::uint8_t> payload;

  std::uint64_t bucket_count() const {
    return bucket_size == 0 ? 0 : (count + bucket_size - 1) / bucket_size;
  }
};

struct ModelContainer {
  std::uint16_t version = kContainerVersion;
  std::vector<LayerRecord> layers;
};

namespace detail {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline std::uint8_t get_u8(std::istream& is) {
  char c;
  if (!is.get(c)) throw ContainerError("container: truncated stream");
  return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16(std::istream& is) {
  const std::uint16_t lo = get_u8(is);
  const std::uint16_t hi = get_u8(is);
  return static_cast<std::uint16_t>(lo | (hi << 8));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is)) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(get_u8(is)) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is) {
  return std::bit_cast<float>(get_u32(is));
}

}  // namespace detail

inline void write_container(const ModelContainer& model, std::ostream& os) {
  os.write("QDZ1", 4);
  detail::put_u16(os, model.version);
  if (model.layers.size() > 0xFFFF) {
    throw ContainerError("container: too many layers");
  }
  detail::put_u16(os, static_cast<std::uint16_t>(model.layers.size()));

  for (const auto& layer : model.layers) {
    if (layer.name.size() > 0xFFFF) {
      throw ContainerError("container: layer name too long");
    }
    detail::put_u16(os, static_cast<std::uint16_t>(layer.name.size()));
    os.write(layer.name.data(), static_cast<std::streamsize>(layer.name.size()));
    os.put(static_cast<char>(layer.scheme));
    os.put(static_cast<char>(layer.bits));
    detail::put_u32(os, layer.levels);
    detail::put_u32(os, layer.bucket_size);
    detail::put_u64(os, layer.count);
    if (layer.scale_pairs.size() != 2 * layer.bucket_count()) {
      throw ContainerError("container: scale pair count mismatch");
    }
    for (float f : layer.scale_pairs) detail::put_f32(os, f);
    if (layer.scheme == kSchemeNonUniform) {
      if (layer.points.size() != layer.levels) {
        throw ContainerError("container: point count mismatch");
      }
      for (float f : layer.points) detail::put_f32(os, f);
    }
    os.put(static_cast<char>(layer.encoding));
    detail::put_u64(os, layer.payload.size());
    os.write(reinterpret_cast<const char*>(layer.payload.data()),
             static_cast<std::streamsize>(layer.payload.size()));
    detail::put_u32(os, crc32(layer.payload));
  }
  if (!os) throw ContainerError("container: write failed");
}

inline ModelContainer read_container(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "QDZ1") {
    throw ContainerError("container: bad magic");
  }
  ModelContainer model;
  model.version = detail::get_u16(is);
  if (model.version != kContainerVersion) {
    throw ContainerError("container: unsupported version");
  }
  const std::uint16_t layer_count = detail::get_u16(is);
  model.layers.resize(layer_count);

  for (auto& layer : model.layers) {
    const std::uint16_t name_len = detail::get_u16(is);
    layer.name.resize(name_len);
    if (name_len > 0 &&
        !is.read(layer.name.data(), static_cast<std::streamsize>(name_len))) {
      throw ContainerError("container: truncated name");
    }
    layer.scheme = detail::get_u8(is);
    if (layer.scheme > kSchemeRawF64) {
      throw ContainerError("container: unknown scheme tag");
    }
    layer.bits = detail::get_u8(is);
    layer.levels = detail::get_u32(is);
    layer.bucket_size = detail::get_u32(is);
    layer.count = detail::get_u64(is);
    layer.scale_pairs.resize(2 * layer.bucket_count());
    for (auto& f : layer.scale_pairs) f = detail::get_f32(is);
    if (layer.scheme == kSchemeNonUniform) {
      layer.points.resize(layer.levels);
      for (auto& f : layer.points) f = detail::get_f32(is);
    }
    layer.encoding = detail::get_u8(is);
    const std::uint64_t payload_len = detail::get_u64(is);
    layer.payload.resize(payload_len);
    if (payload_len > 0 &&
        !is.read(reinterpret_cast<char*>(layer.payload.data()),
                 static_cast<std::streamsize>(payload_len))) {
      throw ContainerError("container: truncated payload");
    }
    const std::uint32_t stored_crc = detail::get_u32(is);
    if (stored_crc != crc32(layer.payload)) {
      throw ContainerError("container: payload CRC mismatch in layer '" +
                           layer.name + "'");
    }
  }
  return model;
}

inline void write_container_file(const ModelContainer& model,
                                 const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContainerError("container: cannot open " + path.string());
  write_container(model, os);
}

inline ModelContainer read_container_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw DependencyError("container: missing artifact " + path.string());
  }
  return read_container(is);
}

/// Builds a layer record from a quantized vector. Encoding 0 packs indices
/// at the fixed width; encoding 1 stores a Huffman length table followed by
/// the coded bitstream.
inline LayerRecord make_quantized_record(std::string name,
                                         const QuantizedVector& qv,
                                         std::uint8_t encoding) {
  LayerRecord rec;
  rec.name = std::move(name);
  rec.bucket_size = qv.scaling.bucket_size;
  rec.count = qv.indices.size();
  rec.bits = static_cast<std::uint8_t>(qv.per_layer_bits);
  rec.scale_pairs.reserve(2 * qv.scaling.bucket_count());
  for (std::size_t b = 0; b < qv.scaling.bucket_count(); ++b) {
    rec.scale_pairs.push_back(static_cast<float>(qv.scaling.alphas[b]));
    rec.scale_pairs.push_back(static_cast<float>(qv.scaling.betas[b]));
  }

  std::uint64_t symbol_count = 0;
  if (const auto* uni = std::get_if<UniformScheme>(&qv.scheme)) {
    rec.scheme = kSchemeUniform;
    rec.levels = uni->levels;
    symbol_count = static_cast<std::uint64_t>(uni->levels) + 1;
  } else {
    const auto& pts = std::get<QuantizationPoints>(qv.scheme).points;
    rec.scheme = kSchemeNonUniform;
    rec.levels = static_cast<std::uint32_t>(pts.size());
    symbol_count = pts.size();
    rec.points.reserve(pts.size());
    for (double p : pts) rec.points.push_back(static_cast<float>(p));
  }

  rec.encoding = encoding;
  if (encoding == kEncodingPacked) {
    rec.payload = pack_indices(qv.indices, qv.per_layer_bits);
  } else {
    std::vector<std::uint64_t> counts(symbol_count, 0);
    for (auto idx : qv.indices) ++counts[idx];
    const HuffmanCode code = huffman_build(counts);
    const auto table = huffman_length_table(code);
    auto coded = huffman_encode(qv.indices, code);
    rec.payload.clear();
    rec.payload.push_back(static_cast<std::uint8_t>(symbol_count & 0xFF));
    rec.payload.push_back(static_cast<std::uint8_t>((symbol_count >> 8) & 0xFF));
    rec.payload.insert(rec.payload.end(), table.begin(), table.end());
    rec.payload.insert(rec.payload.end(), coded.bytes.begin(), coded.bytes.end());
  }
  return rec;
}

/// Recovers the level indices of a quantized layer record.
inline std::vector<std::uint32_t> decode_layer_indices(const LayerRecord& rec) {
  if (rec.scheme == kSchemeRawF64) {
    throw ContainerError("decode_layer_indices: raw layer has no indices");
  }
  if (rec.encoding == kEncodingPacked) {
    return unpack_indices(rec.payload, rec.bits, rec.count);
  }
  if (rec.payload.size() < 2) {
    throw ContainerError("decode_layer_indices: truncated Huffman payload");
  }
  const std::size_t symbols = rec.payload[0] | (std::size_t(rec.payload[1]) << 8);
  if (rec.payload.size() < 2 + symbols) {
    throw ContainerError("decode_layer_indices: truncated length table");
  }
  const HuffmanCode code = huffman_from_lengths(
      std::span<const std::uint8_t>(rec.payload).subspan(2, symbols));
  return huffman_decode(
      std::span<const std::uint8_t>(rec.payload).subspan(2 + symbols), code,
      rec.count);
}

/// Rebuilds the QuantizedVector a record serializes. Scale factors come back
/// at f32 precision, which is the container contract.
inline QuantizedVector layer_to_quantized(const LayerRecord& rec) {
  QuantizedVector qv;
  qv.indices = decode_layer_indices(rec);
  qv.per_layer_bits = rec.bits;
  qv.scaling.bucket_size = rec.bucket_size;
  qv.scaling.original_len = rec.count;
  for (std::size_t b = 0; b + 1 < rec.scale_pairs.size(); b += 2) {
    qv.scaling.alphas.push_back(rec.scale_pairs[b]);
    qv.scaling.betas.push_back(rec.scale_pairs[b + 1]);
  }
  if (rec.scheme == kSchemeUniform) {
    qv.scheme = UniformScheme{rec.levels, QuantMode::deterministic};
  } else {
    QuantizationPoints pts;
    pts.points.assign(rec.points.begin(), rec.points.end());
    qv.scheme = std::move(pts);
  }
  return qv;
}

/// Raw full-precision layer: payload is count little-endian f64 values.
inline LayerRecord make_raw_record(std::string name,
                                   std::span<const double> values) {
  LayerRecord rec;
  rec.name = std::move(name);
  rec.scheme = kSchemeRawF64;
  rec.bits = 64;
  rec.levels = 0;
  rec.bucket_size = 0;
  rec.count = values.size();
  rec.payload.resize(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) {
      rec.payload[i * 8 + b] = static_cast<std::uint8_t>((u >> (8 * b)) & 0xFF);
    }
  }
  return rec;
}

inline std::vector<double> raw_record_values(const LayerRecord& rec) {
  if (rec.scheme != kSchemeRawF64) {
    throw ContainerError("raw_record_values: not a raw layer");
  }
  if (rec.payload.size() != rec.count * 8) {
    throw ContainerError("raw_record_values: payload size mismatch");
  }
  std::vector<double> out(rec.count);
  for (std::size_t i = 0; i < rec.count; ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) {
      u |= static_cast<std::uint64_t>(rec.payload[i * 8 + b]) << (8 * b);
    }
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

}  // namespace qdz
