#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <sstream>
#include <vector>

#include "qdz/container.hpp"
#include "qdz/crc32.hpp"
#include "qdz/model_io.hpp"
#include "qdz/net.hpp"
#include "qdz/quant.hpp"
#include "qdz/rng.hpp"
#include "qdz/sizing.hpp"
#include "qdz/train.hpp"

using namespace qdz;

namespace {

QuantizedVector sample_quantized(std::uint64_t seed, bool nonuniform) {
  rng::Stream stream(seed, 0xC0DEull);
  std::vector<double> weights(300);
  for (auto& w : weights) w = stream.gauss();
  const ScaledVector sv = linear_scale(weights, 64);
  if (nonuniform) {
    QuantizationPoints p;
    for (int j = 0; j < 5; ++j) p.points.push_back(stream.u01());
    return nonuniform_quantize(sv, p);
  }
  return uniform_quantize(sv, {15});
}

}  // namespace

TEST_CASE("crc32 matches known vectors") {
  const std::string check = "123456789";
  const std::uint32_t crc = crc32(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(check.data()), check.size()));
  REQUIRE(crc == 0xCBF43926u);  // standard CRC-32 check value
  REQUIRE(crc32({}) == 0x00000000u);
}

TEST_CASE("container round trip is bit exact") {
  ModelContainer model;
  model.layers.push_back(
      make_quantized_record("uniform-layer", sample_quantized(1, false),
                            kEncodingPacked));
  model.layers.push_back(
      make_quantized_record("nonuniform-layer", sample_quantized(2, true),
                            kEncodingHuffman));
  rng::Stream stream(3, 0xB1A5ull);
  std::vector<double> bias(10);
  for (auto& b : bias) b = stream.gauss();
  model.layers.push_back(make_raw_record("bias", bias));

  std::stringstream first;
  write_container(model, first);
  const ModelContainer reread = read_container(first);

  REQUIRE(reread.layers.size() == model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    REQUIRE(reread.layers[l].name == model.layers[l].name);
    REQUIRE(reread.layers[l].scheme == model.layers[l].scheme);
    REQUIRE(reread.layers[l].bits == model.layers[l].bits);
    REQUIRE(reread.layers[l].levels == model.layers[l].levels);
    REQUIRE(reread.layers[l].bucket_size == model.layers[l].bucket_size);
    REQUIRE(reread.layers[l].count == model.layers[l].count);
    REQUIRE(reread.layers[l].scale_pairs == model.layers[l].scale_pairs);
    REQUIRE(reread.layers[l].points == model.layers[l].points);
    REQUIRE(reread.layers[l].payload == model.layers[l].payload);
  }

  // Re-serialization is byte-identical.
  std::stringstream second;
  write_container(reread, second);
  REQUIRE(first.str() == second.str());

  // Indices survive exactly.
  REQUIRE(decode_layer_indices(reread.layers[0]) ==
          sample_quantized(1, false).indices);
  REQUIRE(decode_layer_indices(reread.layers[1]) ==
          sample_quantized(2, true).indices);
  REQUIRE(raw_record_values(reread.layers[2]) == bias);
}

TEST_CASE("container header layout is pinned") {
  ModelContainer model;
  QuantizedVector qv;
  qv.indices = {0, 1, 2, 3};
  qv.scaling = {4, {1.0}, {0.0}, 4};
  qv.scheme = UniformScheme{3};
  qv.per_layer_bits = 2;
  model.layers.push_back(make_quantized_record("w", qv, kEncodingPacked));

  std::stringstream os;
  write_container(model, os);
  const std::string bytes = os.str();

  REQUIRE(bytes.substr(0, 4) == "QDZ1");
  REQUIRE(static_cast<std::uint8_t>(bytes[4]) == 1);  // version LE lo
  REQUIRE(static_cast<std::uint8_t>(bytes[5]) == 0);
  REQUIRE(static_cast<std::uint8_t>(bytes[6]) == 1);  // layer count LE lo
  REQUIRE(static_cast<std::uint8_t>(bytes[7]) == 0);
  REQUIRE(static_cast<std::uint8_t>(bytes[8]) == 1);  // name length
  REQUIRE(bytes[10] == 'w');
  REQUIRE(static_cast<std::uint8_t>(bytes[11]) == kSchemeUniform);
  REQUIRE(static_cast<std::uint8_t>(bytes[12]) == 2);  // bits
  // s = 3 as u32 LE
  REQUIRE(static_cast<std::uint8_t>(bytes[13]) == 3);
  REQUIRE(static_cast<std::uint8_t>(bytes[14]) == 0);
  // payload: packed indices 00 01 10 11
  const std::size_t payload_at = bytes.size() - 4 /*crc*/ - 1 /*payload*/;
  REQUIRE(static_cast<std::uint8_t>(bytes[payload_at]) == 0b00011011);
}

TEST_CASE("corruption is detected") {
  ModelContainer model;
  model.layers.push_back(
      make_quantized_record("layer", sample_quantized(4, false),
                            kEncodingPacked));
  std::stringstream os;
  write_container(model, os);
  std::string bytes = os.str();

  SECTION("bad magic") {
    bytes[0] = 'X';
    std::stringstream is(bytes);
    REQUIRE_THROWS_AS(read_container(is), ContainerError);
  }
  SECTION("payload bit flip fails CRC") {
    bytes[bytes.size() - 10] = static_cast<char>(bytes[bytes.size() - 10] ^ 0x40);
    std::stringstream is(bytes);
    REQUIRE_THROWS_AS(read_container(is), ContainerError);
  }
  SECTION("truncation") {
    std::stringstream is(bytes.substr(0, bytes.size() / 2));
    REQUIRE_THROWS_AS(read_container(is), ContainerError);
  }
}

TEST_CASE("network checkpoints restore exactly") {
  const std::size_t hidden[] = {16, 8};
  const Network net = Network::dense_classifier(4, hidden, 3, 77);
  const ModelContainer container = network_to_container(net);
  const Network restored = container_to_network(container);

  REQUIRE(restored.layers().size() == net.layers().size());
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    REQUIRE(restored.layers()[l].in == net.layers()[l].in);
    REQUIRE(restored.layers()[l].out == net.layers()[l].out);
    REQUIRE(restored.layers()[l].act == net.layers()[l].act);
    REQUIRE(restored.layers()[l].weights == net.layers()[l].weights);
    REQUIRE(restored.layers()[l].bias == net.layers()[l].bias);
  }
  REQUIRE(network_checksum(restored) == network_checksum(net));
}

TEST_CASE("quantized model containers evaluate after reload") {
  const std::size_t hidden[] = {12};
  const Network net = Network::dense_classifier(2, hidden, 3, 5);
  const QuantizedNetwork qn = pm_quantize(net, 4, true, 8);
  const ModelContainer container =
      quantized_to_container(qn.net, qn.layers, kEncodingHuffman);
  const Network restored = container_to_network(container);

  // Dequantized weights written as f32 scale factors times exact grid
  // values; reload must agree with the in-memory quantized net to f32
  // scale precision.
  for (std::size_t l = 0; l < restored.layers().size(); ++l) {
    for (std::size_t i = 0; i < restored.layers()[l].weights.size(); ++i) {
      REQUIRE(restored.layers()[l].weights[i] ==
              Catch::Approx(qn.net.layers()[l].weights[i]).margin(1e-6));
    }
    REQUIRE(restored.layers()[l].bias == qn.net.layers()[l].bias);
  }
}

TEST_CASE("size_gain reproduces the closed form") {
  REQUIRE(size_gain(2, 256, 32) == Catch::Approx(8192.0 / 576.0));
  REQUIRE(size_gain(4, 512, 32) == Catch::Approx(16384.0 / 2112.0));
  REQUIRE(size_gain(32, 256, 32) ==
          Catch::Approx(256.0 * 32.0 / (256.0 * 32.0 + 64.0)));
  REQUIRE(size_gain(32, 256, 32) < 1.0);  // full-width quantizing loses space
  REQUIRE_THROWS_AS(size_gain(0, 256, 32), std::invalid_argument);
  REQUIRE_THROWS_AS(size_gain(2, 0, 32), std::invalid_argument);
  REQUIRE_THROWS_AS(size_gain(2, 256, 0), std::invalid_argument);
}

TEST_CASE("size_gain is monotone in k and b") {
  double prev = 0.0;
  for (double k : {16.0, 64.0, 256.0, 1024.0}) {
    const double g = size_gain(4, k, 32);
    REQUIRE(g > prev);
    prev = g;
  }
  prev = 1e9;
  for (double b : {1.0, 2.0, 4.0, 8.0, 16.0}) {
    const double g = size_gain(b, 256, 32);
    REQUIRE(g < prev);
    prev = g;
  }
}

TEST_CASE("model_size_report instantiates the formula") {
  // One layer, N=256, b=2, k=256: plain bits = 2*256 + 2*32 = 576, so the
  // gain is 8192/576 = 14.22.
  QuantizedVector qv;
  qv.indices.assign(256, 1);
  for (std::size_t i = 0; i < 256; ++i) qv.indices[i] = i % 4;
  qv.scaling = {256, {1.0}, {0.0}, 256};
  qv.scheme = UniformScheme{3};
  qv.per_layer_bits = 2;

  ModelContainer model;
  model.layers.push_back(make_quantized_record("w", qv, kEncodingPacked));
  const SizeReport report = model_size_report(model, 32);

  REQUIRE(report.full_precision_bits == 8192);
  REQUIRE(report.quantized_bits == 576);
  REQUIRE(report.gain_plain == Catch::Approx(8192.0 / 576.0));
  REQUIRE(report.gain_plain == Catch::Approx(size_gain(2, 256, 32)));

  // Four equally frequent symbols: Huffman matches the fixed width.
  REQUIRE(report.mean_code_length == Catch::Approx(2.0));
  REQUIRE(report.huffman_bits == report.quantized_bits);
}

TEST_CASE("all-equal indices cost zero Huffman payload bits") {
  QuantizedVector qv;
  qv.indices.assign(100, 3);
  qv.scaling = {100, {2.0}, {-1.0}, 100};
  qv.scheme = UniformScheme{7};
  qv.per_layer_bits = 3;
  ModelContainer model;
  model.layers.push_back(make_quantized_record("w", qv, kEncodingHuffman));
  const SizeReport report = model_size_report(model, 32);
  REQUIRE(report.huffman_bits == 64);  // scale overhead only
  REQUIRE(report.mean_code_length == 0.0);
}

TEST_CASE("huffman size never exceeds plain size") {
  for (int instance = 0; instance < 20; ++instance) {
    ModelContainer model;
    model.layers.push_back(make_quantized_record(
        "w", sample_quantized(100 + instance, instance % 2 == 0),
        kEncodingPacked));
    const SizeReport report = model_size_report(model, 32);
    REQUIRE(report.huffman_bits <= report.quantized_bits);
  }
}
