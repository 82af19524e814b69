#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qdz/container.hpp"
#include "qdz/net.hpp"
#include "qdz/train.hpp"

namespace qdz {

namespace detail {

inline std::string activation_name(Activation act) {
  return act == Activation::relu ? "relu" : "identity";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ContainerError("unknown activation '" + name + "'");
}

/// Layer names carry the geometry: "dense<i>.weight:<in>:<out>:<act>" and
/// "dense<i>.bias:<out>".
inline std::string weight_name(std::size_t idx, const DenseLayer& layer) {
  return "dense" + std::to_string(idx) + ".weight:" + std::to_string(layer.in) +
         ":" + std::to_string(layer.out) + ":" + activation_name(layer.act);
}

inline std::string bias_name(std::size_t idx, const DenseLayer& layer) {
  return "dense" + std::to_string(idx) + ".bias:" + std::to_string(layer.out);
}

inline std::vector<std::string> split_fields(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(':', start);
    if (pos == std::string::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

/// Full-precision checkpoint: one raw f64 record per weight matrix and bias.
inline ModelContainer network_to_container(const Network& net) {
  ModelContainer model;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    model.layers.push_back(
        make_raw_record(detail::weight_name(l, layers[l]), layers[l].weights));
    model.layers.push_back(
        make_raw_record(detail::bias_name(l, layers[l]), layers[l].bias));
  }
  return model;
}

/// Quantized model: weight matrices as quantized records, biases raw.
inline ModelContainer quantized_to_container(const Network& shape,
                                             const std::vector<QuantizedVector>& qvs,
                                             std::uint8_t encoding) {
  const auto& layers = shape.layers();
  if (qvs.size() != layers.size()) {
    throw ContainerError("quantized_to_container: layer count mismatch");
  }
  ModelContainer model;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    model.layers.push_back(make_quantized_record(
        detail::weight_name(l, layers[l]), qvs[l], encoding));
    model.layers.push_back(
        make_raw_record(detail::bias_name(l, layers[l]), layers[l].bias));
  }
  return model;
}

/// Rebuilds a runnable network from either container flavor (raw weights or
/// quantized records, which are dequantized on load).
inline Network container_to_network(const ModelContainer& model) {
  Network net;
  if (model.layers.size() % 2 != 0) {
    throw ContainerError("container_to_network: expected weight/bias record pairs");
  }
  for (std::size_t l = 0; l + 1 < model.layers.size(); l += 2) {
    const LayerRecord& wrec = model.layers[l];
    const LayerRecord& brec = model.layers[l + 1];
    const auto wfields = detail::split_fields(wrec.name);
    if (wfields.size() != 4 || wfields[0].find(".weight") == std::string::npos) {
      throw ContainerError("container_to_network: unexpected record '" +
                           wrec.name + "'");
    }
    DenseLayer layer;
    layer.in = std::stoull(wfields[1]);
    layer.out = std::stoull(wfields[2]);
    layer.act = detail::parse_activation(wfields[3]);
    layer.weights = wrec.scheme == kSchemeRawF64 ? raw_record_values(wrec)
                                                 : dequantize(layer_to_quantized(wrec));
    layer.bias = raw_record_values(brec);
    if (layer.weights.size() != layer.in * layer.out ||
        layer.bias.size() != layer.out) {
      throw ContainerError("container_to_network: geometry mismatch in '" +
                           wrec.name + "'");
    }
    net.layers().push_back(std::move(layer));
  }
  return net;
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  write_container_file(network_to_container(net), path);
}

inline Network load_network(const std::filesystem::path& path) {
  return container_to_network(read_container_file(path));
}

}  // namespace qdz
