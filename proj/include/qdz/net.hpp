#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdz/rng.hpp"
#include "qdz/tensor.hpp"

namespace qdz {

enum class Activation { identity, relu };

/// Fully connected layer: y = x W + b with W stored row-major (in x out).
/// The flat `weights` vector is the unit of quantization.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  Activation act = Activation::identity;
};

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::identity;
};

class Network {
 public:
  Network() = default;

  /// Seeded init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero
  /// biases.
  static Network make(std::span<const DenseSpec> specs, std::uint64_t seed) {
    Network net;
    for (std::size_t l = 0; l < specs.size(); ++l) {
      const auto& spec = specs[l];
      if (l > 0 && specs[l - 1].out != spec.in) {
        throw std::invalid_argument("Network::make: layer dimensions do not compose");
      }
      DenseLayer layer;
      layer.in = spec.in;
      layer.out = spec.out;
      layer.act = spec.act;
      layer.weights.resize(spec.in * spec.out);
      layer.bias.assign(spec.out, 0.0);
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in));
      rng::Stream stream(seed, rng::kStreamInit, l);
      for (auto& w : layer.weights) w = stream.uniform(-bound, bound);
      net.layers_.push_back(std::move(layer));
    }
    return net;
  }

  /// Convenience builder: input -> hidden relu layers -> linear head.
  static Network dense_classifier(std::size_t input_dim,
                                  std::span<const std::size_t> hidden,
                                  std::size_t classes, std::uint64_t seed) {
    std::vector<DenseSpec> specs;
    std::size_t prev = input_dim;
    for (auto h : hidden) {
      specs.push_back({prev, h, Activation::relu});
      prev = h;
    }
    specs.push_back({prev, classes, Activation::identity});
    return make(specs, seed);
  }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
  }

 private:
  std::vector<DenseLayer> layers_;
};

namespace detail {

inline void affine_forward(const DenseLayer& layer, const Tensor& x, Tensor& y) {
  if (x.cols != layer.in) {
    throw std::invalid_argument("forward: batch width does not match layer input");
  }
  y = Tensor(x.rows, layer.out);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = &x.data[r * x.cols];
    double* yr = &y.data[r * y.cols];
    for (std::size_t j = 0; j < layer.out; ++j) yr[j] = layer.bias[j];
    for (std::size_t i = 0; i < layer.in; ++i) {
      const double xi = xr[i];
      const double* wrow = &layer.weights[i * layer.out];
      for (std::size_t j = 0; j < layer.out; ++j) yr[j] += xi * wrow[j];
    }
  }
}

inline void apply_activation(Activation act, Tensor& t) {
  if (act != Activation::relu) return;
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

}  // namespace detail

/// Per-layer caches needed by backward: the input to each layer and its
/// pre-activation output.
struct ForwardTrace {
  std::vector<Tensor> inputs;
  std::vector<Tensor> preacts;
  Tensor logits;
};

inline ForwardTrace forward_trace(const Network& net, const Tensor& batch) {
  ForwardTrace trace;
  Tensor current = batch;
  for (const auto& layer : net.layers()) {
    trace.inputs.push_back(current);
    Tensor pre;
    detail::affine_forward(layer, current, pre);
    trace.preacts.push_back(pre);
    detail::apply_activation(layer.act, pre);
    current = std::move(pre);
  }
  trace.logits = std::move(current);
  return trace;
}

inline Tensor forward(const Network& net, const Tensor& batch) {
  Tensor current = batch;
  for (const auto& layer : net.layers()) {
    Tensor pre;
    detail::affine_forward(layer, current, pre);
    detail::apply_activation(layer.act, pre);
    current = std::move(pre);
  }
  return current;
}

struct LayerGrads {
  std::vector<double> weights;
  std::vector<double> bias;
};

/// Reverse-mode gradients of the composed loss given d(loss)/d(logits).
inline std::vector<LayerGrads> backward(const Network& net,
                                        const ForwardTrace& trace,
                                        const Tensor& dlogits) {
  const auto& layers = net.layers();
  std::vector<LayerGrads> grads(layers.size());
  Tensor delta = dlogits;

  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const Tensor& x = trace.inputs[l];
    const Tensor& pre = trace.preacts[l];

    if (layer.act == Activation::relu) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        if (pre.data[i] <= 0.0) delta.data[i] = 0.0;
      }
    }

    auto& g = grads[l];
    g.weights.assign(layer.weights.size(), 0.0);
    g.bias.assign(layer.out, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double* xr = &x.data[r * x.cols];
      const double* dr = &delta.data[r * delta.cols];
      for (std::size_t j = 0; j < layer.out; ++j) g.bias[j] += dr[j];
      for (std::size_t i = 0; i < layer.in; ++i) {
        const double xi = xr[i];
        double* grow = &g.weights[i * layer.out];
        for (std::size_t j = 0; j < layer.out; ++j) grow[j] += xi * dr[j];
      }
    }

    if (l > 0) {
      Tensor prev(delta.rows, layer.in);
      for (std::size_t r = 0; r < delta.rows; ++r) {
        const double* dr = &delta.data[r * delta.cols];
        double* pr = &prev.data[r * prev.cols];
        for (std::size_t i = 0; i < layer.in; ++i) {
          const double* wrow = &layer.weights[i * layer.out];
          double acc = 0.0;
          for (std::size_t j = 0; j < layer.out; ++j) acc += wrow[j] * dr[j];
          pr[i] = acc;
        }
      }
      delta = std::move(prev);
    }
  }
  return grads;
}

/// In-place full-precision SGD update: w -= lr * g.
inline void sgd_step(Network& net, const std::vector<LayerGrads>& grads,
                     double lr) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].weights.size(); ++i) {
      layers[l].weights[i] -= lr * grads[l].weights[i];
    }
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
      layers[l].bias[i] -= lr * grads[l].bias[i];
    }
  }
}

/// Row-wise softmax of logits/T with max subtraction.
inline Tensor softmax_T(const Tensor& logits, double temperature) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("softmax_T: temperature must be positive");
  }
  Tensor probs(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* zr = &logits.data[r * logits.cols];
    double* pr = &probs.data[r * probs.cols];
    double mx = zr[0] / temperature;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      mx = std::max(mx, zr[c] / temperature);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      pr[c] = std::exp(zr[c] / temperature - mx);
      sum += pr[c];
    }
    for (std::size_t c = 0; c < logits.cols; ++c) pr[c] /= sum;
  }
  return probs;
}

struct LossValue {
  double loss = 0.0;
  Tensor dlogits;
};

namespace detail {

/// Mean cross-entropy against integer labels plus its logit gradient.
inline LossValue hard_cross_entropy(const Tensor& logits,
                                    std::span<const int> labels) {
  if (labels.size() != logits.rows) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  LossValue out;
  out.dlogits = Tensor(logits.rows, logits.cols);
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
      throw std::invalid_argument("cross_entropy: label out of range");
    }
    const double* zr = &logits.data[r * logits.cols];
    double mx = zr[0];
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, zr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(zr[c] - mx);
    const double log_norm = mx + std::log(sum);
    out.loss += (log_norm - zr[y]) * inv_batch;
    double* dr = &out.dlogits.data[r * logits.cols];
    for (std::size_t c = 0; c < logits.cols; ++c) {
      dr[c] = (std::exp(zr[c] - log_norm) -
               (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) *
              inv_batch;
    }
  }
  return out;
}

}  // namespace detail

inline LossValue cross_entropy_loss(const Tensor& logits,
                                    std::span<const int> labels) {
  return detail::hard_cross_entropy(logits, labels);
}

struct DistillationConfig {
  double temperature = 5.0;
  double soft_weight = 0.5;  // gamma: 0 = plain cross-entropy
};

/// Weighted distillation objective:
///   gamma * T^2 * CE(softmax_T(teacher), softmax_T(student))
///   + (1 - gamma) * CE(onehot(labels), softmax(student)).
/// The T^2 factor keeps the soft-target gradient scale comparable across
/// temperatures. gamma = 0 reduces bit-for-bit to plain cross-entropy.
inline LossValue distillation_loss(const Tensor& student_logits,
                                   const Tensor& teacher_logits,
                                   std::span<const int> labels,
                                   const DistillationConfig& cfg) {
  if (cfg.temperature <= 0.0) {
    throw std::invalid_argument("distillation_loss: temperature must be positive");
  }
  if (cfg.soft_weight < 0.0 || cfg.soft_weight > 1.0) {
    throw std::invalid_argument("distillation_loss: soft_weight must be in [0,1]");
  }

  LossValue hard = detail::hard_cross_entropy(student_logits, labels);
  if (cfg.soft_weight == 0.0) return hard;

  if (teacher_logits.rows != student_logits.rows ||
      teacher_logits.cols != student_logits.cols) {
    throw std::invalid_argument("distillation_loss: teacher/student shape mismatch");
  }

  const double T = cfg.temperature;
  const double gamma = cfg.soft_weight;
  const Tensor q = softmax_T(teacher_logits, T);
  const Tensor p = softmax_T(student_logits, T);
  const double inv_batch = 1.0 / static_cast<double>(student_logits.rows);

  double soft = 0.0;
  for (std::size_t r = 0; r < student_logits.rows; ++r) {
    const double* zr = &student_logits.data[r * student_logits.cols];
    const double* qr = &q.data[r * q.cols];
    double mx = zr[0] / T;
    for (std::size_t c = 1; c < q.cols; ++c) mx = std::max(mx, zr[c] / T);
    double sum = 0.0;
    for (std::size_t c = 0; c < q.cols; ++c) sum += std::exp(zr[c] / T - mx);
    const double log_norm = mx + std::log(sum);
    for (std::size_t c = 0; c < q.cols; ++c) {
      soft += -qr[c] * (zr[c] / T - log_norm) * inv_batch;
    }
  }

  LossValue out;
  out.loss = gamma * T * T * soft + (1.0 - gamma) * hard.loss;
  out.dlogits = Tensor(student_logits.rows, student_logits.cols);
  for (std::size_t i = 0; i < out.dlogits.data.size(); ++i) {
    out.dlogits.data[i] =
        gamma * T * (p.data[i] - q.data[i]) * inv_batch +
        (1.0 - gamma) * hard.dlogits.data[i];
  }
  return out;
}

/// Fraction of rows whose argmax logit matches the label.
inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* zr = &logits.data[r * logits.cols];
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      if (zr[c] > zr[best]) best = c;
    }
    hits += best == static_cast<std::size_t>(labels[r]) ? 1 : 0;
  }
  return logits.rows == 0 ? 0.0
                          : static_cast<double>(hits) /
                                static_cast<double>(logits.rows);
}

}  // namespace qdz
