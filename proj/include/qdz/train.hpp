#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdz/dataset.hpp"
#include "qdz/errors.hpp"
#include "qdz/net.hpp"
#include "qdz/quant.hpp"
#include "qdz/rng.hpp"

namespace qdz {

/// Line-delimited per-epoch records: epoch,split,loss,accuracy.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw ConfigError("metrics: cannot open " + path.string());
    out_ << "epoch,split,loss,accuracy\n";
  }

  void row(std::size_t epoch, const std::string& split, double loss,
           double accuracy) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g\n", epoch,
                  split.c_str(), loss, accuracy);
    out_ << buf;
  }

 private:
  std::ofstream out_;
};

inline double evaluate_accuracy(const Network& net, const Tensor& x,
                                std::span<const int> y) {
  return accuracy(forward(net, x), y);
}

namespace detail {

inline Tensor batch_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), x.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) out.at(r, c) = x.at(rows[r], c);
  }
  return out;
}

inline std::vector<int> batch_labels(std::span<const int> y,
                                     std::span<const std::size_t> rows) {
  std::vector<int> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = y[rows[r]];
  return out;
}

inline void check_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(where) + ": loss is not finite");
  }
}

}  // namespace detail

/// Quantizes every weight matrix of `net` with the uniform scheme (biases
/// stay full precision) and returns the per-layer quantized vectors plus the
/// reconstructed network.
struct QuantizedNetwork {
  Network net;
  std::vector<QuantizedVector> layers;
};

inline QuantizedNetwork quantize_network_uniform(const Network& src,
                                                 std::uint32_t levels,
                                                 QuantMode mode,
                                                 std::uint32_t bucket_size,
                                                 std::uint64_t seed = 0,
                                                 std::uint64_t step = 0) {
  QuantizedNetwork out;
  out.net = src;
  for (std::size_t l = 0; l < src.layers().size(); ++l) {
    const auto& weights = src.layers()[l].weights;
    const std::uint32_t k = bucket_size == 0
                                ? static_cast<std::uint32_t>(weights.size())
                                : bucket_size;
    const ScaledVector scaled = linear_scale(weights, k);
    const BernoulliStream bern{seed, l, step};
    QuantizedVector qv = uniform_quantize(scaled, {levels, mode}, bern);
    out.net.layers()[l].weights = dequantize(qv);
    out.layers.push_back(std::move(qv));
  }
  return out;
}

/// FNV-style checksum over raw weight bits; used to assert that a network
/// was not mutated.
inline std::uint64_t network_checksum(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](double v) {
    h ^= std::bit_cast<std::uint64_t>(v);
    h *= 0x100000001b3ull;
  };
  for (const auto& layer : net.layers()) {
    for (double w : layer.weights) feed(w);
    for (double b : layer.bias) feed(b);
  }
  return h;
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 0.1;
  bool lr_halving = false;
  std::uint64_t seed = 1;
  const Network* teacher = nullptr;  // enables distillation loss
  DistillationConfig distill;
};

struct TrainResult {
  Network net;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Plain supervised training (teachers and full-precision baselines).
/// Deterministic given (initial net, dataset, config).
inline TrainResult train_full_precision(Network net, const Dataset& data,
                                        const TrainConfig& cfg,
                                        MetricsWriter* metrics = nullptr) {
  const std::size_t n = data.train_x.rows;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  double lr = cfg.lr;
  bool halving = false;
  double best_test_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Stream shuffle(cfg.seed, rng::kStreamShuffle, epoch);
    shuffle.shuffle(std::span<std::size_t>(order));

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> rows(&order[start], end - start);
      const Tensor x = detail::batch_rows(data.train_x, rows);
      const std::vector<int> y = detail::batch_labels(data.train_y, rows);

      const ForwardTrace trace = forward_trace(net, x);
      LossValue loss;
      if (cfg.teacher != nullptr && cfg.distill.soft_weight > 0.0) {
        const Tensor teacher_logits = forward(*cfg.teacher, x);
        loss = distillation_loss(trace.logits, teacher_logits, y, cfg.distill);
      } else {
        loss = cross_entropy_loss(trace.logits, y);
      }
      detail::check_finite(loss.loss, "train_full_precision");
      const auto grads = backward(net, trace, loss.dlogits);
      sgd_step(net, grads, lr);
    }

    if (metrics != nullptr || cfg.lr_halving) {
      const LossValue test_loss =
          cross_entropy_loss(forward(net, data.test_x), data.test_y);
      if (metrics != nullptr) {
        const LossValue train_loss =
            cross_entropy_loss(forward(net, data.train_x), data.train_y);
        metrics->row(epoch, "train", train_loss.loss,
                     evaluate_accuracy(net, data.train_x, data.train_y));
        metrics->row(epoch, "test", test_loss.loss,
                     evaluate_accuracy(net, data.test_x, data.test_y));
      }
      if (cfg.lr_halving) {
        if (test_loss.loss >= best_test_loss) halving = true;
        best_test_loss = std::min(best_test_loss, test_loss.loss);
        if (halving) lr *= 0.5;
      }
    }
  }

  TrainResult result{std::move(net), 0.0, 0.0};
  result.train_accuracy =
      evaluate_accuracy(result.net, data.train_x, data.train_y);
  result.test_accuracy = evaluate_accuracy(result.net, data.test_x, data.test_y);
  return result;
}

struct QDConfig {
  UniformScheme scheme{15, QuantMode::deterministic};
  std::uint32_t bucket_size = 256;
  double lr = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  DistillationConfig distill;  // soft_weight 0 trains with plain loss
  std::uint64_t seed = 1;
};

/// Algorithm: keep full-precision weights w; each step quantize them, run
/// the forward/backward pass through the quantized copy with the
/// distillation loss, and apply the SGD update to w itself. Gradients too
/// small to cross a grid threshold accumulate in w across steps. Returns the
/// final quantized student.
struct QDResult {
  QuantizedNetwork quantized;
  Network full_precision;
  double test_accuracy = 0.0;  // of the quantized student
};

inline QDResult quantized_distillation(const Network& student_init,
                                       const Network& teacher,
                                       const Dataset& data, const QDConfig& cfg,
                                       MetricsWriter* metrics = nullptr) {
  Network master = student_init;
  const std::size_t n = data.train_x.rows;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Stream shuffle(cfg.seed, rng::kStreamShuffle, epoch);
    shuffle.shuffle(std::span<std::size_t>(order));

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> rows(&order[start], end - start);
      const Tensor x = detail::batch_rows(data.train_x, rows);
      const std::vector<int> y = detail::batch_labels(data.train_y, rows);

      QuantizedNetwork snapshot = quantize_network_uniform(
          master, cfg.scheme.levels, cfg.scheme.mode, cfg.bucket_size,
          cfg.seed, step);
      ++step;

      const ForwardTrace trace = forward_trace(snapshot.net, x);
      LossValue loss;
      if (cfg.distill.soft_weight > 0.0) {
        const Tensor teacher_logits = forward(teacher, x);
        loss = distillation_loss(trace.logits, teacher_logits, y, cfg.distill);
      } else {
        loss = cross_entropy_loss(trace.logits, y);
      }
      detail::check_finite(loss.loss, "quantized_distillation");
      const auto grads = backward(snapshot.net, trace, loss.dlogits);
      sgd_step(master, grads, cfg.lr);  // full-precision update
    }

    if (metrics != nullptr) {
      QuantizedNetwork eval = quantize_network_uniform(
          master, cfg.scheme.levels, cfg.scheme.mode, cfg.bucket_size,
          cfg.seed, step);
      const LossValue test_loss =
          cross_entropy_loss(forward(eval.net, data.test_x), data.test_y);
      metrics->row(epoch, "test", test_loss.loss,
                   evaluate_accuracy(eval.net, data.test_x, data.test_y));
    }
  }

  QDResult result;
  result.quantized = quantize_network_uniform(master, cfg.scheme.levels,
                                              cfg.scheme.mode, cfg.bucket_size,
                                              cfg.seed, step);
  result.full_precision = std::move(master);
  result.test_accuracy =
      evaluate_accuracy(result.quantized.net, data.test_x, data.test_y);
  return result;
}

enum class DQLoss { task, distill };
enum class DQInit { uniform, quantile };

struct DQConfig {
  std::vector<std::uint32_t> bits_per_layer;  // 1..8 each; resized to layer count
  std::uint32_t bucket_size = 256;
  double lr = 0.05;
  std::size_t iterations = 200;
  std::size_t batch_size = 32;
  DQLoss loss = DQLoss::distill;
  DQInit init = DQInit::quantile;
  bool redistribute = true;
  std::size_t redistribute_batches = 8;
  DistillationConfig distill;
  std::uint64_t seed = 1;
};

/// Proportional point allocation: layer l gets round(total * g_l / sum g)
/// points, clamped into [2, 256], with largest-remainder correction so the
/// budget total = L * 2^base_bits is conserved exactly. All-zero norms fall
/// back to the uniform allocation.
inline std::vector<std::uint32_t> allocate_points(std::span<const double> norms,
                                                  std::uint32_t base_bits) {
  const std::size_t layer_count = norms.size();
  const std::uint64_t base_points = 1ull << base_bits;
  const std::uint64_t total = base_points * layer_count;

  std::vector<std::uint32_t> points(layer_count,
                                    static_cast<std::uint32_t>(base_points));
  double norm_total = 0.0;
  for (double g : norms) {
    if (g < 0.0) throw std::invalid_argument("allocate_points: negative norm");
    norm_total += g;
  }
  if (norm_total == 0.0) return points;

  std::vector<double> quota(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    quota[l] = static_cast<double>(total) * norms[l] / norm_total;
    const double rounded = std::floor(quota[l] + 0.5);
    points[l] = static_cast<std::uint32_t>(std::clamp(rounded, 2.0, 256.0));
  }

  auto allocated = [&] {
    std::uint64_t sum = 0;
    for (auto p : points) sum += p;
    return sum;
  };
  while (allocated() < total) {
    std::size_t pick = layer_count;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < layer_count; ++l) {
      if (points[l] >= 256) continue;
      const double remainder = quota[l] - static_cast<double>(points[l]);
      if (remainder > best) {
        best = remainder;
        pick = l;
      }
    }
    if (pick == layer_count) break;
    ++points[pick];
  }
  while (allocated() > total) {
    std::size_t pick = layer_count;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < layer_count; ++l) {
      if (points[l] <= 2) continue;
      const double remainder = quota[l] - static_cast<double>(points[l]);
      if (remainder < best) {
        best = remainder;
        pick = l;
      }
    }
    if (pick == layer_count) break;
    --points[pick];
  }
  return points;
}

/// Gradient-norm bit redistribution: estimate per layer the L2 norm of the
/// average task-loss weight gradient over `sample_batches` minibatches, then
/// allocate point budgets with allocate_points.
inline std::vector<std::uint32_t> redistribute_bits(
    const Network& model, const Dataset& data, std::uint32_t base_bits,
    std::size_t sample_batches, std::size_t batch_size, std::uint64_t seed) {
  if (sample_batches < 1) {
    throw std::invalid_argument("redistribute_bits: need at least one batch");
  }
  const std::size_t layer_count = model.layers().size();
  std::vector<std::vector<double>> grad_sums(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    grad_sums[l].assign(model.layers()[l].weights.size(), 0.0);
  }

  const std::size_t n = data.train_x.rows;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng::Stream shuffle(seed, rng::kStreamShuffle, 0xB17Bull);
  shuffle.shuffle(std::span<std::size_t>(order));

  std::size_t cursor = 0;
  for (std::size_t b = 0; b < sample_batches; ++b) {
    if (cursor >= n) cursor = 0;
    const std::size_t end = std::min(n, cursor + batch_size);
    const std::span<const std::size_t> rows(&order[cursor], end - cursor);
    cursor = end;
    const Tensor x = detail::batch_rows(data.train_x, rows);
    const std::vector<int> y = detail::batch_labels(data.train_y, rows);
    const ForwardTrace trace = forward_trace(model, x);
    const LossValue loss = cross_entropy_loss(trace.logits, y);
    const auto grads = backward(model, trace, loss.dlogits);
    for (std::size_t l = 0; l < layer_count; ++l) {
      for (std::size_t i = 0; i < grads[l].weights.size(); ++i) {
        grad_sums[l][i] += grads[l].weights[i];
      }
    }
  }

  std::vector<double> norms(layer_count, 0.0);
  for (std::size_t l = 0; l < layer_count; ++l) {
    double sq = 0.0;
    for (double g : grad_sums[l]) {
      const double mean = g / static_cast<double>(sample_batches);
      sq += mean * mean;
    }
    norms[l] = std::sqrt(sq);
  }
  return allocate_points(norms, base_bits);
}

struct DQResult {
  std::vector<QuantizationPoints> points;
  std::vector<std::uint32_t> points_per_layer;
  QuantizedNetwork quantized;
  double test_accuracy = 0.0;
};

/// Algorithm: freeze the model weights, quantize them with the current
/// point set every iteration, and run SGD on the points themselves using the
/// assignment-partition gradient. Points are clamped to [0,1] after each
/// step. With DQLoss::distill the unquantized model acts as its own teacher.
inline DQResult differentiable_quantization(const Network& model,
                                            const Dataset& data,
                                            const DQConfig& cfg,
                                            MetricsWriter* metrics = nullptr) {
  const std::size_t layer_count = model.layers().size();
  std::vector<std::uint32_t> bits = cfg.bits_per_layer;
  if (bits.empty()) throw std::invalid_argument("dq: bits_per_layer is empty");
  bits.resize(layer_count, bits.back());
  for (auto b : bits) {
    if (b < 1 || b > 8) throw std::invalid_argument("dq: bits must be in 1..8");
  }

  std::vector<std::uint32_t> point_counts(layer_count);
  if (cfg.redistribute) {
    point_counts = redistribute_bits(model, data, bits.front(),
                                     cfg.redistribute_batches, cfg.batch_size,
                                     cfg.seed);
  } else {
    for (std::size_t l = 0; l < layer_count; ++l) {
      point_counts[l] = 1u << bits[l];
    }
  }

  // Frozen per-layer scalings and initial points.
  std::vector<ScaledVector> scaled;
  std::vector<QuantizationPoints> points(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    const auto& weights = model.layers()[l].weights;
    const std::uint32_t k = cfg.bucket_size == 0
                                ? static_cast<std::uint32_t>(weights.size())
                                : cfg.bucket_size;
    scaled.push_back(linear_scale(weights, k));
    const std::uint32_t s = point_counts[l];
    if (cfg.init == DQInit::quantile) {
      points[l] = quantile_init(weights, s, k);
    } else {
      points[l].points.resize(s);
      if (s == 1) {
        points[l].points[0] = 0.5;
      } else {
        for (std::uint32_t j = 0; j < s; ++j) {
          points[l].points[j] =
              static_cast<double>(j) / static_cast<double>(s - 1);
        }
      }
    }
  }

  const std::uint64_t frozen_checksum = network_checksum(model);
  const std::size_t n = data.train_x.rows;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng::Stream shuffle(cfg.seed, rng::kStreamShuffle, 0xD1FFull);
  shuffle.shuffle(std::span<std::size_t>(order));
  std::size_t cursor = 0;

  Network work = model;
  std::vector<bool> degenerate_warned(layer_count, false);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (cursor >= n) {
      cursor = 0;
      rng::Stream reshuffle(cfg.seed, rng::kStreamShuffle, 0xD1FFull + 1 + it);
      reshuffle.shuffle(std::span<std::size_t>(order));
    }
    const std::size_t end = std::min(n, cursor + cfg.batch_size);
    const std::span<const std::size_t> rows(&order[cursor], end - cursor);
    cursor = end;
    const Tensor x = detail::batch_rows(data.train_x, rows);
    const std::vector<int> y = detail::batch_labels(data.train_y, rows);

    std::vector<QuantizedVector> qvs(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
      qvs[l] = nonuniform_quantize(scaled[l], points[l]);
      work.layers()[l].weights = dequantize(qvs[l]);
    }

    const ForwardTrace trace = forward_trace(work, x);
    LossValue loss;
    if (cfg.loss == DQLoss::distill) {
      const Tensor teacher_logits = forward(model, x);
      loss = distillation_loss(trace.logits, teacher_logits, y, cfg.distill);
    } else {
      loss = cross_entropy_loss(trace.logits, y);
    }
    detail::check_finite(loss.loss, "differentiable_quantization");
    const auto grads = backward(work, trace, loss.dlogits);

    for (std::size_t l = 0; l < layer_count; ++l) {
      const auto grad_p = quant_point_gradient(qvs[l], grads[l].weights);
      for (std::size_t j = 0; j < points[l].points.size(); ++j) {
        points[l].points[j] =
            std::clamp(points[l].points[j] - cfg.lr * grad_p[j], 0.0, 1.0);
      }
    }

    if (it % 50 == 0) {
      for (std::size_t l = 0; l < layer_count; ++l) {
        if (degenerate_warned[l]) continue;
        std::vector<std::size_t> occupancy(points[l].points.size(), 0);
        for (auto idx : qvs[l].indices) ++occupancy[idx];
        for (auto occ : occupancy) {
          if (static_cast<double>(occ) >
              0.95 * static_cast<double>(qvs[l].indices.size())) {
            std::cerr << "dq: warning: layer " << l
                      << " collapsed onto one quantization point\n";
            degenerate_warned[l] = true;
          }
        }
      }
    }

    if (metrics != nullptr && (it + 1) % 50 == 0) {
      const LossValue test_loss =
          cross_entropy_loss(forward(work, data.test_x), data.test_y);
      metrics->row(it, "test", test_loss.loss,
                   evaluate_accuracy(work, data.test_x, data.test_y));
    }
  }

  if (network_checksum(model) != frozen_checksum) {
    throw std::logic_error("dq: model weights mutated during point optimization");
  }

  DQResult result;
  result.points = points;
  result.points_per_layer = point_counts;
  result.quantized.net = model;
  for (std::size_t l = 0; l < layer_count; ++l) {
    QuantizedVector qv = nonuniform_quantize(scaled[l], points[l]);
    result.quantized.net.layers()[l].weights = dequantize(qv);
    result.quantized.layers.push_back(std::move(qv));
  }
  result.test_accuracy =
      evaluate_accuracy(result.quantized.net, data.test_x, data.test_y);
  return result;
}

/// Post-mortem quantization: one deterministic uniform pass at s = 2^b - 1
/// intervals, bucketed or with a single bucket spanning each layer.
inline QuantizedNetwork pm_quantize(const Network& model, std::uint32_t bits,
                                    bool bucketing,
                                    std::uint32_t bucket_size = 256) {
  const std::uint32_t levels = (1u << bits) - 1;
  return quantize_network_uniform(model, levels, QuantMode::deterministic,
                                  bucketing ? bucket_size : 0);
}

}  // namespace qdz
