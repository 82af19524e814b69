#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "qdz/errors.hpp"
#include "qdz/rng.hpp"

namespace qdz {

using WeightVector = std::vector<double>;

/// Per-bucket affine scaling of a flat weight vector. Bucket i covers
/// elements [i*bucket_size, min((i+1)*bucket_size, n)); the final bucket may
/// be shorter. alpha is the bucket range (max - min), beta the bucket
/// minimum. alpha == 0 marks a constant bucket.
struct BucketScaling {
  std::uint32_t bucket_size = 0;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::size_t original_len = 0;

  std::size_t bucket_of(std::size_t i) const { return i / bucket_size; }
  std::size_t bucket_count() const { return alphas.size(); }
};

/// Values scaled into [0, 1] together with the scaling that produced them.
struct ScaledVector {
  std::vector<double> values;
  BucketScaling scaling;
};

enum class QuantMode { deterministic, stochastic };

/// Uniform grid {0, 1/s, ..., 1}: s intervals, s+1 representable levels.
struct UniformScheme {
  std::uint32_t levels = 1;  // s
  QuantMode mode = QuantMode::deterministic;
};

/// Trainable non-uniform level set p_1..p_s, all in [0, 1]. Duplicates are
/// permitted; degeneracy is the caller's concern.
struct QuantizationPoints {
  std::vector<double> points;
};

/// Per-element Bernoulli source for stochastic rounding. Element i draws
/// from the stream (seed, quant-tag, layer, step, i), so results do not
/// depend on evaluation order.
struct BernoulliStream {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;

  double u01(std::uint64_t element) const {
    return rng::to_unit(
        rng::hash_words(seed, rng::kStreamQuant, layer, step, element));
  }
};

/// Quantized form of one weight vector: a level index per element plus the
/// scheme and scaling needed to reconstruct it.
struct QuantizedVector {
  std::vector<std::uint32_t> indices;
  BucketScaling scaling;
  std::variant<UniformScheme, QuantizationPoints> scheme;
  std::uint32_t per_layer_bits = 0;  // index width used when packing

  bool is_nonuniform() const {
    return std::holds_alternative<QuantizationPoints>(scheme);
  }
};

namespace detail {

inline std::uint32_t bits_for_levels(std::uint64_t level_count) {
  std::uint32_t b = 1;
  while ((1ull << b) < level_count) ++b;
  return b;
}

}  // namespace detail

/// Scales v into [0,1] per bucket: out = (v - min) / (max - min), with
/// constant buckets mapped to exactly 0.
inline ScaledVector linear_scale(std::span<const double> v,
                                 std::uint32_t bucket_size) {
  if (v.empty()) throw std::invalid_argument("linear_scale: empty weight vector");
  if (bucket_size == 0) throw std::invalid_argument("linear_scale: bucket_size must be >= 1");

  ScaledVector out;
  out.scaling.bucket_size = bucket_size;
  out.scaling.original_len = v.size();
  out.values.resize(v.size());
  for (std::size_t start = 0; start < v.size(); start += bucket_size) {
    const std::size_t end = std::min(v.size(), start + bucket_size);
    double lo = v[start], hi = v[start];
    for (std::size_t i = start + 1; i < end; ++i) {
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
    }
    const double alpha = hi - lo;
    out.scaling.alphas.push_back(alpha);
    out.scaling.betas.push_back(lo);
    for (std::size_t i = start; i < end; ++i) {
      out.values[i] = alpha > 0.0 ? (v[i] - lo) / alpha : 0.0;
    }
  }
  return out;
}

/// Inverse of linear_scale: alpha * value + beta per bucket.
inline WeightVector inverse_scale(const ScaledVector& sv) {
  WeightVector out(sv.values.size());
  for (std::size_t i = 0; i < sv.values.size(); ++i) {
    const std::size_t b = sv.scaling.bucket_of(i);
    out[i] = sv.scaling.alphas[b] * sv.values[i] + sv.scaling.betas[b];
  }
  return out;
}

/// Uniform quantization on the grid {0, 1/s, ..., 1}. index = floor(v*s) + xi
/// with xi = [k > 1/2] deterministically (ties round down) or
/// xi ~ Bernoulli(k) stochastically, k the within-bin offset. v == 1 maps to
/// index s with xi forced to 0.
inline QuantizedVector uniform_quantize(const ScaledVector& sv,
                                        const UniformScheme& scheme,
                                        const BernoulliStream& bern = {}) {
  if (scheme.levels < 1) throw std::invalid_argument("uniform_quantize: levels must be >= 1");
  const double s = static_cast<double>(scheme.levels);

  QuantizedVector out;
  out.scaling = sv.scaling;
  out.scheme = scheme;
  out.per_layer_bits = detail::bits_for_levels(scheme.levels + 1ull);
  out.indices.resize(sv.values.size());

  for (std::size_t i = 0; i < sv.values.size(); ++i) {
    const double v = sv.values[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("uniform_quantize: scaled value outside [0,1]");
    }
    const double t = v * s;
    double l = std::floor(t);
    if (l >= s) {  // v == 1: top grid point, k == 0
      out.indices[i] = scheme.levels;
      continue;
    }
    const double k = t - l;
    std::uint32_t xi = 0;
    if (scheme.mode == QuantMode::deterministic) {
      xi = k > 0.5 ? 1u : 0u;
    } else {
      xi = bern.u01(static_cast<std::uint64_t>(i)) < k ? 1u : 0u;
    }
    out.indices[i] = static_cast<std::uint32_t>(l) + xi;
  }
  return out;
}

/// Assigns each scaled value to the nearest quantization point; ties go to
/// the lowest point index.
inline QuantizedVector nonuniform_quantize(const ScaledVector& sv,
                                           const QuantizationPoints& p) {
  if (p.points.empty()) throw std::invalid_argument("nonuniform_quantize: empty point set");

  QuantizedVector out;
  out.scaling = sv.scaling;
  out.scheme = p;
  out.per_layer_bits = detail::bits_for_levels(p.points.size());
  out.indices.resize(sv.values.size());

  for (std::size_t i = 0; i < sv.values.size(); ++i) {
    const double v = sv.values[i];
    std::size_t best = 0;
    double best_dist = std::abs(v - p.points[0]);
    for (std::size_t j = 1; j < p.points.size(); ++j) {
      const double d = std::abs(v - p.points[j]);
      if (d < best_dist) {
        best_dist = d;
        best = j;
      }
    }
    out.indices[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

/// Reconstructs weights: alpha * level + beta, where level = index/s for the
/// uniform scheme and p[index] for the non-uniform one.
inline WeightVector dequantize(const QuantizedVector& qv) {
  WeightVector out(qv.indices.size());
  if (const auto* uni = std::get_if<UniformScheme>(&qv.scheme)) {
    const double s = static_cast<double>(uni->levels);
    for (std::size_t i = 0; i < qv.indices.size(); ++i) {
      if (qv.indices[i] > uni->levels) {
        throw ContainerError("dequantize: index out of range");
      }
      const std::size_t b = qv.scaling.bucket_of(i);
      out[i] = qv.scaling.alphas[b] * (static_cast<double>(qv.indices[i]) / s) +
               qv.scaling.betas[b];
    }
  } else {
    const auto& p = std::get<QuantizationPoints>(qv.scheme).points;
    for (std::size_t i = 0; i < qv.indices.size(); ++i) {
      if (qv.indices[i] >= p.size()) {
        throw ContainerError("dequantize: index out of range");
      }
      const std::size_t b = qv.scaling.bucket_of(i);
      out[i] = qv.scaling.alphas[b] * p[qv.indices[i]] + qv.scaling.betas[b];
    }
  }
  return out;
}

/// Gradient of the loss with respect to the non-uniform points:
/// grad_p[j] = sum over elements assigned to j of alpha_bucket(i) * grad_wq[i].
/// Points no element maps to get exactly zero.
inline std::vector<double> quant_point_gradient(const QuantizedVector& qv,
                                                std::span<const double> grad_wq) {
  if (!qv.is_nonuniform()) {
    throw std::invalid_argument("quant_point_gradient: quantized vector is not non-uniform");
  }
  if (grad_wq.size() != qv.indices.size()) {
    throw std::invalid_argument("quant_point_gradient: gradient length mismatch");
  }
  const auto& p = std::get<QuantizationPoints>(qv.scheme).points;
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t i = 0; i < qv.indices.size(); ++i) {
    grad[qv.indices[i]] += qv.scaling.alphas[qv.scaling.bucket_of(i)] * grad_wq[i];
  }
  return grad;
}

/// Empirical quantiles of the scaled values at probabilities (j - 0.5)/s,
/// j = 1..s, with linear interpolation between order statistics. Every
/// returned point lies in [0, 1]; the sequence is non-decreasing.
inline QuantizationPoints quantile_init(std::span<const double> v,
                                        std::uint32_t s,
                                        std::uint32_t bucket_size) {
  if (s < 1) throw std::invalid_argument("quantile_init: s must be >= 1");
  const ScaledVector sv = linear_scale(v, bucket_size);
  std::vector<double> sorted = sv.values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  QuantizationPoints out;
  out.points.reserve(s);
  for (std::uint32_t j = 1; j <= s; ++j) {
    const double q = (static_cast<double>(j) - 0.5) / static_cast<double>(s);
    const double h = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    out.points.push_back(sorted[lo] + frac * (sorted[hi] - sorted[lo]));
  }
  return out;
}

}  // namespace qdz
