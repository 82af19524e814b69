#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdz/errors.hpp"
#include "qdz/quant.hpp"
#include "qdz/rng.hpp"

namespace qdz {

/// Standard normal CDF via the complementary error function; erfc is
/// accurate to well past the 1e-7 needed by the KS diagnostic.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Bounded sampling distribution for the noise study. Gaussians are
/// truncated to mu +- 3 sigma by redraw so the boundedness hypothesis of the
/// normality statement holds.
struct DistSpec {
  enum class Kind { uniform, gaussian } kind = Kind::uniform;
  double a = -1.0;  // uniform lower / gaussian mean
  double b = 1.0;   // uniform upper / gaussian sigma

  double sample(rng::Stream& stream) const {
    if (kind == Kind::uniform) return stream.uniform(a, b);
    for (;;) {
      const double g = stream.gauss();
      if (std::abs(g) <= 3.0) return a + b * g;
    }
  }

  std::string to_string() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s:%g:%g",
                  kind == Kind::uniform ? "uniform" : "gaussian", a, b);
    return buf;
  }
};

/// Parses "uniform:lo:hi" or "gaussian:mu:sigma".
inline DistSpec parse_dist(const std::string& text) {
  DistSpec spec;
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos
                                          : text.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw ConfigError("distribution spec must be kind:a:b, got '" + text + "'");
  }
  const std::string kind = text.substr(0, c1);
  if (kind == "uniform") {
    spec.kind = DistSpec::Kind::uniform;
  } else if (kind == "gaussian") {
    spec.kind = DistSpec::Kind::gaussian;
  } else {
    throw ConfigError("unknown distribution kind '" + kind + "'");
  }
  try {
    spec.a = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
    spec.b = std::stod(text.substr(c2 + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad distribution parameters in '" + text + "'");
  }
  if (spec.kind == DistSpec::Kind::uniform && spec.b <= spec.a) {
    throw ConfigError("uniform distribution needs a < b");
  }
  if (spec.kind == DistSpec::Kind::gaussian && spec.b <= 0) {
    throw ConfigError("gaussian distribution needs sigma > 0");
  }
  return spec;
}

struct NoiseStudyConfig {
  std::size_t n = 10000;
  std::uint32_t levels = 15;  // s
  std::uint32_t bucket_size = 256;
  std::size_t trials = 10000;
  bool quantize_inputs = false;
  bool redraw_per_trial = false;  // default: one (v, x) pair per study
  DistSpec dist_v;
  DistSpec dist_x;
  std::uint64_t seed = 1;
};

namespace detail {

/// Within-bin offsets k_i of the scaled values; exactly zero on the grid.
inline std::vector<double> bin_offsets(const ScaledVector& sv, std::uint32_t s) {
  std::vector<double> ks(sv.values.size());
  for (std::size_t i = 0; i < sv.values.size(); ++i) {
    const double t = sv.values[i] * static_cast<double>(s);
    const double l = std::floor(t);
    ks[i] = l >= static_cast<double>(s) ? 0.0 : t - l;
  }
  return ks;
}

/// Exact second moment of the two-point stochastic quantizer output for one
/// element, in original (unscaled) units.
inline double second_moment(double alpha, double beta, double k, double l,
                            std::uint32_t s) {
  const double lo = alpha * (l / static_cast<double>(s)) + beta;
  const double hi = alpha * ((l + 1.0) / static_cast<double>(s)) + beta;
  return (1.0 - k) * lo * lo + k * hi * hi;
}

struct Element {
  double value;       // original
  double alpha;
  double beta;
  double l;           // floor(v_hat * s), clamped to the grid for v_hat = 1
  double k;           // within-bin offset
};

inline std::vector<Element> prepare(std::span<const double> values,
                                    std::uint32_t bucket_size, std::uint32_t s) {
  const ScaledVector sv = linear_scale(values, bucket_size);
  std::vector<Element> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t b = sv.scaling.bucket_of(i);
    const double t = sv.values[i] * static_cast<double>(s);
    double l = std::floor(t);
    double k = t - l;
    if (l >= static_cast<double>(s)) {
      l = static_cast<double>(s);
      k = 0.0;
    }
    out[i] = {values[i], sv.scaling.alphas[b], sv.scaling.betas[b], l, k};
  }
  return out;
}

}  // namespace detail

/// Analytic standard deviation s_n of the scalar-product quantization noise:
/// s_n^2 = sum_i Var[Q(v_i) x_i], or with quantized inputs
/// s_n^2 = sum_i Var[Q(v_i) Q(x_i)], computed exactly from the two-point
/// Bernoulli laws.
inline double analytic_noise_sd(std::span<const double> v,
                                std::span<const double> x,
                                std::uint32_t bucket_size, std::uint32_t s,
                                bool quantize_inputs) {
  if (v.size() != x.size()) {
    throw std::invalid_argument("analytic_noise_sd: length mismatch");
  }
  const auto ev = detail::prepare(v, bucket_size, s);
  double variance = 0.0;
  if (!quantize_inputs) {
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const double var_q = ev[i].alpha * ev[i].alpha * ev[i].k *
                           (1.0 - ev[i].k) /
                           (static_cast<double>(s) * static_cast<double>(s));
      variance += x[i] * x[i] * var_q;
    }
  } else {
    const auto ex = detail::prepare(x, bucket_size, s);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const double m2v =
          detail::second_moment(ev[i].alpha, ev[i].beta, ev[i].k, ev[i].l, s);
      const double m2x =
          detail::second_moment(ex[i].alpha, ex[i].beta, ex[i].k, ex[i].l, s);
      variance += m2v * m2x - v[i] * v[i] * x[i] * x[i];
    }
  }
  return std::sqrt(std::max(variance, 0.0));
}

/// Draws standardized noise samples eps/s_n where
/// eps = Q(v)^T x - v^T x (or Q(v)^T Q(x) - v^T x with quantized inputs),
/// quantization is stochastic, and s_n is the analytic standard deviation.
/// Throws DegenerateVarianceError when every element sits exactly on the
/// grid, making s_n = 0.
inline std::vector<double> noise_samples(const NoiseStudyConfig& cfg) {
  if (cfg.n == 0 || cfg.trials == 0) {
    throw std::invalid_argument("noise_samples: n and trials must be positive");
  }

  std::vector<double> v(cfg.n), x(cfg.n);
  auto draw_pair = [&](std::uint64_t trial) {
    rng::Stream stream(cfg.seed, rng::kStreamNoise, 0xD3A1ull, trial);
    for (auto& value : v) value = cfg.dist_v.sample(stream);
    for (auto& value : x) value = cfg.dist_x.sample(stream);
  };

  std::vector<double> samples;
  samples.reserve(cfg.trials);

  double sn = 0.0;
  std::vector<detail::Element> ev, ex;
  double exact_dot = 0.0;
  auto refresh = [&](std::uint64_t trial) {
    draw_pair(trial);
    sn = analytic_noise_sd(v, x, cfg.bucket_size, cfg.levels,
                           cfg.quantize_inputs);
    if (sn == 0.0) {
      throw DegenerateVarianceError(
          "noise_samples: all quantization variances are zero (values on grid)");
    }
    ev = detail::prepare(v, cfg.bucket_size, cfg.levels);
    if (cfg.quantize_inputs) ex = detail::prepare(x, cfg.bucket_size, cfg.levels);
    exact_dot = 0.0;
    for (std::size_t i = 0; i < cfg.n; ++i) exact_dot += v[i] * x[i];
  };

  refresh(0);
  const double s = static_cast<double>(cfg.levels);
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    if (cfg.redraw_per_trial && trial > 0) refresh(trial);
    double dot = 0.0;
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const double uv =
          rng::to_unit(rng::hash_words(cfg.seed, rng::kStreamNoise, trial, i));
      const double xiv = uv < ev[i].k ? 1.0 : 0.0;
      const double qv = ev[i].alpha * ((ev[i].l + xiv) / s) + ev[i].beta;
      double xq = x[i];
      if (cfg.quantize_inputs) {
        const double ux = rng::to_unit(
            rng::hash_words(cfg.seed, rng::kStreamNoise, trial, i, 0x1ull));
        const double xix = ux < ex[i].k ? 1.0 : 0.0;
        xq = ex[i].alpha * ((ex[i].l + xix) / s) + ex[i].beta;
      }
      dot += qv * xq;
    }
    samples.push_back((dot - exact_dot) / sn);
  }
  return samples;
}

struct NormalityDiagnostics {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double ks_statistic = 0.0;
  bool degenerate = false;
};

/// Moment and Kolmogorov-Smirnov diagnostics against the standard normal.
/// The KS statistic uses the exact N(0,1) CDF; no parameters are estimated
/// from the sample.
inline NormalityDiagnostics normality_diagnostics(std::span<const double> samples) {
  if (samples.size() < 1000) {
    throw std::invalid_argument("normality_diagnostics: need at least 1000 samples");
  }
  NormalityDiagnostics d;
  const double n = static_cast<double>(samples.size());
  for (double v : samples) d.mean += v;
  d.mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : samples) {
    const double c = v - d.mean;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  d.variance = m2;
  if (m2 == 0.0) {
    d.degenerate = true;
    d.skewness = std::numeric_limits<double>::quiet_NaN();
    d.excess_kurtosis = std::numeric_limits<double>::quiet_NaN();
    d.ks_statistic = std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  d.skewness = m3 / std::pow(m2, 1.5);
  d.excess_kurtosis = m4 / (m2 * m2) - 3.0;

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = normal_cdf(sorted[i]);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    ks = std::max(ks, std::max(cdf - lo, hi - cdf));
  }
  d.ks_statistic = ks;
  return d;
}

struct MomentBoundReport {
  std::size_t cases = 0;
  std::size_t violations = 0;
  double max_excess = 0.0;  // how far outside the bounds, worst case
};

/// Exact check of the second/third moment bounds of the stochastic
/// quantizer: l^2/s^2 <= E[Q^2] <= (l+1)^2/s^2 and the cubic analogue, with
/// expectations computed from the two-point law rather than sampled.
inline MomentBoundReport moment_bound_check(std::span<const double> scaled,
                                            std::uint32_t s) {
  MomentBoundReport report;
  const double sd = static_cast<double>(s);
  for (double v : scaled) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("moment_bound_check: value outside [0,1]");
    }
    const double t = v * sd;
    double l = std::floor(t);
    double k = t - l;
    if (l >= sd) {
      l = sd;
      k = 0.0;
    }
    const double lo = l / sd;
    const double hi = (l + 1.0) / sd;
    const double m2 = (1.0 - k) * lo * lo + k * hi * hi;
    const double m3 = (1.0 - k) * lo * lo * lo + k * hi * hi * hi;
    report.cases += 2;
    const double lo2 = lo * lo, hi2 = hi * hi;
    const double lo3 = lo * lo * lo, hi3 = hi * hi * hi;
    if (m2 < lo2 || m2 > hi2) {
      ++report.violations;
      report.max_excess =
          std::max(report.max_excess, std::max(lo2 - m2, m2 - hi2));
    }
    if (m3 < lo3 || m3 > hi3) {
      ++report.violations;
      report.max_excess =
          std::max(report.max_excess, std::max(lo3 - m3, m3 - hi3));
    }
  }
  return report;
}

}  // namespace qdz
