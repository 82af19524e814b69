#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "qdz/config.hpp"
#include "qdz/dataset.hpp"
#include "qdz/errors.hpp"
#include "qdz/model_io.hpp"
#include "qdz/net.hpp"
#include "qdz/sizing.hpp"
#include "qdz/stats.hpp"
#include "qdz/train.hpp"
#include "qdz/version.hpp"

namespace qdz::pipeline {

namespace fs = std::filesystem;

/// Pulls settings out of a KeyValueConfig while recording both the key set
/// consulted (for unknown-key rejection) and the effective values (for the
/// manifest).
class ConfigResolver {
 public:
  explicit ConfigResolver(const KeyValueConfig& cfg) : cfg_(cfg) {}

  std::string str(const std::string& key, const std::string& fallback) {
    const std::string v = cfg_.get_string(key, fallback);
    record(key, v);
    return v;
  }

  std::string require(const std::string& key) {
    const std::string v = cfg_.require_string(key);
    record(key, v);
    return v;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const std::uint64_t v = cfg_.get_u64(key, fallback);
    record(key, std::to_string(v));
    return v;
  }

  double number(const std::string& key, double fallback) {
    const double v = cfg_.get_double(key, fallback);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    record(key, buf);
    return v;
  }

  bool flag(const std::string& key, bool fallback) {
    const bool v = cfg_.get_bool(key, fallback);
    record(key, v ? "on" : "off");
    return v;
  }

  std::vector<std::uint32_t> u32_list(const std::string& key,
                                      std::vector<std::uint32_t> fallback) {
    const auto v = cfg_.get_u32_list(key, std::move(fallback));
    std::string joined;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i > 0) joined += ",";
      joined += std::to_string(v[i]);
    }
    record(key, joined);
    return v;
  }

  /// Errors on any input key that was never consulted.
  void finish() const { cfg_.reject_unknown(consulted_); }

  const KeyValueConfig& resolved() const { return resolved_; }

 private:
  void record(const std::string& key, const std::string& value) {
    consulted_.insert(key);
    resolved_.set_value(key, value);
  }

  const KeyValueConfig& cfg_;
  KeyValueConfig resolved_;
  std::set<std::string> consulted_;
};

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string());
}

inline void write_manifest(const fs::path& out, const std::string& command,
                           std::uint64_t seed, const KeyValueConfig& resolved) {
  KeyValueConfig manifest = resolved;
  manifest.set_value("command", command);
  manifest.set_value("seed", std::to_string(seed));
  manifest.set_value("version", kVersion);
  std::ofstream os(out / "manifest.qdzconf");
  if (!os) throw ConfigError("cannot write manifest in " + out.string());
  os << manifest.serialize();
}

struct ResultRow {
  std::string method;
  std::string bits;  // "32" for full precision
  double accuracy = 0.0;
  std::uint64_t full_bits = 0;
  std::uint64_t plain_bits = 0;
  std::uint64_t huffman_bits = 0;
  double gain_plain = 1.0;
  double gain_huffman = 1.0;
  double mean_code_length = 0.0;
};

inline constexpr const char* kResultHeader =
    "method,bits,accuracy,full_bits,plain_bits,huffman_bits,gain_plain,"
    "gain_huffman,mean_code_length";

inline std::string format_result_row(const ResultRow& row) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%llu,%llu,%llu,%.6g,%.6g,%.6g",
                row.method.c_str(), row.bits.c_str(), row.accuracy,
                static_cast<unsigned long long>(row.full_bits),
                static_cast<unsigned long long>(row.plain_bits),
                static_cast<unsigned long long>(row.huffman_bits),
                row.gain_plain, row.gain_huffman, row.mean_code_length);
  return buf;
}

inline void write_result(const fs::path& out, const ResultRow& row) {
  std::ofstream os(out / "result.csv");
  if (!os) throw ConfigError("cannot write result.csv in " + out.string());
  os << kResultHeader << "\n" << format_result_row(row) << "\n";
}

inline ResultRow full_precision_row(const std::string& method,
                                    const Network& net, double accuracy) {
  ResultRow row;
  row.method = method;
  row.bits = "32";
  row.accuracy = accuracy;
  std::uint64_t weights = 0;
  for (const auto& layer : net.layers()) weights += layer.weights.size();
  row.full_bits = row.plain_bits = row.huffman_bits = 32ull * weights;
  row.mean_code_length = 32.0;
  return row;
}

inline ResultRow quantized_row(const std::string& method, std::uint32_t bits,
                               double accuracy, const ModelContainer& container,
                               std::uint32_t f) {
  const SizeReport report = model_size_report(container, f);
  ResultRow row;
  row.method = method;
  row.bits = std::to_string(bits);
  row.accuracy = accuracy;
  row.full_bits = report.full_precision_bits;
  row.plain_bits = report.quantized_bits;
  row.huffman_bits = report.huffman_bits;
  row.gain_plain = report.gain_plain;
  row.gain_huffman = report.gain_huffman;
  row.mean_code_length = report.mean_code_length;
  return row;
}

inline Dataset load_dataset(ConfigResolver& r) {
  const std::string source = r.str("dataset", "synth");
  const std::uint64_t data_seed = r.u64("data_seed", 9001);
  const double test_fraction = r.number("test_fraction", 0.25);
  if (source == "synth") {
    const SynthKind kind = parse_synth_kind(r.str("synth.kind", "spirals"));
    const std::size_t n = r.u64("synth.n", 2000);
    const int classes = static_cast<int>(r.u64("synth.classes", 3));
    const double noise = r.number("synth.noise", 0.25);
    return synth_dataset(kind, n, classes, noise, data_seed, test_fraction);
  }
  if (source == "csv") {
    const std::string path = r.require("csv.path");
    const std::string label = r.str("csv.label", "label");
    return load_csv(path, label, data_seed, test_fraction);
  }
  throw ConfigError("dataset must be 'synth' or 'csv', got '" + source + "'");
}

inline std::vector<std::size_t> parse_hidden(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stoull(cell));
    } catch (const std::exception&) {
      throw ConfigError("bad hidden layer width '" + cell + "'");
    }
  }
  if (out.empty()) throw ConfigError("hidden layer list is empty");
  return out;
}

/// Accepts either a checkpoint/container file or a run directory holding
/// checkpoint.qdz or model.qdz.
inline fs::path resolve_artifact(const std::string& text) {
  const fs::path path(text);
  if (fs::is_directory(path)) {
    if (fs::exists(path / "checkpoint.qdz")) return path / "checkpoint.qdz";
    if (fs::exists(path / "model.qdz")) return path / "model.qdz";
    throw DependencyError("no checkpoint.qdz or model.qdz in " + path.string());
  }
  if (!fs::exists(path)) {
    throw DependencyError("missing artifact " + path.string());
  }
  return path;
}

inline std::uint8_t parse_encoding(const std::string& text) {
  if (text == "packed") return kEncodingPacked;
  if (text == "huffman") return kEncodingHuffman;
  throw ConfigError("encoding must be 'packed' or 'huffman', got '" + text + "'");
}

inline DistillationConfig distill_settings(ConfigResolver& r) {
  DistillationConfig cfg;
  cfg.temperature = r.number("distill.temperature", 5.0);
  cfg.soft_weight = r.number("distill.soft_weight", 0.5);
  return cfg;
}

inline std::size_t sweep_worker_cap() {
  if (const char* env = std::getenv("QDZ_THREADS")) {
    const long v = std::atol(env);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs `body(bits, out_dir, derived_seed)` once per requested width.
/// Multi-width sweeps execute in waves of independent worker threads capped
/// by QDZ_THREADS, each writing to its own subdirectory.
template <class Body>
void run_bits_sweep(const std::vector<std::uint32_t>& bits_list,
                    const fs::path& out, std::uint64_t seed, Body body) {
  if (bits_list.size() == 1) {
    body(bits_list[0], out, seed);
    return;
  }
  const std::size_t cap = sweep_worker_cap();
  std::vector<std::exception_ptr> failures(bits_list.size());
  for (std::size_t start = 0; start < bits_list.size(); start += cap) {
    const std::size_t end = std::min(bits_list.size(), start + cap);
    std::vector<std::thread> pool;
    for (std::size_t i = start; i < end; ++i) {
      pool.emplace_back([&, i] {
        try {
          const std::uint32_t b = bits_list[i];
          body(b, out / ("b" + std::to_string(b)),
               rng::hash_words(seed, 0x5EEDull, b));
        } catch (...) {
          failures[i] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
}

}  // namespace detail

inline void cmd_train_teacher(const KeyValueConfig& cfg, const fs::path& out,
                              std::uint64_t seed) {
  ConfigResolver r(cfg);
  const Dataset data = detail::load_dataset(r);
  const auto hidden = detail::parse_hidden(r.str("teacher.hidden", "64,64,64"));

  TrainConfig tc;
  tc.epochs = r.u64("epochs", 60);
  tc.batch_size = r.u64("batch_size", 32);
  tc.lr = r.number("lr", 0.1);
  tc.lr_halving = r.flag("lr_halving", false);
  tc.seed = seed;
  r.finish();

  detail::ensure_dir(out);
  Network init = Network::dense_classifier(data.train_x.cols, hidden,
                                           data.classes, seed);
  MetricsWriter metrics(out / "metrics.csv");
  const TrainResult result = train_full_precision(init, data, tc, &metrics);
  save_network(result.net, out / "checkpoint.qdz");
  detail::write_result(
      out, detail::full_precision_row("teacher", result.net,
                                      result.test_accuracy));
  detail::write_manifest(out, "train-teacher", seed, r.resolved());
}

inline void cmd_train_student(const KeyValueConfig& cfg, const fs::path& out,
                              std::uint64_t seed) {
  ConfigResolver r(cfg);
  const Dataset data = detail::load_dataset(r);
  const auto hidden = detail::parse_hidden(r.str("student.hidden", "32"));
  const std::string mode = r.str("student.mode", "distilled");
  if (mode != "plain" && mode != "distilled") {
    throw ConfigError("student.mode must be 'plain' or 'distilled'");
  }

  TrainConfig tc;
  tc.epochs = r.u64("epochs", 60);
  tc.batch_size = r.u64("batch_size", 32);
  tc.lr = r.number("lr", 0.1);
  tc.lr_halving = r.flag("lr_halving", false);
  tc.seed = seed;
  tc.distill = detail::distill_settings(r);

  Network teacher;
  if (mode == "distilled") {
    teacher = load_network(detail::resolve_artifact(r.require("teacher")));
    tc.teacher = &teacher;
  }
  r.finish();

  detail::ensure_dir(out);
  Network init = Network::dense_classifier(data.train_x.cols, hidden,
                                           data.classes, seed);
  MetricsWriter metrics(out / "metrics.csv");
  const TrainResult result = train_full_precision(init, data, tc, &metrics);
  save_network(result.net, out / "checkpoint.qdz");
  detail::write_result(
      out, detail::full_precision_row("student-" + mode, result.net,
                                      result.test_accuracy));
  detail::write_manifest(out, "train-student", seed, r.resolved());
}

inline void cmd_quantize_pm(const KeyValueConfig& cfg, const fs::path& out,
                            std::uint64_t seed) {
  ConfigResolver r(cfg);
  const Dataset data = detail::load_dataset(r);
  const fs::path model_path = detail::resolve_artifact(r.require("model"));
  const auto bits_list = r.u32_list("bits", {8});
  const bool bucketing = r.flag("bucketing", true);
  const std::uint32_t bucket_size =
      static_cast<std::uint32_t>(r.u64("bucket_size", 256));
  const std::uint8_t encoding =
      detail::parse_encoding(r.str("encoding", "huffman"));
  const std::uint32_t f = static_cast<std::uint32_t>(r.u64("f", 32));
  r.finish();

  const Network model = load_network(model_path);
  const std::string method = bucketing ? "pm-bucket" : "pm-nobucket";

  detail::run_bits_sweep(
      bits_list, out, seed,
      [&](std::uint32_t bits, const fs::path& dir, std::uint64_t run_seed) {
        detail::ensure_dir(dir);
        const QuantizedNetwork qn = pm_quantize(model, bits, bucketing, bucket_size);
        const ModelContainer container =
            quantized_to_container(qn.net, qn.layers, encoding);
        write_container_file(container, dir / "model.qdz");
        const double acc = evaluate_accuracy(qn.net, data.test_x, data.test_y);
        detail::write_result(
            dir, detail::quantized_row(method, bits, acc, container, f));
        KeyValueConfig resolved = r.resolved();
        resolved.set_value("bits", std::to_string(bits));
        detail::write_manifest(dir, "quantize-pm", run_seed, resolved);
      });
}

inline void cmd_quantize_distill(const KeyValueConfig& cfg, const fs::path& out,
                                 std::uint64_t seed) {
  ConfigResolver r(cfg);
  const Dataset data = detail::load_dataset(r);
  const Network teacher = load_network(detail::resolve_artifact(r.require("teacher")));
  const auto hidden = detail::parse_hidden(r.str("student.hidden", "32"));
  const auto bits_list = r.u32_list("bits", {4});
  const std::string loss = r.str("loss", "distill");
  if (loss != "distill" && loss != "normal") {
    throw ConfigError("loss must be 'distill' or 'normal'");
  }
  const std::string quant_mode = r.str("quant.mode", "deterministic");
  if (quant_mode != "deterministic" && quant_mode != "stochastic") {
    throw ConfigError("quant.mode must be 'deterministic' or 'stochastic'");
  }

  QDConfig qd;
  qd.bucket_size = static_cast<std::uint32_t>(r.u64("bucket_size", 256));
  qd.lr = r.number("lr", 0.1);
  qd.epochs = r.u64("epochs", 60);
  qd.batch_size = r.u64("batch_size", 32);
  qd.distill = detail::distill_settings(r);
  if (loss == "normal") qd.distill.soft_weight = 0.0;
  qd.scheme.mode = quant_mode == "deterministic" ? QuantMode::deterministic
                                                 : QuantMode::stochastic;
  const std::uint8_t encoding =
      detail::parse_encoding(r.str("encoding", "huffman"));
  const std::uint32_t f = static_cast<std::uint32_t>(r.u64("f", 32));
  r.finish();

  const std::string method = loss == "distill" ? "qd-distill" : "qd-normal";

  detail::run_bits_sweep(
      bits_list, out, seed,
      [&](std::uint32_t bits, const fs::path& dir, std::uint64_t run_seed) {
        detail::ensure_dir(dir);
        QDConfig local = qd;
        local.scheme.levels = (1u << bits) - 1;
        local.seed = run_seed;
        Network init = Network::dense_classifier(data.train_x.cols, hidden,
                                                 data.classes, run_seed);
        MetricsWriter metrics(dir / "metrics.csv");
        const QDResult result =
            quantized_distillation(init, teacher, data, local, &metrics);
        const ModelContainer container = quantized_to_container(
            result.quantized.net, result.quantized.layers, encoding);
        write_container_file(container, dir / "model.qdz");
        detail::write_result(dir, detail::quantized_row(method, bits,
                                                        result.test_accuracy,
                                                        container, f));
        KeyValueConfig resolved = r.resolved();
        resolved.set_value("bits", std::to_string(bits));
        detail::write_manifest(dir, "quantize-distill", run_seed, resolved);
      });
}

inline void cmd_quantize_diff(const KeyValueConfig& cfg, const fs::path& out,
                              std::uint64_t seed) {
  ConfigResolver r(cfg);
  const Dataset data = detail::load_dataset(r);
  const Network model = load_network(detail::resolve_artifact(r.require("model")));
  const auto bits_list = r.u32_list("bits", {2});
  const std::string loss = r.str("loss", "distill");
  if (loss != "distill" && loss != "task") {
    throw ConfigError("loss must be 'distill' or 'task'");
  }
  const std::string init = r.str("init", "quantile");
  if (init != "quantile" && init != "uniform") {
    throw ConfigError("init must be 'quantile' or 'uniform'");
  }

  DQConfig dq;
  dq.bucket_size = static_cast<std::uint32_t>(r.u64("bucket_size", 256));
  dq.lr = r.number("lr", 0.02);
  dq.iterations = r.u64("iterations", 400);
  dq.batch_size = r.u64("batch_size", 32);
  dq.loss = loss == "distill" ? DQLoss::distill : DQLoss::task;
  dq.init = init == "quantile" ? DQInit::quantile : DQInit::uniform;
  dq.redistribute = r.flag("redistribute", true);
  dq.redistribute_batches = r.u64("redistribute.batches", 8);
  dq.distill = detail::distill_settings(r);
  const std::uint8_t encoding =
      detail::parse_encoding(r.str("encoding", "huffman"));
  const std::uint32_t f = static_cast<std::uint32_t>(r.u64("f", 32));
  r.finish();

  detail::run_bits_sweep(
      bits_list, out, seed,
      [&](std::uint32_t bits, const fs::path& dir, std::uint64_t run_seed) {
        detail::ensure_dir(dir);
        DQConfig local = dq;
        local.bits_per_layer = {bits};
        local.seed = run_seed;
        MetricsWriter metrics(dir / "metrics.csv");
        const DQResult result =
            differentiable_quantization(model, data, local, &metrics);
        const ModelContainer container = quantized_to_container(
            result.quantized.net, result.quantized.layers, encoding);
        write_container_file(container, dir / "model.qdz");
        detail::write_result(dir, detail::quantized_row("dq", bits,
                                                        result.test_accuracy,
                                                        container, f));
        KeyValueConfig resolved = r.resolved();
        resolved.set_value("bits", std::to_string(bits));
        detail::write_manifest(dir, "quantize-diff", run_seed, resolved);
      });
}

inline void cmd_noise_study(const KeyValueConfig& cfg, const fs::path& out,
                            std::uint64_t seed) {
  ConfigResolver r(cfg);
  const auto n_list = r.u32_list("n", {10000});
  const auto s_list = r.u32_list("s", {15});
  const std::uint32_t bucket_size =
      static_cast<std::uint32_t>(r.u64("bucket_size", 256));
  const std::size_t trials = r.u64("trials", 10000);
  const bool quantize_inputs = r.flag("quantize_inputs", false);
  const std::string redraw = r.str("redraw", "study");
  if (redraw != "study" && redraw != "trial") {
    throw ConfigError("redraw must be 'study' or 'trial'");
  }
  const DistSpec dist_v = parse_dist(r.str("dist.v", "uniform:-1:1"));
  const DistSpec dist_x = parse_dist(r.str("dist.x", "uniform:-1:1"));
  r.finish();

  detail::ensure_dir(out);
  std::ofstream os(out / "study.csv");
  if (!os) throw ConfigError("cannot write study.csv");
  os << "n,s,bucket_size,trials,quantize_inputs,dist_v,dist_x,mean,variance,"
        "skewness,excess_kurtosis,ks\n";

  for (auto n : n_list) {
    for (auto s : s_list) {
      NoiseStudyConfig study;
      study.n = n;
      study.levels = s;
      study.bucket_size = bucket_size;
      study.trials = trials;
      study.quantize_inputs = quantize_inputs;
      study.redraw_per_trial = redraw == "trial";
      study.dist_v = dist_v;
      study.dist_x = dist_x;
      study.seed = seed;
      const auto samples = noise_samples(study);
      const auto diag = normality_diagnostics(samples);
      char buf[320];
      std::snprintf(buf, sizeof(buf),
                    "%u,%u,%u,%zu,%s,%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", n,
                    s, bucket_size, trials, quantize_inputs ? "on" : "off",
                    dist_v.to_string().c_str(), dist_x.to_string().c_str(),
                    diag.mean, diag.variance, diag.skewness,
                    diag.excess_kurtosis, diag.ks_statistic);
      os << buf;
    }
  }
  detail::write_manifest(out, "noise-study", seed, r.resolved());
}

inline void cmd_report(const KeyValueConfig& cfg, const fs::path& out,
                       std::uint64_t seed) {
  ConfigResolver r(cfg);
  const fs::path runs(r.require("runs"));
  const std::uint32_t f = static_cast<std::uint32_t>(r.u64("f", 32));
  r.finish();
  if (!fs::is_directory(runs)) {
    throw DependencyError("runs directory not found: " + runs.string());
  }

  // Collect result.csv files (sorted paths for deterministic output) and
  // recompute sizes from the stored container where one exists.
  std::vector<fs::path> result_files;
  for (const auto& entry : fs::recursive_directory_iterator(runs)) {
    if (entry.is_regular_file() && entry.path().filename() == "result.csv") {
      result_files.push_back(entry.path());
    }
  }
  std::sort(result_files.begin(), result_files.end());

  std::vector<std::string> rows;
  for (const auto& file : result_files) {
    std::ifstream is(file);
    std::string header, line;
    if (!std::getline(is, header) || !std::getline(is, line)) continue;
    const fs::path container_path = file.parent_path() / "model.qdz";
    if (fs::exists(container_path)) {
      // Re-derive the size columns from the container itself.
      const auto comma1 = line.find(',');
      const auto comma2 = line.find(',', comma1 + 1);
      const auto comma3 = line.find(',', comma2 + 1);
      const std::string method = line.substr(0, comma1);
      const std::string bits = line.substr(comma1 + 1, comma2 - comma1 - 1);
      const double accuracy =
          std::stod(line.substr(comma2 + 1, comma3 - comma2 - 1));
      const ModelContainer container = read_container_file(container_path);
      detail::ResultRow row = detail::quantized_row(
          method, static_cast<std::uint32_t>(std::stoul(bits)), accuracy,
          container, f);
      rows.push_back(detail::format_result_row(row));
    } else {
      rows.push_back(line);
    }
  }

  detail::ensure_dir(out);
  std::ofstream os(out / "summary.csv");
  if (!os) throw ConfigError("cannot write summary.csv");
  os << detail::kResultHeader << "\n";
  for (const auto& row : rows) os << row << "\n";
  detail::write_manifest(out, "report", seed, r.resolved());
}

/// Dispatch. Throws ConfigError / DependencyError / DivergenceError; the
/// CLI maps these onto exit codes 2 / 3 / 4.
inline void run_command(const std::string& command, const KeyValueConfig& cfg,
                        const fs::path& out, std::uint64_t seed) {
  if (command == "train-teacher") return cmd_train_teacher(cfg, out, seed);
  if (command == "train-student") return cmd_train_student(cfg, out, seed);
  if (command == "quantize-pm") return cmd_quantize_pm(cfg, out, seed);
  if (command == "quantize-distill") return cmd_quantize_distill(cfg, out, seed);
  if (command == "quantize-diff") return cmd_quantize_diff(cfg, out, seed);
  if (command == "noise-study") return cmd_noise_study(cfg, out, seed);
  if (command == "report") return cmd_report(cfg, out, seed);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace qdz::pipeline
