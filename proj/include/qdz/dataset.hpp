#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "qdz/errors.hpp"
#include "qdz/rng.hpp"
#include "qdz/tensor.hpp"

namespace qdz {

/// Labeled features with a deterministic train/test split.
struct Dataset {
  Tensor train_x, test_x;
  std::vector<int> train_y, test_y;
  int classes = 0;
};

enum class SynthKind { blobs, spirals };

inline SynthKind parse_synth_kind(const std::string& name) {
  if (name == "blobs") return SynthKind::blobs;
  if (name == "spirals") return SynthKind::spirals;
  throw ConfigError("unknown synthetic dataset kind: " + name);
}

namespace detail {

inline Dataset split_rows(const Tensor& features, const std::vector<int>& labels,
                          int classes, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(features.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Stream stream(seed, rng::kStreamSplit);
  stream.shuffle(std::span<std::size_t>(order));

  const std::size_t test_n =
      static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(features.rows)));
  const std::size_t train_n = features.rows - test_n;

  Dataset ds;
  ds.classes = classes;
  ds.train_x = Tensor(train_n, features.cols);
  ds.test_x = Tensor(test_n, features.cols);
  ds.train_y.reserve(train_n);
  ds.test_y.reserve(test_n);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t src = order[i];
    const bool is_train = i < train_n;
    Tensor& dst = is_train ? ds.train_x : ds.test_x;
    const std::size_t row = is_train ? i : i - train_n;
    for (std::size_t c = 0; c < features.cols; ++c) {
      dst.at(row, c) = features.at(src, c);
    }
    (is_train ? ds.train_y : ds.test_y).push_back(labels[src]);
  }
  return ds;
}

}  // namespace detail

/// Seeded 2-D synthetic tasks. blobs: one Gaussian cluster per class placed
/// on a circle. spirals: interleaved arms, one per class, with angular noise.
inline Dataset synth_dataset(SynthKind kind, std::size_t n, int classes,
                             double noise, std::uint64_t seed,
                             double test_fraction = 0.25) {
  if (classes < 2) throw ConfigError("synth_dataset: need at least 2 classes");
  if (n < static_cast<std::size_t>(classes)) {
    throw ConfigError("synth_dataset: need at least one sample per class");
  }

  Tensor features(n, 2);
  std::vector<int> labels(n);
  rng::Stream stream(seed, rng::kStreamData);
  const double two_pi = 2.0 * std::numbers::pi;

  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    labels[i] = c;
    if (kind == SynthKind::blobs) {
      const double angle = two_pi * c / classes;
      features.at(i, 0) = 2.0 * std::cos(angle) + noise * stream.gauss();
      features.at(i, 1) = 2.0 * std::sin(angle) + noise * stream.gauss();
    } else {
      const double t = 0.1 + 0.9 * stream.u01();  // radial position along the arm
      const double radius = 2.0 * t;
      const double angle =
          1.5 * two_pi * t + two_pi * c / classes + noise * stream.gauss();
      features.at(i, 0) = radius * std::cos(angle);
      features.at(i, 1) = radius * std::sin(angle);
    }
  }
  return detail::split_rows(features, labels, classes, test_fraction, seed);
}

/// Loads a numeric CSV with a header row. Features are standardized to
/// per-column mean 0 / std 1 using train-split statistics only; a
/// zero-variance column keeps divisor 1 and so stays at zero after
/// centering. Labels must be integers in 0..C-1.
inline Dataset load_csv(const std::filesystem::path& path,
                        const std::string& label_column, std::uint64_t seed,
                        double test_fraction = 0.25) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("load_csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label_idx = i;
  }
  if (label_idx == header.size()) {
    throw ConfigError("load_csv: label column '" + label_column + "' not found");
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    std::size_t col = 0;
    double label_value = 0.0;
    while (std::getline(ss, cell, ',')) {
      double value = 0.0;
      try {
        std::size_t used = 0;
        value = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("load_csv: non-numeric cell at row " +
                          std::to_string(line_no) + ", column " +
                          std::to_string(col + 1));
      }
      if (col == label_idx) {
        label_value = value;
      } else {
        row.push_back(value);
      }
      ++col;
    }
    if (col != header.size()) {
      throw ConfigError("load_csv: row " + std::to_string(line_no) +
                        " has wrong cell count");
    }
    const int label = static_cast<int>(label_value);
    if (static_cast<double>(label) != label_value || label < 0) {
      throw ConfigError("load_csv: label at row " + std::to_string(line_no) +
                        " is not a non-negative integer");
    }
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  if (rows.empty()) throw ConfigError("load_csv: no data rows");

  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);

  Tensor features(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      features.at(r, c) = rows[r][c];
    }
  }
  Dataset ds = detail::split_rows(features, labels, classes, test_fraction, seed);

  // Standardize with train-split statistics.
  for (std::size_t c = 0; c < ds.train_x.cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < ds.train_x.rows; ++r) mean += ds.train_x.at(r, c);
    mean /= static_cast<double>(ds.train_x.rows);
    double var = 0.0;
    for (std::size_t r = 0; r < ds.train_x.rows; ++r) {
      const double d = ds.train_x.at(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(ds.train_x.rows);
    const double sd = std::sqrt(var);
    const double denom = sd == 0.0 ? 1.0 : sd;
    for (std::size_t r = 0; r < ds.train_x.rows; ++r) {
      ds.train_x.at(r, c) = (ds.train_x.at(r, c) - mean) / denom;
    }
    for (std::size_t r = 0; r < ds.test_x.rows; ++r) {
      ds.test_x.at(r, c) = (ds.test_x.at(r, c) - mean) / denom;
    }
  }
  return ds;
}

}  // namespace qdz
