#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace qdz {

/// Row-major 2-D array of doubles. All network math at desk scale runs on
/// (batch x features) matrices, so a dedicated matrix beats a general
/// n-d tensor here.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
};

}  // namespace qdz
