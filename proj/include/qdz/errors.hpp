#pragma once

#include <stdexcept>
#include <string>

namespace qdz {

// Bad settings, bad CLI input, malformed data files. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required upstream artifact (checkpoint, container) is missing. Exit code 3.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss. Exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupted or inconsistent serialized state (bad magic, CRC mismatch,
// out-of-range index).
class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All quantization variances are zero, the standardized noise is undefined.
class DegenerateVarianceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qdz
