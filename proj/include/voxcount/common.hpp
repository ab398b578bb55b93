#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxcount {

using std::int64_t;
using std::uint64_t;

// Shape/contract violations between tensors, kernels and grids.
class shape_error : public std::runtime_error {
 public:
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Value outside the domain of an operation (empty input, bad index, gt <= 0, ...).
class domain_error : public std::runtime_error {
 public:
  explicit domain_error(const std::string& what) : std::runtime_error(what) {}
};

// A generator could not satisfy its constraints within bounded retries.
class generation_error : public std::runtime_error {
 public:
  explicit generation_error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent experiment configuration / checkpoint.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (non-finite loss or gradient).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace voxcount
