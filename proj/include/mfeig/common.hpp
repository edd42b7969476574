#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfeig {

// Invalid user input: bad config values, malformed files, violated preconditions.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Runtime numerical failure: singular systems, non-invertible transforms,
// degenerate evidence, infeasible budgets.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

using index_t = std::int64_t;

// Row-major dense matrix of doubles. Small utility type used for sample
// batches and tabulated data; heavy linear algebra goes through Eigen.
class Matrix {
 public:
  Matrix() = default;
  Matrix(index_t rows, index_t cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols)) {}

  index_t rows() const { return rows_; }
  index_t cols() const { return cols_; }
  double& operator()(index_t r, index_t c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  double operator()(index_t r, index_t c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  double* row(index_t r) { return data_.data() + r * cols_; }
  const double* row(index_t r) const { return data_.data() + r * cols_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  bool empty() const { return data_.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  index_t rows_ = 0;
  index_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace mfeig
