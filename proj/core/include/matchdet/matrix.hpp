#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace matchdet::num {

/// Dense row-major matrix of 64-bit reals. Immutable by convention once
/// handed to a Tape; cheap to move, explicit to copy via clone-like usage.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);  // zero-filled
  Matrix(int rows, int cols, std::vector<double> data);
  Matrix(int rows, int cols, std::initializer_list<double> data);

  static Matrix full(int rows, int cols, double value);
  static Matrix ones(int rows, int cols) { return full(rows, cols, 1.0); }
  static Matrix identity(int n);
  /// Column vector from values.
  static Matrix column(std::vector<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  Matrix transposed() const;
  double sum() const;
  double max_abs() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B. Shapes must agree; throws std::invalid_argument otherwise.
Matrix matmul(const Matrix& a, const Matrix& b);

}  // namespace matchdet::num
