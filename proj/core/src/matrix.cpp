#include "matchdet/matrix.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace matchdet::num {

namespace {
using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix shape");
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix shape");
  if (data_.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("matrix data length does not match shape");
}

Matrix::Matrix(int rows, int cols, std::initializer_list<double> data)
    : Matrix(rows, cols, std::vector<double>(data)) {}

Matrix Matrix::full(int rows, int cols, double value) {
  Matrix m(rows, cols);
  for (double& x : m.data_) x = value;
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Matrix(n, 1, std::move(values));
}

bool Matrix::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

double Matrix::sum() const {
  double s = 0.0;
  for (double x : data_) s += x;
  return s;
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  if (out.empty() || a.cols() == 0) return out;
  Eigen::Map<const EigenRowMajor> ma(a.data(), a.rows(), a.cols());
  Eigen::Map<const EigenRowMajor> mb(b.data(), b.rows(), b.cols());
  Eigen::Map<EigenRowMajor> mo(out.data(), out.rows(), out.cols());
  mo.noalias() = ma * mb;
  return out;
}

}  // namespace matchdet::num
