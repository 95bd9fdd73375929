#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace efedsim {

/// Raised when operand shapes are incompatible for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation receives NaN or Inf input.
class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
///
/// Zero-row matrices are allowed (an empty token sequence embeds to 0 x d);
/// everything else about the layout is fixed because the wire codec
/// serializes `data()` verbatim.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool all_finite() const;
  std::string shape_string() const;

  /// Bit-exact comparison (distinguishes -0.0 from 0.0, NaN payloads).
  bool bit_equal(const Matrix& other) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

/// Row-wise softmax. Subtracts each row's max before exponentiating.
Matrix softmax_rows(const Matrix& z);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Columns [first, first + count).
Matrix column_slice(const Matrix& m, std::size_t first, std::size_t count);
/// Rows [first, first + count).
Matrix row_slice(const Matrix& m, std::size_t first, std::size_t count);
Matrix hconcat(std::span<const Matrix> parts);

void require_finite(const Matrix& m, const char* what);

/// Deterministic generator with a portable output sequence.
///
/// The raw mt19937_64 stream is fixed by the standard but the
/// std::*_distribution adaptors are not, so draws are mapped by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  std::size_t below(std::size_t bound);

  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);
  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a seed with a stream label so that sub-generators are independent.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace efedsim
