#include "efedsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace efedsim {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::bit_equal(const Matrix& other) const {
  return rows_ == other.rows_ && cols_ == other.cols_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " +
                         b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  // i-p-j order; each c(i,j) still accumulates its terms in increasing p.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      auto brow = b.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aip * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix scale(const Matrix& m, double factor) {
  Matrix c = m;
  for (double& v : c.data()) v *= factor;
  return c;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) throw NonFiniteError(std::string(what) + ": non-finite input");
}

Matrix softmax_rows(const Matrix& z) {
  require_finite(z, "softmax_rows");
  Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto in = z.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double peak = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      sum += dst[c];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

double frobenius_norm(const Matrix& m) {
  double sum = 0.0;
  for (double v : m.data()) sum += v * v;
  return std::sqrt(sum);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    if (std::isnan(d)) return d;
    worst = std::max(worst, d);
  }
  return worst;
}

Matrix column_slice(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.cols()) throw DimensionError("column_slice out of range");
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
  return out;
}

Matrix row_slice(const Matrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) throw DimensionError("row_slice out of range");
  std::vector<double> data(m.data().begin() + first * m.cols(),
                           m.data().begin() + (first + count) * m.cols());
  return Matrix(count, m.cols(), std::move(data));
}

Matrix hconcat(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("hconcat: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p(r, c);
    offset += p.cols();
  }
  return out;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t bound) {
  if (bound == 0) return 0;
  return static_cast<std::size_t>(uniform() * static_cast<double>(bound)) % bound;
}

Matrix Rng::uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = uniform(lo, hi);
  return m;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * normal();
  return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace efedsim
