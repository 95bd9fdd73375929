#include "efedsim/svdkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace efedsim::svd {

namespace {

using Column = std::vector<double>;

double dot(const Column& a, const Column& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Column& a) { return std::sqrt(dot(a, a)); }

std::vector<Column> to_columns(const Matrix& m) {
  std::vector<Column> cols(m.cols(), Column(m.rows()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) cols[c][r] = m(r, c);
  return cols;
}

Matrix from_columns(const std::vector<Column>& cols, std::size_t rows) {
  Matrix m(rows, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = cols[c][r];
  return m;
}

// Removes the components of `v` along `basis` (two passes for stability).
void project_out(Column& v, const std::vector<Column>& basis, std::size_t count) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t b = 0; b < count; ++b) {
      const double c = dot(v, basis[b]);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * basis[b][i];
    }
  }
}

// Replaces cols[idx] with a unit vector orthogonal to cols[0..idx), trying
// the standard basis in order.
void complete_column(std::vector<Column>& cols, std::size_t idx) {
  const std::size_t dim = cols[idx].size();
  for (std::size_t e = 0; e < dim; ++e) {
    Column v(dim, 0.0);
    v[e] = 1.0;
    project_out(v, cols, idx);
    const double len = norm(v);
    if (len > 0.5) {
      for (double& x : v) x /= len;
      cols[idx] = std::move(v);
      return;
    }
  }
  throw std::logic_error("complete_column: no independent basis vector left");
}

// Modified Gram-Schmidt with re-orthogonalization; degenerate columns are
// replaced by completion vectors.
void orthonormalize(std::vector<Column>& cols) {
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const double before = norm(cols[c]);
    project_out(cols[c], cols, c);
    const double len = norm(cols[c]);
    if (before == 0.0 || len <= 1e-10 * before) {
      complete_column(cols, c);
    } else {
      for (double& x : cols[c]) x /= len;
    }
  }
}

void validate_spectrum(const std::vector<double>& spectrum, std::size_t k) {
  if (k < 1 || k > spectrum.size()) {
    throw RankError("rank " + std::to_string(k) + " outside [1, " +
                    std::to_string(spectrum.size()) + "]");
  }
}

}  // namespace

TruncatedSvd::TruncatedSvd(Matrix u_k, std::vector<double> sigma_k, Matrix v_t_k,
                           std::vector<double> full_sigma)
    : u_k_(std::move(u_k)),
      sigma_k_(std::move(sigma_k)),
      v_t_k_(std::move(v_t_k)),
      full_sigma_(std::move(full_sigma)) {
  const std::size_t k = sigma_k_.size();
  if (u_k_.cols() != k || v_t_k_.rows() != k) {
    throw DimensionError("TruncatedSvd: factor shapes " + u_k_.shape_string() + ", " +
                         v_t_k_.shape_string() + " inconsistent with rank " + std::to_string(k));
  }
  if (full_sigma_.size() != std::min(u_k_.rows(), v_t_k_.cols()) || k > full_sigma_.size()) {
    throw DimensionError("TruncatedSvd: full spectrum length must be min(m, n)");
  }
  for (std::size_t i = 0; i < full_sigma_.size(); ++i) {
    if (!(full_sigma_[i] >= 0.0) || (i > 0 && full_sigma_[i] > full_sigma_[i - 1])) {
      throw std::invalid_argument("TruncatedSvd: singular values must be non-negative, descending");
    }
    if (i < k && full_sigma_[i] != sigma_k_[i]) {
      throw std::invalid_argument("TruncatedSvd: sigma_k must prefix the full spectrum");
    }
  }
}

TruncatedSvd svd(const Matrix& w, OpCounter* ops) {
  if (w.empty()) throw DimensionError("svd: empty matrix");
  require_finite(w, "svd");

  const bool flipped = w.rows() < w.cols();
  const Matrix a = flipped ? transpose(w) : w;
  const std::size_t p = a.rows();  // p >= q
  const std::size_t q = a.cols();

  std::vector<Column> work = to_columns(a);
  std::vector<Column> v(q, Column(q, 0.0));
  for (std::size_t i = 0; i < q; ++i) v[i][i] = 1.0;

  std::uint64_t flops = 0;
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 80;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        const double alpha = dot(work[i], work[i]);
        const double beta = dot(work[j], work[j]);
        const double gamma = dot(work[i], work[j]);
        flops += 6 * p;
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double xi = work[i][r];
          const double xj = work[j][r];
          work[i][r] = c * xi - s * xj;
          work[j][r] = s * xi + c * xj;
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double xi = v[i][r];
          const double xj = v[j][r];
          v[i][r] = c * xi - s * xj;
          v[j][r] = s * xi + c * xj;
        }
        flops += 6 * (p + q);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(q);
  for (std::size_t c = 0; c < q; ++c) sigma[c] = norm(work[c]);
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  std::vector<Column> left(q), right(q);
  std::vector<double> sorted(q);
  for (std::size_t c = 0; c < q; ++c) {
    sorted[c] = sigma[order[c]];
    left[c] = std::move(work[order[c]]);
    right[c] = std::move(v[order[c]]);
  }
  const double cutoff = sorted.front() * 1e-12;
  for (std::size_t c = 0; c < q; ++c) {
    if (sorted[c] > cutoff && sorted[c] > 0.0) {
      for (double& x : left[c]) x /= sorted[c];
    } else {
      complete_column(left, c);
    }
  }
  if (ops) ops->flops += flops;

  Matrix u_mat = from_columns(left, p);    // p x q
  Matrix v_mat = from_columns(right, q);   // q x q
  if (!flipped) return TruncatedSvd(std::move(u_mat), sorted, transpose(v_mat), sorted);
  // w^T = U S V^T  =>  w = V S U^T
  return TruncatedSvd(std::move(v_mat), sorted, transpose(u_mat), sorted);
}

TruncatedSvd truncate(const TruncatedSvd& s, std::size_t k) {
  if (k < 1 || k > s.k()) {
    throw RankError("truncate: rank " + std::to_string(k) + " outside [1, " +
                    std::to_string(s.k()) + "]");
  }
  std::vector<double> sigma(s.sigma_k().begin(), s.sigma_k().begin() + k);
  return TruncatedSvd(column_slice(s.u_k(), 0, k), std::move(sigma), row_slice(s.v_t_k(), 0, k),
                      s.full_sigma());
}

Matrix reconstruct(const LowRankFactors& f) {
  Matrix scaled = f.u;
  for (std::size_t r = 0; r < scaled.rows(); ++r)
    for (std::size_t c = 0; c < scaled.cols(); ++c) scaled(r, c) *= f.sigma[c];
  return matmul(scaled, f.v_t);
}

Matrix reconstruct(const TruncatedSvd& s) { return reconstruct(s.factors()); }

double energy_ratio(const std::vector<double>& spectrum, std::size_t k) {
  validate_spectrum(spectrum, k);
  double total = 0.0;
  double kept = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    total += spectrum[i] * spectrum[i];
    if (i + 1 == k) kept = total;
  }
  if (total == 0.0) return 1.0;
  return kept / total;
}

double energy_ratio(const TruncatedSvd& s, std::size_t k) { return energy_ratio(s.full_sigma(), k); }

std::size_t numerical_rank(const std::vector<double>& spectrum) {
  if (spectrum.empty() || spectrum.front() <= 0.0) return 0;
  const double cutoff = 1e-10 * spectrum.front();
  return static_cast<std::size_t>(
      std::count_if(spectrum.begin(), spectrum.end(), [&](double s) { return s > cutoff; }));
}

std::size_t rank_for_energy(const std::vector<double>& spectrum, double e) {
  if (!(e > 0.0 && e <= 1.0)) throw std::invalid_argument("rank_for_energy: e must be in (0, 1]");
  const std::size_t rank = numerical_rank(spectrum);
  if (rank == 0) return 1;
  double total = 0.0;
  for (std::size_t i = 0; i < rank; ++i) total += spectrum[i] * spectrum[i];
  const double target = e * total;
  double kept = 0.0;
  for (std::size_t k = 1; k <= rank; ++k) {
    kept += spectrum[k - 1] * spectrum[k - 1];
    if (kept >= target) return k;
  }
  return rank;
}

std::size_t rank_for_energy(const TruncatedSvd& s, double e) {
  return rank_for_energy(s.full_sigma(), e);
}

std::size_t rank_for_tolerance(const std::vector<double>& spectrum, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("rank_for_tolerance: eps must be positive");
  if (spectrum.empty()) throw RankError("rank_for_tolerance: empty spectrum");
  const std::size_t r = spectrum.size();
  // tail[k] = sum_{i > k} sigma_i^2, accumulated from the small end
  std::vector<double> tail(r + 1, 0.0);
  for (std::size_t k = r; k-- > 0;) tail[k] = tail[k + 1] + spectrum[k] * spectrum[k];
  const double bound = eps * std::sqrt(tail[0]);
  for (std::size_t k = 1; k <= r; ++k) {
    if (std::sqrt(tail[k]) <= bound) return k;
  }
  return r;
}

std::size_t rank_for_tolerance(const TruncatedSvd& s, double eps) {
  return rank_for_tolerance(s.full_sigma(), eps);
}

double compression_ratio(std::size_t m, std::size_t n, std::size_t k) {
  if (m == 0 || n == 0) throw std::invalid_argument("compression_ratio: dimensions must be positive");
  return static_cast<double>(m + n + 1) * static_cast<double>(k) /
         (static_cast<double>(m) * static_cast<double>(n));
}

std::size_t rank_for_compression(std::size_t m, std::size_t n, double ratio) {
  if (m == 0 || n == 0) throw std::invalid_argument("rank_for_compression: dimensions must be positive");
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("rank_for_compression: ratio must be in (0, 1]");
  }
  const double k_hat = static_cast<double>(m) * static_cast<double>(n) * ratio /
                       static_cast<double>(m + n + 1);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(k_hat)));
}

double total_accuracy(const Matrix& per_head_accuracy) {
  double total = 1.0;
  for (std::size_t layer = 0; layer < per_head_accuracy.rows(); ++layer) {
    auto heads = per_head_accuracy.row(layer);
    if (heads.empty()) throw DimensionError("total_accuracy: no heads");
    double sum = 0.0;
    for (double e : heads) {
      if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("total_accuracy: entries must be in [0, 1]");
      sum += e;
    }
    total *= sum / static_cast<double>(heads.size());
  }
  return total;
}

LowRankFactors randomized_svd(const Matrix& w, std::size_t rank, std::size_t oversample,
                              std::size_t power_iterations, std::uint64_t seed, OpCounter* ops) {
  if (w.empty()) throw DimensionError("randomized_svd: empty matrix");
  require_finite(w, "randomized_svd");
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const std::size_t r = std::min(m, n);
  if (rank < 1 || rank > r) throw RankError("randomized_svd: rank out of range");
  const std::size_t width = std::min(rank + oversample, r);

  std::uint64_t flops = 0;
  Rng rng(seed);
  const Matrix omega = rng.normal_matrix(n, width, 1.0);
  const Matrix w_t = transpose(w);

  auto orthonormal = [&](const Matrix& y) {
    auto cols = to_columns(y);
    orthonormalize(cols);
    flops += 4 * y.rows() * y.cols() * y.cols();
    return from_columns(cols, y.rows());
  };

  Matrix basis = orthonormal(matmul(w, omega));
  flops += 2 * m * n * width;
  for (std::size_t it = 0; it < power_iterations; ++it) {
    const Matrix z = orthonormal(matmul(w_t, basis));
    basis = orthonormal(matmul(w, z));
    flops += 4 * m * n * width;
  }

  const Matrix projected = matmul(transpose(basis), w);  // width x n
  flops += 2 * m * n * width;
  OpCounter inner;
  const TruncatedSvd small = svd(projected, &inner);
  flops += inner.flops;
  const Matrix u = matmul(basis, small.u_k());
  flops += 2 * m * width * small.k();
  if (ops) ops->flops += flops;

  return LowRankFactors{column_slice(u, 0, rank),
                        std::vector<double>(small.sigma_k().begin(), small.sigma_k().begin() + rank),
                        row_slice(small.v_t_k(), 0, rank)};
}

std::vector<double> synthetic_spectrum(SpectrumFamily family, std::size_t r) {
  std::vector<double> sigma(r);
  for (std::size_t i = 1; i <= r; ++i) {
    const double x = static_cast<double>(i);
    sigma[i - 1] = family == SpectrumFamily::geometric ? std::pow(0.8, x) : std::pow(x, -1.5);
  }
  return sigma;
}

Matrix random_orthonormal(std::size_t m, std::size_t k, Rng& rng) {
  if (k > m) throw DimensionError("random_orthonormal: need m >= k");
  auto cols = to_columns(rng.normal_matrix(m, k, 1.0));
  orthonormalize(cols);
  return from_columns(cols, m);
}

Matrix matrix_with_spectrum(std::size_t m, std::size_t n, const std::vector<double>& spectrum,
                            Rng& rng) {
  const std::size_t r = spectrum.size();
  if (r > std::min(m, n)) throw DimensionError("matrix_with_spectrum: spectrum longer than min(m, n)");
  const Matrix u = random_orthonormal(m, r, rng);
  const Matrix v = random_orthonormal(n, r, rng);
  return reconstruct(LowRankFactors{u, spectrum, transpose(v)});
}

}  // namespace efedsim::svd
