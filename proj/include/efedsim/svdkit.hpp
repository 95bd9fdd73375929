#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "efedsim/tensor.hpp"

namespace efedsim::svd {

class RankError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// The factors actually shipped over the wire: U_k, sigma_k, V_k^T.
struct LowRankFactors {
  Matrix u;                    // m x k
  std::vector<double> sigma;   // k, descending
  Matrix v_t;                  // k x n

  std::size_t rows() const { return u.rows(); }
  std::size_t cols() const { return v_t.cols(); }
  std::size_t rank() const { return sigma.size(); }
  /// Number of doubles in the triple: m*k + k + k*n.
  std::size_t element_count() const { return u.size() + sigma.size() + v_t.size(); }
};

/// Rank-k slice of a singular value decomposition, plus the full spectrum.
///
/// Instances are immutable. The untruncated decomposition has k == r ==
/// min(m, n); truncate() keeps the first k triplets and the full spectrum so
/// energy ratios can still be computed against the original matrix.
class TruncatedSvd {
 public:
  TruncatedSvd(Matrix u_k, std::vector<double> sigma_k, Matrix v_t_k,
               std::vector<double> full_sigma);

  std::size_t m() const { return u_k_.rows(); }
  std::size_t n() const { return v_t_k_.cols(); }
  std::size_t k() const { return sigma_k_.size(); }
  std::size_t r() const { return full_sigma_.size(); }

  const Matrix& u_k() const { return u_k_; }
  const std::vector<double>& sigma_k() const { return sigma_k_; }
  const Matrix& v_t_k() const { return v_t_k_; }
  const std::vector<double>& full_sigma() const { return full_sigma_; }

  LowRankFactors factors() const { return {u_k_, sigma_k_, v_t_k_}; }

 private:
  Matrix u_k_;
  std::vector<double> sigma_k_;
  Matrix v_t_k_;
  std::vector<double> full_sigma_;
};

/// Flop tally used to compare the exact and sketched backends.
struct OpCounter {
  std::uint64_t flops = 0;
};

/// Exact SVD by one-sided Jacobi rotations. Returns the untruncated triple.
TruncatedSvd svd(const Matrix& w, OpCounter* ops = nullptr);

TruncatedSvd truncate(const TruncatedSvd& s, std::size_t k);
Matrix reconstruct(const TruncatedSvd& s);
Matrix reconstruct(const LowRankFactors& f);

/// Cumulative energy ratio of the top-k singular values. Defined as 1 for
/// the zero matrix.
double energy_ratio(const TruncatedSvd& s, std::size_t k);
double energy_ratio(const std::vector<double>& spectrum, std::size_t k);

/// Count of singular values above 1e-10 * sigma_1.
std::size_t numerical_rank(const std::vector<double>& spectrum);

/// Smallest k whose retained energy reaches fraction e of the energy inside
/// the numerical rank. Returns 1 for the zero matrix.
std::size_t rank_for_energy(const TruncatedSvd& s, double e);
std::size_t rank_for_energy(const std::vector<double>& spectrum, double e);

/// Smallest k with ||W - W_k||_F <= eps * ||W||_F.
std::size_t rank_for_tolerance(const TruncatedSvd& s, double eps);
std::size_t rank_for_tolerance(const std::vector<double>& spectrum, double eps);

/// (m + n + 1) k / (m n): doubles in the triple relative to the dense matrix.
double compression_ratio(std::size_t m, std::size_t n, std::size_t k);

/// floor(m n ratio / (m + n + 1)), clamped to at least 1.
std::size_t rank_for_compression(std::size_t m, std::size_t n, double ratio);

/// Product over layers of the mean per-head accuracy. Rows are layers,
/// columns are heads.
double total_accuracy(const Matrix& per_head_accuracy);

/// Randomized range-finder SVD (Halko-Martinsson-Tropp) of the leading
/// `rank` triplets. Sketch width is rank + oversample, capped at min(m, n).
LowRankFactors randomized_svd(const Matrix& w, std::size_t rank, std::size_t oversample,
                              std::size_t power_iterations, std::uint64_t seed,
                              OpCounter* ops = nullptr);

enum class SpectrumFamily { geometric, power_law };

/// sigma_i = 0.8^i (geometric) or i^-1.5 (power law), i = 1..r.
std::vector<double> synthetic_spectrum(SpectrumFamily family, std::size_t r);

/// Random orthonormal columns (m x k, m >= k) via QR of a Gaussian matrix.
Matrix random_orthonormal(std::size_t m, std::size_t k, Rng& rng);

/// U diag(spectrum) V^T with random orthonormal U (m x r) and V (n x r).
Matrix matrix_with_spectrum(std::size_t m, std::size_t n, const std::vector<double>& spectrum,
                            Rng& rng);

}  // namespace efedsim::svd
