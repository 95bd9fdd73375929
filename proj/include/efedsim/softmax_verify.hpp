#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "efedsim/tensor.hpp"

namespace efedsim::verify {

/// The shifted logit lies outside what K base-b digits at 2^-f resolution
/// can represent.
class CoverageError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct BaseBConfig {
  std::uint32_t base = 16;
  std::uint32_t digits = 4;
  std::uint32_t frac_bits = 8;

  /// b^K - 1, the largest representable quantized magnitude.
  std::uint64_t max_quantized() const;
  /// Representable |z'| in logit units: (b^K - 1) / 2^f.
  double coverage() const;
  double step() const;  // 2^-f
  void validate() const;
};

/// K tables; table k holds exp(-d * b^k / 2^f) for d in [0, b).
class ExpTables {
 public:
  explicit ExpTables(const BaseBConfig& cfg);

  double lookup(std::size_t position, std::uint32_t digit) const { return tables_[position][digit]; }
  const std::vector<double>& table(std::size_t position) const { return tables_[position]; }
  std::size_t size() const { return tables_.size(); }

 private:
  std::vector<std::vector<double>> tables_;
};

struct VerifyVerdict {
  double max_abs_error = 0.0;
  double bound = 0.0;
  bool pass = true;
};

struct ShiftedRow {
  std::vector<double> z_prime;  // z - max(z), all <= 0
  double z_hat = 0.0;           // max(z)
};

ShiftedRow shift_normalize(std::span<const double> z_row);

/// round(-z' * 2^f) for each entry; throws CoverageError past b^K - 1.
std::vector<std::uint64_t> quantize(std::span<const double> z_prime, const BaseBConfig& cfg);

/// Little-endian base-b digits of q, K of them.
std::vector<std::uint32_t> digits(std::uint64_t q, const BaseBConfig& cfg);

/// prod_k tables[k][Z(k)] = exp(-q / 2^f).
double exp_via_tables(std::uint64_t q, const BaseBConfig& cfg, const ExpTables& tables);

/// Error bound for table softmax against the exact softmax: 2 * 2^-f.
/// Quantization moves z' by at most 2^-(f+1); |exp'| <= 1 on z <= 0; the
/// normalization at most doubles the deviation.
double error_bound(const BaseBConfig& cfg);

struct VerifiedRow {
  std::vector<double> probabilities;
  VerifyVerdict verdict;
};

/// Table-based softmax of one row, with the exponentials and partial sums
/// split across `n_workers` workers. Work is cut into fixed-size chunks that
/// workers take round-robin; chunk sums are combined in chunk order, so the
/// result does not depend on the worker count. The verdict compares against
/// softmax_rows.
VerifiedRow verified_softmax_row(std::span<const double> z_row, const BaseBConfig& cfg,
                                 std::size_t n_workers);

/// Elements per work chunk in verified_softmax_row.
inline constexpr std::size_t kChunkSize = 8;

struct AttentionCheck {
  Matrix scores;         // QK^T / sqrt(d), recomputed by the verifier
  Matrix probabilities;  // table softmax of the scores
  std::vector<VerifyVerdict> rows;
  VerifyVerdict overall;
};

/// Recomputes the scores with a counted hierarchical product, runs the table
/// softmax per row, and checks it against the exact softmax.
AttentionCheck verify_attention_scores(const Matrix& q, const Matrix& k, const BaseBConfig& cfg,
                                       std::size_t n_workers);

/// As above, but judges a server's claimed attention probabilities against
/// the verifier's table softmax.
AttentionCheck verify_attention_scores(const Matrix& q, const Matrix& k, const Matrix& claimed,
                                       const BaseBConfig& cfg, std::size_t n_workers);

}  // namespace efedsim::verify
