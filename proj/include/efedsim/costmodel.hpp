#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "efedsim/tensor.hpp"

namespace efedsim::cost {

/// A (m x n) times B (n x k).
struct MatmulShape {
  std::uint64_t m = 1;
  std::uint64_t n = 1;
  std::uint64_t k = 1;
};

enum class ReportSource { analytic, counted };

struct AccessReport {
  std::uint64_t centralized_reads = 0;
  std::uint64_t federated_reads = 0;
  double reduction = 0.0;
  ReportSource source = ReportSource::analytic;
};

/// Global-memory read model for the instrumented kernels.
///  - centralized: every multiply re-reads both operands from global memory.
///  - hierarchical: each global element is read once into block-local storage;
///    reuse from there is free.
enum class ReadPolicy { centralized, hierarchical };

/// What "memory access" means once hierarchy and compression are combined.
///  - transfer_bytes: weights counted as stored elements (mn or (m+n+1)k),
///    read once; input and output counted once per batch element.
///  - multiplication_reads: per batch element, the with-hierarchy read counts
///    of the matrix product plus the output write.
enum class AccountingPolicy { transfer_bytes, multiplication_reads };

std::string_view to_string(AccountingPolicy policy);
std::string_view to_string(ReadPolicy policy);

struct BandwidthReport {
  double compression_ratio = 0.0;
  std::uint64_t k_hat = 0;
  std::uint64_t original_access = 0;
  std::uint64_t optimized_access = 0;
  double reduce_rate = 0.0;
  AccountingPolicy accounting_policy = AccountingPolicy::transfer_bytes;
};

/// Bytes per element for byte-denominated reports (32-bit floats).
inline constexpr std::uint64_t kElementBytes = 4;

void validate(const MatmulShape& s);

/// 2 n m k: each of the m k outputs reads a row of A and a column of B.
std::uint64_t centralized_reads(const MatmulShape& s);
/// m n + n k: both operands read once.
std::uint64_t federated_reads(const MatmulShape& s);
/// 1 - T_f / T_c.
double reduction(const MatmulShape& s);
/// 1 - 1/(2k) - 1/(2m).
double reduction_closed_form(const MatmulShape& s);

AccessReport analytic_report(const MatmulShape& s);

struct CountedProduct {
  Matrix product;
  std::uint64_t reads = 0;
};

/// Executes the product while counting global-memory element reads under
/// `policy`. The product is bit-identical to matmul().
CountedProduct counted_matmul(const Matrix& a, const Matrix& b, ReadPolicy policy);

/// Elementwise sum with read counting; the count is 2 m n under either policy.
CountedProduct counted_add(const Matrix& a, const Matrix& b, ReadPolicy policy);

struct ReadCountRow {
  std::uint64_t dim = 0;
  AccessReport report;
};

/// Square-dimension read comparison; defaults to dims {5, 10, 100, 10000}.
std::vector<ReadCountRow> read_count_table(const std::vector<std::uint64_t>& dims = {5, 10, 100, 10000});

/// Read counts for W X (W: m x n, X: n x t), dense or rank-k_hat factored.
///  original,   no hierarchy: 2 m n t
///  compressed, no hierarchy: 2 (m + n) k_hat t
///  original,   hierarchy:    m n + n t
///  compressed, hierarchy:    m k_hat + k_hat + n k_hat + n t
std::uint64_t compressed_access(std::uint64_t m, std::uint64_t n, std::uint64_t t,
                                std::uint64_t k_hat, bool hierarchy, bool compressed);

/// Stored weight elements: m n dense, (m + n + 1) k_hat factored.
std::uint64_t weight_storage(std::uint64_t m, std::uint64_t n, std::uint64_t k_hat,
                             bool compressed);

/// Bandwidth reduce rate 1 - optimized/original with total access =
/// weight read + input read + output write under `policy`.
BandwidthReport bandwidth_reduce_rate(std::uint64_t m, std::uint64_t n, std::uint64_t t,
                                      std::uint64_t batch, double ratio,
                                      AccountingPolicy policy);

/// One operand of a left-to-right product chain. Diagonal operands store
/// only their `rows` diagonal entries.
struct ChainOperand {
  std::uint64_t rows = 1;
  std::uint64_t cols = 1;
  bool diagonal = false;
};

/// Global reads for evaluating the chain left to right. Centralized sums
/// 2 m n k per pairwise product; hierarchical reads every global operand once
/// and keeps intermediates block-local.
std::uint64_t matrix_chain_reads(const std::vector<ChainOperand>& chain, bool hierarchy);

}  // namespace efedsim::cost
