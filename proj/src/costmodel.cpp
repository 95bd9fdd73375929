#include "efedsim/costmodel.hpp"

#include <stdexcept>
#include <string>

#include "efedsim/svdkit.hpp"

namespace efedsim::cost {

namespace {

// Read-counting view of a matrix resident in global memory. The counter is
// owned by the caller's stack frame.
class GlobalOperand {
 public:
  GlobalOperand(const Matrix& m, std::uint64_t& counter) : m_(m), counter_(counter) {}

  double read(std::size_t r, std::size_t c) const {
    ++counter_;
    return m_(r, c);
  }

  /// Block-local copy: every element read exactly once.
  Matrix load() const {
    Matrix local(m_.rows(), m_.cols());
    for (std::size_t r = 0; r < m_.rows(); ++r)
      for (std::size_t c = 0; c < m_.cols(); ++c) local(r, c) = read(r, c);
    return local;
  }

 private:
  const Matrix& m_;
  std::uint64_t& counter_;
};

}  // namespace

std::string_view to_string(AccountingPolicy policy) {
  switch (policy) {
    case AccountingPolicy::transfer_bytes: return "transfer-bytes";
    case AccountingPolicy::multiplication_reads: return "multiplication-reads";
  }
  return "unknown";
}

std::string_view to_string(ReadPolicy policy) {
  return policy == ReadPolicy::centralized ? "centralized" : "hierarchical";
}

void validate(const MatmulShape& s) {
  if (s.m == 0 || s.n == 0 || s.k == 0) throw std::invalid_argument("matmul shape dims must be >= 1");
}

std::uint64_t centralized_reads(const MatmulShape& s) {
  validate(s);
  return (s.n + s.n) * s.m * s.k;
}

std::uint64_t federated_reads(const MatmulShape& s) {
  validate(s);
  return s.m * s.n + s.n * s.k;
}

double reduction(const MatmulShape& s) {
  return 1.0 - static_cast<double>(federated_reads(s)) / static_cast<double>(centralized_reads(s));
}

double reduction_closed_form(const MatmulShape& s) {
  validate(s);
  return 1.0 - 1.0 / (2.0 * static_cast<double>(s.k)) - 1.0 / (2.0 * static_cast<double>(s.m));
}

AccessReport analytic_report(const MatmulShape& s) {
  return {centralized_reads(s), federated_reads(s), reduction(s), ReportSource::analytic};
}

CountedProduct counted_matmul(const Matrix& a, const Matrix& b, ReadPolicy policy) {
  if (a.cols() != b.rows()) {
    throw DimensionError("counted_matmul: cannot multiply " + a.shape_string() + " by " +
                         b.shape_string());
  }
  std::uint64_t reads = 0;
  GlobalOperand ga(a, reads);
  GlobalOperand gb(b, reads);
  Matrix c(a.rows(), b.cols());

  if (policy == ReadPolicy::centralized) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < b.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t p = 0; p < a.cols(); ++p) sum += ga.read(i, p) * gb.read(p, j);
        c(i, j) = sum;
      }
    }
  } else {
    const Matrix la = ga.load();
    const Matrix lb = gb.load();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < b.cols(); ++j) {
        double sum = 0.0;
        for (std::size_t p = 0; p < a.cols(); ++p) sum += la(i, p) * lb(p, j);
        c(i, j) = sum;
      }
    }
  }
  return {std::move(c), reads};
}

CountedProduct counted_add(const Matrix& a, const Matrix& b, ReadPolicy policy) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("counted_add: shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
  std::uint64_t reads = 0;
  GlobalOperand ga(a, reads);
  GlobalOperand gb(b, reads);
  Matrix c(a.rows(), a.cols());
  if (policy == ReadPolicy::centralized) {
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = ga.read(i, j) + gb.read(i, j);
  } else {
    const Matrix la = ga.load();
    const Matrix lb = gb.load();
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = la(i, j) + lb(i, j);
  }
  return {std::move(c), reads};
}

std::vector<ReadCountRow> read_count_table(const std::vector<std::uint64_t>& dims) {
  std::vector<ReadCountRow> rows;
  rows.reserve(dims.size());
  for (auto d : dims) rows.push_back({d, analytic_report({d, d, d})});
  return rows;
}

std::uint64_t compressed_access(std::uint64_t m, std::uint64_t n, std::uint64_t t,
                                std::uint64_t k_hat, bool hierarchy, bool compressed) {
  if (m == 0 || n == 0 || t == 0) throw std::invalid_argument("compressed_access: dims must be >= 1");
  if (compressed && k_hat == 0) throw std::invalid_argument("compressed_access: k_hat must be >= 1");
  if (!hierarchy) return compressed ? 2 * (m + n) * k_hat * t : 2 * m * n * t;
  return compressed ? m * k_hat + k_hat + n * k_hat + n * t : m * n + n * t;
}

std::uint64_t weight_storage(std::uint64_t m, std::uint64_t n, std::uint64_t k_hat,
                             bool compressed) {
  return compressed ? (m + n + 1) * k_hat : m * n;
}

BandwidthReport bandwidth_reduce_rate(std::uint64_t m, std::uint64_t n, std::uint64_t t,
                                      std::uint64_t batch, double ratio,
                                      AccountingPolicy policy) {
  if (batch == 0) throw std::invalid_argument("bandwidth_reduce_rate: batch must be >= 1");
  const std::uint64_t k_hat = svd::rank_for_compression(m, n, ratio);
  const std::uint64_t input_read = n * t;
  const std::uint64_t output_write = m * t;

  BandwidthReport report;
  report.compression_ratio = ratio;
  report.k_hat = k_hat;
  report.accounting_policy = policy;
  switch (policy) {
    case AccountingPolicy::transfer_bytes:
      report.original_access = weight_storage(m, n, k_hat, false) + batch * (input_read + output_write);
      report.optimized_access = weight_storage(m, n, k_hat, true) + batch * (input_read + output_write);
      break;
    case AccountingPolicy::multiplication_reads:
      report.original_access = batch * (compressed_access(m, n, t, k_hat, true, false) + output_write);
      report.optimized_access = batch * (compressed_access(m, n, t, k_hat, true, true) + output_write);
      break;
  }
  report.reduce_rate = 1.0 - static_cast<double>(report.optimized_access) /
                                 static_cast<double>(report.original_access);
  return report;
}

std::uint64_t matrix_chain_reads(const std::vector<ChainOperand>& chain, bool hierarchy) {
  if (chain.size() < 2) throw std::invalid_argument("matrix_chain_reads: need at least two operands");
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto& op = chain[i];
    if (op.rows == 0 || op.cols == 0) throw std::invalid_argument("matrix_chain_reads: empty operand");
    if (op.diagonal && op.rows != op.cols) {
      throw std::invalid_argument("matrix_chain_reads: diagonal operand must be square");
    }
    if (i > 0 && chain[i - 1].cols != op.rows) {
      throw DimensionError("matrix_chain_reads: operand " + std::to_string(i) + " has " +
                           std::to_string(op.rows) + " rows, expected " +
                           std::to_string(chain[i - 1].cols));
    }
  }
  std::uint64_t reads = 0;
  if (hierarchy) {
    for (const auto& op : chain) reads += op.diagonal ? op.rows : op.rows * op.cols;
    return reads;
  }
  // Left-to-right: the running product is m x n, multiplied by n x k.
  const std::uint64_t m = chain.front().rows;
  for (std::size_t i = 1; i < chain.size(); ++i) {
    reads += centralized_reads({m, chain[i].rows, chain[i].cols});
  }
  return reads;
}

}  // namespace efedsim::cost
