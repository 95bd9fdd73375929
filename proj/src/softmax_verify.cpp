#include "efedsim/softmax_verify.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "efedsim/costmodel.hpp"

namespace efedsim::verify {

std::uint64_t BaseBConfig::max_quantized() const {
  validate();
  std::uint64_t p = 1;
  for (std::uint32_t i = 0; i < digits; ++i) p *= base;
  return p - 1;
}

double BaseBConfig::coverage() const { return static_cast<double>(max_quantized()) * step(); }

double BaseBConfig::step() const { return std::ldexp(1.0, -static_cast<int>(frac_bits)); }

void BaseBConfig::validate() const {
  if (base < 2) throw std::invalid_argument("verify.b must be >= 2");
  if (digits < 1) throw std::invalid_argument("verify.K must be >= 1");
  if (frac_bits > 52) throw std::invalid_argument("verify.f must be <= 52");
  // b^K must stay exactly representable as a double and within 64 bits
  const double bits = static_cast<double>(digits) * std::log2(static_cast<double>(base));
  if (bits > 53.0) throw std::invalid_argument("verify: b^K exceeds 2^53");
}

ExpTables::ExpTables(const BaseBConfig& cfg) {
  cfg.validate();
  const double step = cfg.step();
  double place = 1.0;  // b^k
  for (std::uint32_t k = 0; k < cfg.digits; ++k) {
    std::vector<double> table(cfg.base);
    table[0] = 1.0;
    for (std::uint32_t d = 1; d < cfg.base; ++d) table[d] = std::exp(-static_cast<double>(d) * place * step);
    tables_.push_back(std::move(table));
    place *= cfg.base;
  }
}

ShiftedRow shift_normalize(std::span<const double> z_row) {
  if (z_row.empty()) throw std::invalid_argument("shift_normalize: empty row");
  for (double v : z_row) {
    if (!std::isfinite(v)) throw NonFiniteError("shift_normalize: non-finite logit");
  }
  ShiftedRow out;
  out.z_hat = *std::max_element(z_row.begin(), z_row.end());
  out.z_prime.reserve(z_row.size());
  for (double v : z_row) out.z_prime.push_back(v - out.z_hat);
  return out;
}

std::vector<std::uint64_t> quantize(std::span<const double> z_prime, const BaseBConfig& cfg) {
  const std::uint64_t limit = cfg.max_quantized();
  const double scale = std::ldexp(1.0, static_cast<int>(cfg.frac_bits));
  std::vector<std::uint64_t> q;
  q.reserve(z_prime.size());
  for (double z : z_prime) {
    if (!(z <= 0.0)) throw std::invalid_argument("quantize: shifted logits must be <= 0");
    const double magnitude = -z * scale;
    if (magnitude > static_cast<double>(limit)) {
      throw CoverageError("quantize: shifted logit " + std::to_string(z) + " outside representable range [-" +
                          std::to_string(cfg.coverage()) + ", 0] for b=" + std::to_string(cfg.base) +
                          ", K=" + std::to_string(cfg.digits) + ", f=" + std::to_string(cfg.frac_bits));
    }
    q.push_back(std::min<std::uint64_t>(static_cast<std::uint64_t>(std::llround(magnitude)), limit));
  }
  return q;
}

std::vector<std::uint32_t> digits(std::uint64_t q, const BaseBConfig& cfg) {
  if (q > cfg.max_quantized()) {
    throw CoverageError("digits: " + std::to_string(q) + " needs more than " + std::to_string(cfg.digits) +
                        " base-" + std::to_string(cfg.base) + " digits");
  }
  std::vector<std::uint32_t> out(cfg.digits);
  for (auto& d : out) {
    d = static_cast<std::uint32_t>(q % cfg.base);
    q /= cfg.base;
  }
  return out;
}

double exp_via_tables(std::uint64_t q, const BaseBConfig& cfg, const ExpTables& tables) {
  if (tables.size() != cfg.digits) throw std::invalid_argument("exp_via_tables: tables do not match config");
  const auto z = digits(q, cfg);
  double y = tables.lookup(0, z[0]);
  for (std::size_t k = 1; k < z.size(); ++k) y *= tables.lookup(k, z[k]);
  return y;
}

double error_bound(const BaseBConfig& cfg) { return 2.0 * cfg.step(); }

VerifiedRow verified_softmax_row(std::span<const double> z_row, const BaseBConfig& cfg,
                                 std::size_t n_workers) {
  if (n_workers == 0) throw std::invalid_argument("verified_softmax_row: need at least one worker");
  const ShiftedRow shifted = shift_normalize(z_row);
  const auto q = quantize(shifted.z_prime, cfg);
  const ExpTables tables(cfg);

  const std::size_t n = q.size();
  const std::size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<double> y(n);
  std::vector<double> chunk_sums(n_chunks, 0.0);

  auto work = [&](std::size_t worker) {
    for (std::size_t c = worker; c < n_chunks; c += n_workers) {
      const std::size_t end = std::min(n, (c + 1) * kChunkSize);
      double sum = 0.0;
      for (std::size_t i = c * kChunkSize; i < end; ++i) {
        y[i] = exp_via_tables(q[i], cfg, tables);
        sum += y[i];
      }
      chunk_sums[c] = sum;
    }
  };
  const std::size_t active = std::min(n_workers, n_chunks);
  if (active <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(active);
    for (std::size_t w = 0; w < active; ++w) pool.emplace_back([&, w] { work(w); });
  }

  double total = 0.0;
  for (double s : chunk_sums) total += s;  // >= 1: the max entry maps to exactly 1

  VerifiedRow out;
  out.probabilities.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.probabilities[i] = y[i] / total;

  const Matrix exact = softmax_rows(Matrix::row_vector(z_row));
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(out.probabilities[i] - exact(0, i)));
  out.verdict.max_abs_error = worst;
  out.verdict.bound = error_bound(cfg);
  out.verdict.pass = worst <= out.verdict.bound;
  return out;
}

namespace {

AttentionCheck check_scores(const Matrix& q, const Matrix& k, const Matrix* claimed,
                            const BaseBConfig& cfg, std::size_t n_workers) {
  if (q.cols() != k.cols()) {
    throw DimensionError("verify_attention_scores: query " + q.shape_string() + " and key " +
                         k.shape_string() + " widths differ");
  }
  if (q.cols() == 0) throw DimensionError("verify_attention_scores: zero-width queries");
  AttentionCheck check;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  check.scores = scale(cost::counted_matmul(q, transpose(k), cost::ReadPolicy::hierarchical).product, inv_sqrt_d);
  if (claimed && (claimed->rows() != check.scores.rows() || claimed->cols() != check.scores.cols())) {
    throw DimensionError("verify_attention_scores: claimed probabilities " + claimed->shape_string() +
                         " do not match scores " + check.scores.shape_string());
  }

  check.probabilities = Matrix(check.scores.rows(), check.scores.cols());
  check.overall.bound = error_bound(cfg);
  for (std::size_t r = 0; r < check.scores.rows(); ++r) {
    VerifiedRow row = verified_softmax_row(check.scores.row(r), cfg, n_workers);
    std::copy(row.probabilities.begin(), row.probabilities.end(), check.probabilities.row(r).begin());
    if (claimed) {
      double worst = 0.0;
      for (std::size_t c = 0; c < row.probabilities.size(); ++c) {
        const double d = std::abs((*claimed)(r, c) - row.probabilities[c]);
        if (std::isnan(d)) {
          worst = d;
          break;
        }
        worst = std::max(worst, d);
      }
      row.verdict.max_abs_error = worst;
      row.verdict.pass = worst <= row.verdict.bound;
    }
    if (std::isnan(row.verdict.max_abs_error) || row.verdict.max_abs_error > check.overall.max_abs_error) {
      check.overall.max_abs_error = row.verdict.max_abs_error;
    }
    check.overall.pass = check.overall.pass && row.verdict.pass;
    check.rows.push_back(row.verdict);
  }
  return check;
}

}  // namespace

AttentionCheck verify_attention_scores(const Matrix& q, const Matrix& k, const BaseBConfig& cfg,
                                       std::size_t n_workers) {
  return check_scores(q, k, nullptr, cfg, n_workers);
}

AttentionCheck verify_attention_scores(const Matrix& q, const Matrix& k, const Matrix& claimed,
                                       const BaseBConfig& cfg, std::size_t n_workers) {
  return check_scores(q, k, &claimed, cfg, n_workers);
}

}  // namespace efedsim::verify
