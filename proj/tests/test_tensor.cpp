#include <doctest.h>

#include <cmath>
#include <limits>

#include "efedsim/svdkit.hpp"
#include "efedsim/tensor.hpp"

using namespace efedsim;

TEST_CASE("matmul examples") {
  Rng rng(1);
  const Matrix b = rng.normal_matrix(3, 3, 1.0);
  CHECK(matmul(Matrix::identity(3), b) == b);

  const Matrix a{{1, 2}, {3, 4}};
  const Matrix col{{0}, {1}};
  CHECK(matmul(a, col) == Matrix{{2}, {4}});

  const Matrix x(2, 3), y(2, 3);
  CHECK_THROWS_AS(matmul(x, y), DimensionError);
  try {
    matmul(x, y);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with a naive triple loop") {
  Rng rng(7);
  const Matrix a = rng.normal_matrix(5, 7, 1.0);
  const Matrix b = rng.normal_matrix(7, 4, 1.0);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 7; ++p) s += a(i, p) * b(p, j);
      CHECK(c(i, j) == s);
    }
}

TEST_CASE("matmul is associative to 1e-9 relative") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6), p = 1 + rng.below(6), q = 1 + rng.below(6);
    const Matrix a = rng.normal_matrix(m, n, 1.0);
    const Matrix b = rng.normal_matrix(n, p, 1.0);
    const Matrix c = rng.normal_matrix(p, q, 1.0);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(1.0, frobenius_norm(left)));
  }
}

TEST_CASE("softmax examples") {
  const Matrix u = softmax_rows(Matrix{{0, 0, 0}});
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const Matrix big = softmax_rows(Matrix{{1000, 1000.5}});
  CHECK(big.all_finite());
  CHECK(big(0, 0) + big(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  const Matrix q = softmax_rows(Matrix{{0, std::log(3.0)}});
  CHECK(std::abs(q(0, 0) - 0.25) < 1e-15);
  CHECK(std::abs(q(0, 1) - 0.75) < 1e-15);

  CHECK_THROWS_AS(softmax_rows(Matrix{{0, std::numeric_limits<double>::quiet_NaN()}}), NonFiniteError);
  CHECK_THROWS_AS(softmax_rows(Matrix{{0, std::numeric_limits<double>::infinity()}}), NonFiniteError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix z = rng.normal_matrix(3, 1 + rng.below(20), 5.0);
    const double c = rng.uniform(-50, 50);
    Matrix shifted = z;
    for (double& v : shifted.data()) v -= c;
    const Matrix p = softmax_rows(z);
    const Matrix ps = softmax_rows(shifted);
    CHECK(max_abs_diff(p, ps) <= 1e-12);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        CHECK(v > 0.0);
        CHECK(v < 1.0 + 1e-15);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Matrix(4, 4)) == 0.0);
  CHECK(frobenius_norm(Matrix{{3, 4}}) == 5.0);

  Rng rng(5);
  const Matrix m = rng.normal_matrix(5, 5, 1.0);
  double s2 = 0.0;
  const auto decomposition = svd::svd(m);
  for (double s : decomposition.full_sigma()) s2 += s * s;
  CHECK(std::abs(frobenius_norm(m) - std::sqrt(s2)) <= 1e-9);
}

TEST_CASE("frobenius norm is invariant under orthogonal transforms") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = svd::svd(rng.normal_matrix(6, 6, 1.0)).u_k();
    const Matrix m = rng.normal_matrix(6, 4, 1.0);
    CHECK(std::abs(frobenius_norm(matmul(q, m)) - frobenius_norm(m)) <= 1e-9);
  }
}

TEST_CASE("matrix construction rejects bad data") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), DimensionError);
  const Matrix m(0, 5);
  CHECK(m.rows() == 0);
  CHECK(m.empty());
}

TEST_CASE("max_abs_diff reports NaN instead of hiding it") {
  const Matrix a{{1, 2}};
  const Matrix b{{1, std::numeric_limits<double>::quiet_NaN()}};
  CHECK(std::isnan(max_abs_diff(a, b)));
  CHECK(max_abs_diff(a, Matrix{{1, 2.5}}) == 0.5);
}

TEST_CASE("slicing and concatenation") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(column_slice(m, 1, 2) == Matrix{{2, 3}, {5, 6}});
  CHECK(row_slice(m, 1, 1) == Matrix{{4, 5, 6}});
  const Matrix parts[] = {column_slice(m, 0, 1), column_slice(m, 1, 2)};
  CHECK(hconcat(parts) == m);
  CHECK_THROWS_AS(column_slice(m, 2, 2), DimensionError);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  // std::mt19937_64 with the default seed produces this value as its 10000th output.
  std::mt19937_64 reference;
  reference.discard(9999);
  CHECK(reference() == 9981545732273789042ULL);
  Rng c(5489);
  for (int i = 0; i < 9999; ++i) c.next_u64();
  CHECK(c.next_u64() == 9981545732273789042ULL);

  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("normal draws have roughly unit variance") {
  Rng rng(17);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}
