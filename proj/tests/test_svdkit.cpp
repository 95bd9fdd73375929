#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "efedsim/svdkit.hpp"

using namespace efedsim;
using efedsim::svd::svd;
using namespace efedsim::svd;

namespace {

Matrix diag3() { return Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 1}}; }

double sum_sq(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += v[i] * v[i];
  return s;
}

}  // namespace

TEST_CASE("svd of a diagonal matrix") {
  const auto s = svd::svd(diag3());
  REQUIRE(s.full_sigma().size() == 3);
  CHECK(std::abs(s.full_sigma()[0] - 3) < 1e-14);
  CHECK(std::abs(s.full_sigma()[1] - 2) < 1e-14);
  CHECK(std::abs(s.full_sigma()[2] - 1) < 1e-14);
  CHECK(s.k() == 3);
  CHECK(s.r() == 3);
}

TEST_CASE("svd of a rank-one outer product") {
  const Matrix u{{1}, {2}, {3}, {4}};
  const Matrix v{{0.5, -1, 2}};
  const auto s = svd::svd(matmul(u, v));
  for (std::size_t i = 1; i < s.r(); ++i) CHECK(s.full_sigma()[i] < 1e-10);
  CHECK(numerical_rank(s.full_sigma()) == 1);
  CHECK(max_abs_diff(reconstruct(s), matmul(u, v)) < 1e-12);
}

TEST_CASE("svd against an independent symmetric eigensolver") {
  Rng rng(21);
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{8, 5}, {5, 8}, {12, 12}, {1, 6}, {6, 1}}) {
    const Matrix w = rng.normal_matrix(m, n, 1.0);
    const auto s = svd::svd(w);
    CHECK(max_abs_diff(reconstruct(s), w) < 1e-9);

    Eigen::MatrixXd e(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) e(i, j) = w(i, j);
    const Eigen::MatrixXd gram = m >= n ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    std::vector<double> eig(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
    std::sort(eig.rbegin(), eig.rend());
    REQUIRE(eig.size() == s.r());
    for (std::size_t i = 0; i < eig.size(); ++i) {
      CHECK(std::abs(s.full_sigma()[i] * s.full_sigma()[i] - std::max(0.0, eig[i])) < 1e-8);
    }
  }
}

TEST_CASE("svd factors are orthonormal and sorted") {
  Rng rng(4);
  const Matrix w = rng.normal_matrix(10, 7, 1.0);
  const auto s = svd::svd(w);
  const Matrix utu = matmul(transpose(s.u_k()), s.u_k());
  const Matrix vvt = matmul(s.v_t_k(), transpose(s.v_t_k()));
  CHECK(max_abs_diff(utu, Matrix::identity(7)) < 1e-12);
  CHECK(max_abs_diff(vvt, Matrix::identity(7)) < 1e-12);
  CHECK(std::is_sorted(s.full_sigma().rbegin(), s.full_sigma().rend()));
}

TEST_CASE("svd completes the basis for rank-deficient input") {
  Matrix w(6, 4);
  w(0, 0) = 2.0;
  w(1, 1) = 1.0;
  const auto s = svd::svd(w);
  CHECK(max_abs_diff(matmul(transpose(s.u_k()), s.u_k()), Matrix::identity(4)) < 1e-12);
  CHECK(max_abs_diff(reconstruct(s), w) < 1e-14);

  const auto z = svd::svd(Matrix(3, 3));
  for (double v : z.full_sigma()) CHECK(v == 0.0);
  CHECK(energy_ratio(z, 1) == 1.0);
  CHECK(rank_for_energy(z, 0.9) == 1);
}

TEST_CASE("svd rejects non-finite or empty input") {
  CHECK_THROWS_AS(svd::svd(Matrix{{1, NAN}}), NonFiniteError);
  CHECK_THROWS(svd::svd(Matrix(0, 3)));
}

TEST_CASE("truncate and reconstruct") {
  const auto s = svd::svd(diag3());
  CHECK(truncate(s, 3).sigma_k() == s.sigma_k());
  const auto t1 = truncate(s, 1);
  REQUIRE(t1.sigma_k().size() == 1);
  CHECK(std::abs(t1.sigma_k()[0] - 3) < 1e-14);
  CHECK(t1.full_sigma() == s.full_sigma());
  CHECK(max_abs_diff(reconstruct(truncate(s, 2)), Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 0}}) < 1e-14);
  CHECK_THROWS_AS(truncate(s, 0), RankError);
  CHECK_THROWS_AS(truncate(s, 4), RankError);
}

TEST_CASE("Eckart-Young identity over random matrices and every k") {
  Rng rng(1234);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.below(16), n = 1 + rng.below(16);
    const Matrix w = rng.normal_matrix(m, n, 1.0);
    const auto s = svd::svd(w);
    double prev = 0.0;
    for (std::size_t k = 1; k <= s.r(); ++k) {
      const double err = frobenius_norm(subtract(w, reconstruct(truncate(s, k))));
      const double discarded = sum_sq(s.full_sigma(), k, s.r());
      CHECK(std::abs(err * err - discarded) <= 1e-8 * std::max(1.0, sum_sq(s.full_sigma(), 0, s.r())));
      const double e = energy_ratio(s, k);
      CHECK(e >= prev);
      prev = e;
    }
    CHECK(energy_ratio(s, s.r()) == 1.0);
  }
}

TEST_CASE("energy ratio examples") {
  CHECK(energy_ratio(std::vector<double>{3, 2, 1}, 1) == doctest::Approx(9.0 / 14).epsilon(1e-15));
  CHECK(energy_ratio(std::vector<double>{1, 1, 1, 1}, 2) == 0.5);
  CHECK(energy_ratio(std::vector<double>{3, 2, 1}, 3) == 1.0);
  CHECK_THROWS(energy_ratio(std::vector<double>{3, 2, 1}, 0));
  CHECK_THROWS(energy_ratio(std::vector<double>{3, 2, 1}, 4));
}

TEST_CASE("rank for energy") {
  const std::vector<double> s{3, 2, 1};
  CHECK(rank_for_energy(s, 0.9) == 2);
  CHECK(rank_for_energy(s, 1e-12) == 1);
  CHECK(rank_for_energy(s, 1.0) == 3);
  CHECK(rank_for_energy(std::vector<double>{5, 1, 1e-14}, 1.0) == 2);

  // scan oracle over random spectra
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> sp(1 + rng.below(12));
    for (double& v : sp) v = rng.uniform(0.01, 10.0);
    std::sort(sp.rbegin(), sp.rend());
    const double e = rng.uniform(0.01, 1.0);
    const double total = sum_sq(sp, 0, sp.size());
    std::size_t expect = sp.size();
    for (std::size_t k = 1; k <= sp.size(); ++k) {
      if (sum_sq(sp, 0, k) >= e * total) {
        expect = k;
        break;
      }
    }
    CHECK(rank_for_energy(sp, e) == expect);
    CHECK(energy_ratio(sp, expect) >= e - 1e-15);
  }
}

TEST_CASE("rank for tolerance") {
  const std::vector<double> s{3, 2, 1};
  CHECK(rank_for_tolerance(s, 0.7) == 1);
  CHECK(rank_for_tolerance(s, 0.3) == 2);
  CHECK(rank_for_tolerance(s, 0.2) == 3);
  CHECK(rank_for_tolerance(s, 1e-16) == 3);
  CHECK(rank_for_tolerance(std::vector<double>{4, 0, 0}, 1e-12) == 1);

  Rng rng(12);
  const Matrix w = rng.normal_matrix(9, 6, 1.0);
  const auto sv = svd::svd(w);
  for (double eps : {0.9, 0.5, 0.2, 0.05}) {
    const std::size_t k = rank_for_tolerance(sv, eps);
    CHECK(frobenius_norm(subtract(w, reconstruct(truncate(sv, k)))) <= eps * frobenius_norm(w) + 1e-12);
    if (k > 1) {
      CHECK(frobenius_norm(subtract(w, reconstruct(truncate(sv, k - 1)))) > eps * frobenius_norm(w));
    }
  }
}

TEST_CASE("rank for tolerance grows linearly in |log eps| on a geometric spectrum") {
  const double q = 0.8;
  const auto spectrum = synthetic_spectrum(SpectrumFamily::geometric, 200);
  std::vector<double> x, y;
  for (int p = 1; p <= 12; ++p) {
    const double eps = std::pow(10.0, -p);
    x.push_back(std::abs(std::log(eps)));
    y.push_back(static_cast<double>(rank_for_tolerance(spectrum, eps)));
  }
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  // tail energy ~ q^(2k), so k ~ |log eps| / |log q|
  CHECK(slope > 0.0);
  CHECK(std::abs(slope - 1.0 / std::abs(std::log(q))) < 0.05 / std::abs(std::log(q)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - (slope * x[i] + intercept)) <= 1.0);
}

TEST_CASE("compression ratio") {
  CHECK(std::abs(compression_ratio(768, 2304, 307) - 0.5332) <= 5e-4);
  CHECK(compression_ratio(768, 2304, 0) == 0.0);
  CHECK(compression_ratio(10, 10, 10) == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(compression_ratio(10, 10, 10) > 1.0);
}

TEST_CASE("rank for compression") {
  CHECK(rank_for_compression(3072, 768, 0.7) == 429);
  CHECK(rank_for_compression(64, 48, 0.5) == 13);
  CHECK(rank_for_compression(100, 100, 1e-6) == 1);
  CHECK_THROWS(rank_for_compression(10, 10, 0.0));
  CHECK_THROWS(rank_for_compression(10, 10, 1.5));

  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 2 + rng.below(300), n = 2 + rng.below(300);
    const double rho = rng.uniform(0.01, 1.0);
    const std::size_t k = rank_for_compression(m, n, rho);
    if (static_cast<double>(m * n) * rho >= static_cast<double>(m + n + 1)) {
      CHECK(compression_ratio(m, n, k) <= rho);
    } else {
      CHECK(k == 1);
    }
  }
}

TEST_CASE("total accuracy") {
  CHECK(total_accuracy(Matrix(3, 4, 1.0)) == 1.0);
  CHECK(total_accuracy(Matrix{{0.9, 0.9}, {0.8, 1.0}}) == doctest::Approx(0.81).epsilon(1e-15));
  CHECK(total_accuracy(Matrix{{1.0}, {0.0}}) == 0.0);
  CHECK_THROWS(total_accuracy(Matrix{{1.2}}));
}

TEST_CASE("keeping 40 percent of a decaying spectrum keeps 90 percent of the energy") {
  for (auto family : {SpectrumFamily::geometric, SpectrumFamily::power_law}) {
    for (std::size_t r = 16; r <= 256; ++r) {
      const auto sp = synthetic_spectrum(family, r);
      const auto k = static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(r)));
      CHECK(energy_ratio(sp, k) >= 0.90);
    }
  }
  // and on actual matrices carrying those spectra
  Rng rng(31);
  for (auto family : {SpectrumFamily::geometric, SpectrumFamily::power_law}) {
    const Matrix w = matrix_with_spectrum(40, 30, synthetic_spectrum(family, 30), rng);
    const auto s = svd::svd(w);
    CHECK(energy_ratio(s, 12) >= 0.90);
  }
}

TEST_CASE("the 40 percent rule needs enough singular values on the geometric family") {
  // 0.8^i keeps only (1 - 0.64^2) / (1 - 0.64^5) of its energy in the top 2 of 5
  const auto sp = synthetic_spectrum(SpectrumFamily::geometric, 5);
  CHECK(energy_ratio(sp, 2) == doctest::Approx((1 - std::pow(0.64, 2)) / (1 - std::pow(0.64, 5))));
  CHECK(energy_ratio(sp, 2) < 0.90);
}

TEST_CASE("randomized svd matches the exact spectrum") {
  Rng rng(77);
  const Matrix w = matrix_with_spectrum(120, 80, synthetic_spectrum(SpectrumFamily::geometric, 80), rng);
  OpCounter exact_ops, fast_ops;
  const auto exact = svd::svd(w, &exact_ops);
  const auto fast = randomized_svd(w, 10, 10, 3, 5, &fast_ops);
  REQUIRE(fast.rank() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(fast.sigma[i] - exact.full_sigma()[i]) < 1e-6);
  CHECK(max_abs_diff(reconstruct(fast), reconstruct(truncate(exact, 10))) < 1e-6);
  CHECK(fast_ops.flops > 0);
  CHECK(fast_ops.flops < exact_ops.flops);
}

TEST_CASE("synthetic spectra") {
  const auto g = synthetic_spectrum(SpectrumFamily::geometric, 3);
  CHECK(g == std::vector<double>{0.8, 0.8 * 0.8, 0.8 * 0.8 * 0.8});
  const auto p = synthetic_spectrum(SpectrumFamily::power_law, 2);
  CHECK(p[0] == 1.0);
  CHECK(std::abs(p[1] - std::pow(2.0, -1.5)) < 1e-16);

  Rng rng(2);
  const Matrix q = random_orthonormal(7, 3, rng);
  CHECK(max_abs_diff(matmul(transpose(q), q), Matrix::identity(3)) < 1e-13);
  const auto sp = synthetic_spectrum(SpectrumFamily::power_law, 5);
  const auto s = svd::svd(matrix_with_spectrum(9, 5, sp, rng));
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(s.full_sigma()[i] - sp[i]) < 1e-12);
}
