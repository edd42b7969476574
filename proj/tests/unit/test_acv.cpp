#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>
#include <random>

#include "mfeig/acv.hpp"
#include "mfeig/rng.hpp"

using namespace mfeig;

namespace {

// Random correlation-like SPD matrix with unit-ish diagonal.
Eigen::MatrixXd random_spd(int n, std::mt19937_64& gen) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd B(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) B(r, c) = N(gen);
  Eigen::MatrixXd S = B * B.transpose();
  S.diagonal().array() += 0.25;
  return S;
}

AllocationMatrix make_allocation(const std::vector<index_t>& sizes, const std::vector<bool>& z0,
                                 const std::vector<std::vector<std::uint8_t>>& zstar,
                                 const std::vector<std::vector<std::uint8_t>>& z) {
  AllocationMatrix A;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    AllocationMatrix::Group grp;
    grp.size = sizes[g];
    grp.in_z0 = z0[g];
    grp.in_zstar = zstar[g];
    grp.in_z = z[g];
    A.groups.push_back(std::move(grp));
  }
  return A;
}

// Random structurally valid allocation over M low-fidelity models.
AllocationMatrix random_allocation(int M, std::mt19937_64& gen) {
  std::uniform_int_distribution<index_t> size_dist(2, 12);
  std::uniform_int_distribution<int> coin(0, 1);
  for (;;) {
    const int G = 2 + static_cast<int>(gen() % 3);
    std::vector<index_t> sizes;
    std::vector<bool> z0;
    std::vector<std::vector<std::uint8_t>> zs, zz;
    for (int g = 0; g < G; ++g) {
      sizes.push_back(size_dist(gen));
      z0.push_back(coin(gen) == 1);
      std::vector<std::uint8_t> s(static_cast<std::size_t>(M)), z(static_cast<std::size_t>(M));
      for (int m = 0; m < M; ++m) {
        s[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(coin(gen));
        z[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(coin(gen));
      }
      zs.push_back(s);
      zz.push_back(z);
    }
    auto A = make_allocation(sizes, z0, zs, zz);
    try {
      A.validate();
      return A;
    } catch (const ConfigError&) {
      continue;
    }
  }
}

// Monte Carlo replicate of the ACV estimator on jointly Gaussian utilities
// with covariance C (mean mu0 on the high-fidelity model, muL elsewhere).
double simulate_acv(const AllocationMatrix& A, const Eigen::MatrixXd& L, const Eigen::VectorXd& mean,
                    const Eigen::VectorXd& alpha, std::mt19937_64& gen) {
  const int M = A.num_models();
  std::normal_distribution<double> N(0.0, 1.0);
  Matrix sums(static_cast<index_t>(A.groups.size()), M + 1);
  for (std::size_t g = 0; g < A.groups.size(); ++g)
    for (int m = 0; m <= M; ++m) sums(static_cast<index_t>(g), m) = 0.0;
  Eigen::VectorXd zvec(M + 1), u(M + 1);
  for (std::size_t g = 0; g < A.groups.size(); ++g) {
    for (index_t i = 0; i < A.groups[g].size; ++i) {
      for (int m = 0; m <= M; ++m) zvec(m) = N(gen);
      u = mean + L * zvec;
      for (int m = 0; m <= M; ++m)
        if (A.group_used_by(m, static_cast<index_t>(g))) sums(static_cast<index_t>(g), m) += u(m);
    }
  }
  return evaluate_acv_from_sums(sums, alpha, A);
}

}  // namespace

TEST_CASE("component covariances: disjoint sets") {
  // z0 | z*_1 | z_1 all disjoint.
  auto A = make_allocation({10, 20, 40}, {true, false, false}, {{0}, {1}, {0}}, {{0}, {0}, {1}});
  Eigen::MatrixXd C(2, 2);
  C << 2.0, 0.7, 0.7, 1.3;
  const auto cc = component_covariances(C, A);
  CHECK(cc.var_q0 == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(cc.cov_d0(0) == 0.0);
  CHECK(cc.cov_dd(0, 0) == doctest::Approx(1.3 * (1.0 / 20 + 1.0 / 40)).epsilon(1e-14));
}

TEST_CASE("component covariances: z*_1 = z0 full overlap") {
  const index_t N = 16;
  auto A = make_allocation({N, 3 * N}, {true, false}, {{1}, {0}}, {{0}, {1}});
  Eigen::MatrixXd C(2, 2);
  C << 1.5, 0.9, 0.9, 1.1;
  const auto cc = component_covariances(C, A);
  CHECK(cc.cov_d0(0) == doctest::Approx(0.9 / static_cast<double>(N)).epsilon(1e-14));
}

TEST_CASE("component covariances match brute-force simulation") {
  std::mt19937_64 gen(12345);
  const int M = 2;
  const Eigen::MatrixXd C = random_spd(M + 1, gen);
  const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
  auto A = make_allocation({6, 9, 14}, {true, false, false}, {{1, 0}, {0, 1}, {0, 0}}, {{0, 0}, {1, 0}, {1, 1}});
  A.validate();
  const auto cc = component_covariances(C, A);

  const int reps = 1000000;
  std::normal_distribution<double> N01(0.0, 1.0);
  Eigen::VectorXd zvec(M + 1), u(M + 1);
  // Accumulate Delta_m and Qhat_0 moments.
  Eigen::VectorXd sum_d = Eigen::VectorXd::Zero(M), sum_d2 = Eigen::VectorXd::Zero(M);
  Eigen::MatrixXd sum_dd = Eigen::MatrixXd::Zero(M, M);
  double sum_q0 = 0.0, sum_q02 = 0.0;
  Eigen::VectorXd sum_dq = Eigen::VectorXd::Zero(M);
  for (int r = 0; r < reps; ++r) {
    Matrix sums(3, M + 1);
    for (index_t g = 0; g < 3; ++g)
      for (int m = 0; m <= M; ++m) sums(g, m) = 0.0;
    for (index_t g = 0; g < 3; ++g)
      for (index_t i = 0; i < A.groups[static_cast<std::size_t>(g)].size; ++i) {
        for (int m = 0; m <= M; ++m) zvec(m) = N01(gen);
        u = L * zvec;
        for (int m = 0; m <= M; ++m)
          if (A.group_used_by(m, g)) sums(g, m) += u(m);
      }
    auto set_mean = [&](int m, bool star) {
      double acc = 0.0;
      index_t n = 0;
      for (index_t g = 0; g < 3; ++g) {
        const auto& grp = A.groups[static_cast<std::size_t>(g)];
        const bool in = (m == 0) ? grp.in_z0
                                 : (star ? grp.in_zstar[static_cast<std::size_t>(m - 1)] : grp.in_z[static_cast<std::size_t>(m - 1)]);
        if (in) {
          acc += sums(g, m);
          n += grp.size;
        }
      }
      return acc / static_cast<double>(n);
    };
    const double q0 = set_mean(0, false);
    sum_q0 += q0;
    sum_q02 += q0 * q0;
    Eigen::VectorXd d(M);
    for (int m = 1; m <= M; ++m) d(m - 1) = set_mean(m, true) - set_mean(m, false);
    sum_d += d;
    for (int m = 0; m < M; ++m) {
      sum_dq(m) += d(m) * q0;
      for (int n = 0; n < M; ++n) sum_dd(m, n) += d(m) * d(n);
    }
  }
  const double inv = 1.0 / reps;
  const double var_q0 = sum_q02 * inv - (sum_q0 * inv) * (sum_q0 * inv);
  // Standard errors of covariance estimates scale like value/sqrt(reps).
  const double tol = 3.0 / std::sqrt(static_cast<double>(reps));
  CHECK(var_q0 == doctest::Approx(cc.var_q0).epsilon(0.05));
  for (int m = 0; m < M; ++m) {
    const double cov_dq = sum_dq(m) * inv - (sum_d(m) * inv) * (sum_q0 * inv);
    CHECK(std::fabs(cov_dq - cc.cov_d0(m)) < tol * std::sqrt(cc.var_q0 * cc.cov_dd(m, m)) + 1e-9);
    for (int n = 0; n < M; ++n) {
      const double cov_mn = sum_dd(m, n) * inv - (sum_d(m) * inv) * (sum_d(n) * inv);
      CHECK(std::fabs(cov_mn - cc.cov_dd(m, n)) <
            tol * std::sqrt(cc.cov_dd(m, m) * cc.cov_dd(n, n)) + 1e-9);
    }
  }
}

TEST_CASE("optimal weights") {
  SUBCASE("scalar case") {
    Eigen::MatrixXd dd(1, 1);
    dd << 0.4;
    Eigen::VectorXd d0(1);
    d0 << 0.25;
    const auto alpha = optimal_weights(dd, d0);
    CHECK(alpha(0) == doctest::Approx(-0.25 / 0.4).epsilon(1e-14));
  }

  SUBCASE("uncorrelated models give zero weights") {
    std::mt19937_64 gen(3);
    const Eigen::MatrixXd dd = random_spd(3, gen);
    const auto alpha = optimal_weights(dd, Eigen::VectorXd::Zero(3));
    CHECK(alpha.norm() == 0.0);
  }

  SUBCASE("random SPD system solves to tight residual") {
    std::mt19937_64 gen(17);
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::MatrixXd dd = random_spd(3, gen);
      Eigen::VectorXd d0(3);
      for (int i = 0; i < 3; ++i) d0(i) = std::normal_distribution<double>(0.0, 1.0)(gen);
      const auto alpha = optimal_weights(dd, d0);
      CHECK((dd * alpha + d0).norm() <= 1e-10 * d0.norm());
    }
  }

  SUBCASE("exactly duplicated models are regularized by the ridge") {
    Eigen::MatrixXd dd(2, 2);
    dd << 1.0, 1.0, 1.0, 1.0;  // identical deltas
    Eigen::VectorXd d0(2);
    d0 << 0.5, 0.5;
    const auto alpha = optimal_weights(dd, d0);
    CHECK(std::isfinite(alpha(0)));
    CHECK(std::isfinite(alpha(1)));
    // The ridge splits the weight between the duplicates.
    CHECK(alpha(0) == doctest::Approx(alpha(1)).epsilon(1e-9));
    CHECK(alpha(0) + alpha(1) == doctest::Approx(-0.5).epsilon(1e-6));
  }

  SUBCASE("an unsalvageable system is reported singular") {
    Eigen::MatrixXd dd(1, 1);
    dd << -1.0;  // not a covariance; the ridge cannot fix it
    Eigen::VectorXd d0(1);
    d0 << 0.5;
    CHECK_THROWS_AS(static_cast<void>(optimal_weights(dd, d0)), NumericalError);
  }
}

TEST_CASE("estimator variance") {
  SUBCASE("no low-fidelity models reduce to plain MC") {
    auto A = make_allocation({25}, {true}, {std::vector<std::uint8_t>{}}, {std::vector<std::uint8_t>{}});
    Eigen::MatrixXd C(1, 1);
    C << 3.0;
    CHECK(estimator_variance(C, A) == doctest::Approx(3.0 / 25.0).epsilon(1e-14));
  }

  SUBCASE("a correlated model strictly helps") {
    auto A = make_allocation({10, 90}, {true, false}, {{1}, {0}}, {{0}, {1}});
    Eigen::MatrixXd C(2, 2);
    C << 1.0, 0.999, 0.999, 1.0;
    CHECK(estimator_variance(C, A) < 1.0 / 10.0);
  }

  SUBCASE("first-order optimality of alpha*") {
    std::mt19937_64 gen(23);
    std::normal_distribution<double> N01(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
      const int M = 1 + static_cast<int>(gen() % 3);
      const Eigen::MatrixXd C = random_spd(M + 1, gen);
      const auto A = random_allocation(M, gen);
      const auto cc = component_covariances(C, A);
      Eigen::VectorXd alpha;
      try {
        alpha = optimal_weights(cc.cov_dd, cc.cov_d0);
      } catch (const NumericalError&) {
        continue;
      }
      const double v_star = estimator_variance_at(C, A, alpha);
      for (int p = 0; p < 100; ++p) {
        Eigen::VectorXd delta(M);
        for (int m = 0; m < M; ++m) delta(m) = 1e-3 * (N01(gen) > 0 ? 1.0 : -1.0);
        CHECK(estimator_variance_at(C, A, alpha + delta) >= v_star - 1e-12);
      }
    }
  }

  SUBCASE("an uncorrelated extra model changes nothing") {
    Eigen::MatrixXd C2(2, 2);
    C2 << 1.0, 0.8, 0.8, 1.0;
    auto A2 = make_allocation({10, 30}, {true, false}, {{1}, {0}}, {{0}, {1}});
    const double base = estimator_variance(C2, A2);
    Eigen::MatrixXd C3 = Eigen::MatrixXd::Zero(3, 3);
    C3.topLeftCorner(2, 2) = C2;
    C3(2, 2) = 0.6;
    auto A3 = make_allocation({10, 30, 30}, {true, false, false}, {{1, 1}, {0, 0}, {0, 0}},
                              {{0, 0}, {1, 0}, {0, 1}});
    CHECK(estimator_variance(C3, A3) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_acv") {
  // z0 = group0 (2 samples), z*_1 = z0, z_1 = groups 0+1 (4 samples).
  auto A = make_allocation({2, 2}, {true, false}, {{1}, {0}}, {{1}, {1}});

  SUBCASE("alpha = 0 returns the high-fidelity mean") {
    GroupedUValues values(2, std::vector<std::vector<double>>(2));
    values[0][0] = {1.0, 3.0};
    values[0][1] = {10.0, 20.0};
    values[1][1] = {30.0, 40.0};
    Eigen::VectorXd alpha(1);
    alpha << 0.0;
    CHECK(evaluate_acv(values, alpha, A) == doctest::Approx(2.0).epsilon(1e-15));
  }

  SUBCASE("identical z* and z values cancel for any alpha") {
    // Same u_1 values planted in both sets: z*_1 mean = z_1 mean.
    GroupedUValues values(2, std::vector<std::vector<double>>(2));
    values[0][0] = {1.0, 3.0};
    values[0][1] = {7.0, 7.0};
    values[1][1] = {7.0, 7.0};
    Eigen::VectorXd alpha(1);
    alpha << -123.0;
    CHECK(evaluate_acv(values, alpha, A) == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("telescoping cancellation on a 4-sample instance") {
    // u_0 == u_1 on the shared samples, alpha = -1: the estimate collapses
    // to the low-fidelity mean over the larger set.
    GroupedUValues values(2, std::vector<std::vector<double>>(2));
    values[0][0] = {1.0, 2.0};
    values[0][1] = {1.0, 2.0};
    values[1][1] = {5.0, 9.0};
    Eigen::VectorXd alpha(1);
    alpha << -1.0;
    CHECK(evaluate_acv(values, alpha, A) == doctest::Approx((1.0 + 2.0 + 5.0 + 9.0) / 4.0).epsilon(1e-14));
  }

  SUBCASE("missing group evaluations are an error") {
    GroupedUValues values(2, std::vector<std::vector<double>>(2));
    values[0][0] = {1.0, 3.0};
    values[0][1] = {10.0, 20.0};
    values[1][1] = {30.0};  // one short
    Eigen::VectorXd alpha(1);
    alpha << -1.0;
    CHECK_THROWS_AS(static_cast<void>(evaluate_acv(values, alpha, A)), NumericalError);
  }
}

TEST_CASE("estimator is unbiased for any fixed (alpha, allocation)") {
  std::mt19937_64 gen(777);
  std::normal_distribution<double> N01(0.0, 1.0);
  const double mu0 = 1.7;
  for (int rep = 0; rep < 5; ++rep) {
    const int M = 1 + static_cast<int>(gen() % 2);
    const Eigen::MatrixXd C = random_spd(M + 1, gen);
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
    const auto A = random_allocation(M, gen);
    Eigen::VectorXd alpha(M), mean(M + 1);
    for (int m = 0; m < M; ++m) alpha(m) = N01(gen);
    mean(0) = mu0;
    for (int m = 1; m <= M; ++m) mean(m) = N01(gen);

    const int reps = 1000;
    double acc = 0.0, acc2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double est = simulate_acv(A, L, mean, alpha, gen);
      acc += est;
      acc2 += est * est;
    }
    const double m_hat = acc / reps;
    const double se = std::sqrt((acc2 / reps - m_hat * m_hat) / reps);
    CHECK(std::fabs(m_hat - mu0) <= 4.0 * se + 1e-12);
  }
}

TEST_CASE("projected variance matches simulated variance within 10%") {
  std::mt19937_64 gen(424242);
  for (int rep = 0; rep < 5; ++rep) {
    const int M = 1 + static_cast<int>(gen() % 2);
    const Eigen::MatrixXd C = random_spd(M + 1, gen);
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
    const auto A = random_allocation(M, gen);
    const auto cc = component_covariances(C, A);
    Eigen::VectorXd alpha;
    try {
      alpha = optimal_weights(cc.cov_dd, cc.cov_d0);
    } catch (const NumericalError&) {
      continue;
    }
    const double projected = estimator_variance_at(C, A, alpha);
    const int reps = 10000;
    double acc = 0.0, acc2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double est = simulate_acv(A, L, Eigen::VectorXd::Zero(M + 1), alpha, gen);
      acc += est;
      acc2 += est * est;
    }
    const double empirical = (acc2 - acc * acc / reps) / (reps - 1);
    CHECK(empirical == doctest::Approx(projected).epsilon(0.10));
  }
}

TEST_CASE("special-case allocations") {
  SUBCASE("MFMC nesting, M = 1, N = (10, 100)") {
    const index_t sizes[] = {10, 100};
    const auto A = mfmc_allocation(sizes);
    REQUIRE(A.groups.size() == 2);
    CHECK(A.groups[0].size == 10);
    CHECK(A.groups[0].in_z0);
    CHECK(A.groups[0].in_zstar[0] == 1);
    CHECK(A.groups[0].in_z[0] == 1);
    CHECK(A.groups[1].size == 90);
    CHECK(!A.groups[1].in_z0);
    CHECK(A.groups[1].in_zstar[0] == 0);
    CHECK(A.groups[1].in_z[0] == 1);
    A.validate();
    CHECK(A.evaluations(1) == 100);
  }

  SUBCASE("MLMC two-level telescoping sum") {
    const index_t sizes[] = {3, 4};
    const auto [A, alpha] = mlmc_allocation(sizes);
    A.validate();
    CHECK(alpha(0) == -1.0);
    GroupedUValues values(2, std::vector<std::vector<double>>(2));
    values[0][0] = {2.0, 4.0, 6.0};   // u0 on level 0
    values[0][1] = {1.0, 2.0, 3.0};   // u1 on level 0 (z*_1)
    values[1][1] = {8.0, 8.0, 8.0, 8.0};  // u1 on level 1 (z_1)
    const double est = evaluate_acv(values, alpha, A);
    CHECK(est == doctest::Approx(4.0 - 2.0 + 8.0).epsilon(1e-14));
  }

  SUBCASE("MLMC variance matches the telescoping formula") {
    const index_t sizes[] = {5, 20};
    const auto [A, alpha] = mlmc_allocation(sizes);
    Eigen::MatrixXd C(2, 2);
    C << 2.0, 1.6, 1.6, 1.5;
    const double direct = (C(0, 0) - 2.0 * C(0, 1) + C(1, 1)) / 5.0 + C(1, 1) / 20.0;
    CHECK(estimator_variance_at(C, A, alpha) == doctest::Approx(direct).epsilon(1e-13));
  }

  SUBCASE("inconsistent MFMC sizes are rejected") {
    const index_t bad[] = {100, 10};
    CHECK_THROWS_AS(static_cast<void>(mfmc_allocation(bad)), ConfigError);
  }
}
