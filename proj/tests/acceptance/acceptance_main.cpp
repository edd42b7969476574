// Acceptance suite: every release criterion evaluated end to end, one
// PASS/FAIL line each. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "mfeig/benchmark.hpp"
#include "mfeig/io.hpp"
#include "mfeig/parallel.hpp"
#include "mfeig/sweep.hpp"

using namespace mfeig;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s -- %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criteria 1 + 2: benchmark table reproduction and variance ordering.
// ---------------------------------------------------------------------------

struct BenchRun {
  double nmc = 0.0;
  double naive_nr = 0.0, opt_nr = 0.0, naive_r = 0.0, opt_r = 0.0;
};

BenchRun run_all_configs(std::uint64_t seed, int workers) {
  BenchRun out;
  bool first = true;
  for (const bool optimal : {false, true}) {
    for (const bool reuse : {false, true}) {
      bench::Case1Options opt;
      opt.form = NoiseForm::additive;
      opt.optimize_n_in = optimal;
      opt.reuse_inner = reuse;
      opt.seed = seed;
      opt.workers = workers;
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = bench::run_case1(opt);
      double mf_avg = 0.0, base_avg = 0.0;
      for (double v : r.mf.variance) mf_avg += v;
      for (double v : r.baseline.variance) base_avg += v;
      mf_avg /= static_cast<double>(r.mf.variance.size());
      base_avg /= static_cast<double>(r.baseline.variance.size());
      if (first) {
        out.nmc = base_avg;  // identical across the four configurations
        first = false;
      }
      (optimal ? (reuse ? out.opt_r : out.opt_nr) : (reuse ? out.naive_r : out.naive_nr)) = mf_avg;
      std::printf("  [info] seed=%llu %s/%s: mf=%s baseline=%s n_in=[%lld,%lld,%lld] family=%s (%.0fs)\n",
                  static_cast<unsigned long long>(seed), optimal ? "optimal" : "naive",
                  reuse ? "reuse" : "no-reuse", fmt(mf_avg).c_str(), fmt(base_avg).c_str(),
                  static_cast<long long>(r.n_in[0]), static_cast<long long>(r.n_in[1]),
                  static_cast<long long>(r.n_in[2]), family_name(r.design.family), elapsed(t0));
      std::fflush(stdout);
    }
  }
  return out;
}

void criteria_1_and_2(int workers) {
  const std::uint64_t seeds[3] = {7041991, 7041992, 7041993};
  BenchRun runs[3];
  for (int s = 0; s < 3; ++s) runs[s] = run_all_configs(seeds[s], workers);

  {
    const BenchRun& r = runs[0];
    struct Entry {
      const char* name;
      double got, want;
    } entries[] = {{"single-fidelity NMC", r.nmc, 7.11e-4},
                   {"naive no-reuse", r.naive_nr, 9.22e-5},
                   {"optimal no-reuse", r.opt_nr, 8.59e-5},
                   {"naive reuse", r.naive_r, 3.61e-5},
                   {"optimal reuse", r.opt_r, 3.18e-5}};
    bool pass = true;
    std::string detail;
    for (const auto& e : entries) {
      const bool ok = e.got >= 0.65 * e.want && e.got <= 1.35 * e.want;
      pass = pass && ok;
      detail += std::string(e.name) + "=" + fmt(e.got) + (ok ? "" : "(!)") + " vs " + fmt(e.want) + "; ";
    }
    report(1, "benchmark table reproduction within 35%", pass, detail);
  }

  {
    bool pass = true;
    std::string detail;
    for (int s = 0; s < 3; ++s) {
      const BenchRun& r = runs[s];
      const bool ok = r.nmc > r.naive_nr && r.naive_nr >= r.opt_nr && r.opt_nr > r.naive_r && r.naive_r >= r.opt_r;
      pass = pass && ok;
      detail += "seed" + std::to_string(s) + (ok ? " ok" : " violated") + " [" + fmt(r.nmc) + " > " +
                fmt(r.naive_nr) + " >= " + fmt(r.opt_nr) + " > " + fmt(r.naive_r) + " >= " + fmt(r.opt_r) + "]; ";
    }
    report(2, "empirical variance ordering across 3 seeds", pass, detail);
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: inner-size optimum locations on the 50x50 grid.
// ---------------------------------------------------------------------------

void criterion_3(int workers) {
  const auto designs = linspace_designs(0.0, 1.0, 41);
  const auto prior = bench::case1_prior();
  const auto noise = bench::case1_noise();
  const RngStream root(7041991);
  const std::vector<index_t> naive{2500, 2500, 2500};
  BudgetSpec budget;
  budget.w_budget = 2.5e6;
  budget.n_in_0 = 2500;
  budget.n_in_box = {{25, 4000}, {25, 4000}};
  const auto axis = integer_axis(25, 4000, 50);
  const double cell = (4000.0 - 25.0) / 49.0;

  bool pass = true;
  std::string detail;
  const index_t want[2][2] = {{2500, 925}, {2425, 1225}};
  for (const bool reuse : {false, true}) {
    auto specs = bench::case1_specs(NoiseForm::additive, reuse, naive);
    PilotEvaluations pilot(specs, designs, 500, root.child(11), noise, prior, 2500, workers);
    InnerSearchSpec search;
    search.strategy = SearchStrategy::grid;
    search.grid_axes = {axis, axis};
    const auto r = optimize_inner_sizes(pilot, budget, bench::all_families(), search, workers);
    const index_t* w = want[reuse ? 1 : 0];
    const bool ok = std::fabs(static_cast<double>(r.n_in[1] - w[0])) <= cell + 0.5 &&
                    std::fabs(static_cast<double>(r.n_in[2] - w[1])) <= cell + 0.5;
    pass = pass && ok;
    // Variance at the reference optimum's nearest lattice point, for scale.
    index_t near1 = axis[0], near2 = axis[0];
    for (index_t v : axis) {
      if (std::llabs(v - w[0]) < std::llabs(near1 - w[0])) near1 = v;
      if (std::llabs(v - w[1]) < std::llabs(near2 - w[1])) near2 = v;
    }
    const std::vector<index_t> ref{near1, near2};
    auto [sigma, wcost] = pilot.at(ref);
    const index_t n_in_all[] = {2500, near1, near2};
    const auto at_ref = optimize_allocation(sigma, wcost, budget, bench::all_families(), n_in_all);
    detail += std::string(reuse ? "reuse" : "no-reuse") + ": opt=[" + std::to_string(r.n_in[1]) + "," +
              std::to_string(r.n_in[2]) + "] ref=[" + std::to_string(w[0]) + "," + std::to_string(w[1]) +
              "] var(opt)=" + fmt(r.design.projected_variance) + " var(ref)=" + fmt(at_ref.projected_variance) +
              (ok ? "" : " (!)") + "; ";
  }
  report(3, "grid-search inner-size optima near the reference locations", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 4: unbiasedness against the matched-bias NMC baseline.
// ---------------------------------------------------------------------------

void criterion_4(int workers) {
  const auto designs = linspace_designs(0.1, 0.9, 5);
  const auto prior = bench::case1_prior();
  const auto noise = bench::case1_noise();
  const RngStream root(8822);
  const std::vector<index_t> n_in{2500, 2500, 2500};
  const auto specs = bench::case1_specs(NoiseForm::additive, false, n_in);

  BudgetSpec budget;
  budget.w_budget = 2.5e5;
  budget.n_in_0 = 2500;
  PilotEvaluations pilot(specs, designs, 200, root.child(11), noise, prior, 2500, workers);
  auto [sigma, w] = pilot.at(std::span<const index_t>(n_in).subspan(1));
  const index_t n_in_all[] = {2500, 2500, 2500};
  const auto design = optimize_allocation(sigma, w, budget, bench::all_families(), n_in_all);

  const index_t trials = 200;
  const auto mf = run_sweep(designs, design, specs, trials, root.child(12), noise, prior, workers);
  const auto base = run_baseline_nmc(designs, baseline_n_out(budget.w_budget, w[0]), specs[0], trials,
                                     root.child(12), noise, prior, workers);
  bool pass = true;
  std::string detail;
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const double se = std::sqrt((mf.variance[d] + base.variance[d]) / static_cast<double>(trials));
    const double diff = std::fabs(mf.mean[d] - base.mean[d]);
    const bool ok = diff <= 4.0 * se;
    pass = pass && ok;
    detail += "xi=" + fmt(designs[d].scalar()) + ": |d|=" + fmt(diff) + " 4se=" + fmt(4.0 * se) +
              (ok ? "" : " (!)") + "; ";
  }
  report(4, "multi-fidelity mean matches the baseline (unbiasedness)", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 5: linear-Gaussian analytic oracle.
// ---------------------------------------------------------------------------

// Leading NMC bias coefficient A(xi) for y = xi * Phi^-1(v) + eps: the
// delta-method term E_y[Var(p(y|theta)) / (2 p(y)^2)] weighted by p(y), with
// the Gaussian pieces in closed form, integrated by Simpson's rule.
double lingauss_bias_coefficient(double xi, double sigma) {
  const double s2 = sigma * sigma + xi * xi;        // evidence variance
  const double w2 = 0.5 * sigma * sigma + xi * xi;  // squared-likelihood kernel variance
  auto phi = [](double u, double v2) { return std::exp(-0.5 * u * u / v2) / std::sqrt(2.0 * M_PI * v2); };
  const double lim = 10.0 * std::sqrt(s2);
  const int n = 40001;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = -lim + 2.0 * lim * i / (n - 1);
    const double p = phi(y, s2);
    const double esq = phi(y, w2) / (2.0 * sigma * std::sqrt(M_PI));
    const double f = (esq - p * p) / (2.0 * p);
    const double wgt = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += wgt * f;
  }
  return acc * (2.0 * lim / (n - 1));
}

void criterion_5(int workers) {
  const double sigma = 0.5;
  const NoiseSpec noise({sigma});
  const auto prior = PriorSpec::independent_uniform({{0.0, 1.0}});
  const auto designs = linspace_designs(0.2, 1.0, 5);
  const RngStream root(5150);
  const index_t n_in = 2000, n_out = 2000;

  std::vector<UtilityModelSpec> specs;
  {
    UtilityModelSpec s0;
    s0.model = ForwardModel::benchmark(0, BenchmarkFn::linear_gaussian, 1.0, 1.0);
    s0.form = NoiseForm::additive;
    s0.n_in = n_in;
    specs.push_back(s0);
    UtilityModelSpec s1 = s0;
    s1.model = ForwardModel::benchmark(1, BenchmarkFn::linear_gaussian, 0.1, 0.85);
    specs.push_back(s1);
  }

  BudgetSpec budget;
  budget.w_budget = static_cast<double>(n_out) * static_cast<double>(n_in + 1);
  budget.n_in_0 = n_in;
  PilotEvaluations pilot(specs, designs, 200, root.child(11), noise, prior, n_in, workers);
  const index_t lowfi[] = {n_in};
  auto [sigma_bar, w] = pilot.at(lowfi);
  const index_t n_in_all[] = {n_in, n_in};
  const auto design = optimize_allocation(sigma_bar, w, budget, bench::all_families(), n_in_all);
  const auto mf = run_sweep(designs, design, specs, 1, root.child(12), noise, prior, workers);

  bool pass = true;
  std::string detail;
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const double xi = designs[d].scalar();
    const double analytic = analytic_eig_linear_gaussian(1.0, xi, sigma);
    const double bias_bound = 2.0 * lingauss_bias_coefficient(xi, sigma) / static_cast<double>(n_in);

    const auto nmc = nmc_estimator(specs[0], designs[d], n_out, root.child(13).child(static_cast<std::uint64_t>(d)),
                                   noise, prior);
    double var_u = 0.0;
    for (double u : nmc.u) var_u += (u - nmc.estimate) * (u - nmc.estimate);
    var_u /= static_cast<double>(nmc.u.size() - 1);
    const double se_nmc = std::sqrt(var_u / static_cast<double>(n_out));
    const bool ok_nmc =
        nmc.estimate >= analytic - 3.0 * se_nmc && nmc.estimate <= analytic + 3.0 * se_nmc + bias_bound;

    const double se_mf = std::sqrt(design.projected_variance);
    const double est_mf = mf.estimates(0, static_cast<index_t>(d));
    const bool ok_mf = est_mf >= analytic - 3.0 * se_mf && est_mf <= analytic + 3.0 * se_mf + bias_bound;

    pass = pass && ok_nmc && ok_mf;
    detail += "xi=" + fmt(xi) + ": nmc=" + fmt(nmc.estimate) + (ok_nmc ? "" : "(!)") + " mf=" + fmt(est_mf) +
              (ok_mf ? "" : "(!)") + " ref=" + fmt(analytic) + "; ";
  }
  report(5, "linear-Gaussian analytic oracle", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 6: ACV algebra suite.
// ---------------------------------------------------------------------------

Eigen::MatrixXd random_spd(int n, std::mt19937_64& gen) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd B(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) B(r, c) = N(gen);
  Eigen::MatrixXd S = B * B.transpose();
  S.diagonal().array() += 0.25;
  return S;
}

AllocationMatrix random_allocation(int M, std::mt19937_64& gen) {
  std::uniform_int_distribution<index_t> size_dist(2, 12);
  std::uniform_int_distribution<int> coin(0, 1);
  for (;;) {
    const int G = 2 + static_cast<int>(gen() % 3);
    AllocationMatrix A;
    for (int g = 0; g < G; ++g) {
      AllocationMatrix::Group grp;
      grp.size = size_dist(gen);
      grp.in_z0 = coin(gen) == 1;
      grp.in_zstar.resize(static_cast<std::size_t>(M));
      grp.in_z.resize(static_cast<std::size_t>(M));
      for (int m = 0; m < M; ++m) {
        grp.in_zstar[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(coin(gen));
        grp.in_z[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(coin(gen));
      }
      A.groups.push_back(std::move(grp));
    }
    try {
      A.validate();
      return A;
    } catch (const ConfigError&) {
    }
  }
}

double simulate_acv_once(const AllocationMatrix& A, const Eigen::MatrixXd& L, const Eigen::VectorXd& alpha,
                         std::mt19937_64& gen) {
  const int M = A.num_models();
  std::normal_distribution<double> N01(0.0, 1.0);
  Matrix sums(static_cast<index_t>(A.groups.size()), M + 1);
  for (std::size_t g = 0; g < A.groups.size(); ++g)
    for (int m = 0; m <= M; ++m) sums(static_cast<index_t>(g), m) = 0.0;
  Eigen::VectorXd z(M + 1), u(M + 1);
  for (std::size_t g = 0; g < A.groups.size(); ++g)
    for (index_t i = 0; i < A.groups[g].size; ++i) {
      for (int m = 0; m <= M; ++m) z(m) = N01(gen);
      u = L * z;
      for (int m = 0; m <= M; ++m)
        if (A.group_used_by(m, static_cast<index_t>(g))) sums(static_cast<index_t>(g), m) += u(m);
    }
  return evaluate_acv_from_sums(sums, alpha, A);
}

void criterion_6() {
  std::mt19937_64 gen(60606);
  bool pass = true;
  std::string detail;

  double worst_res = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd dd = random_spd(3, gen);
    Eigen::VectorXd d0(3);
    for (int i = 0; i < 3; ++i) d0(i) = std::normal_distribution<double>(0.0, 1.0)(gen);
    const auto alpha = optimal_weights(dd, d0);
    worst_res = std::max(worst_res, (dd * alpha + d0).norm() / d0.norm());
  }
  const bool ok_res = worst_res <= 1e-10;
  pass = pass && ok_res;
  detail += "weight residual=" + fmt(worst_res) + (ok_res ? "" : " (!)") + "; ";

  double worst_rel = 0.0;
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
      --rep;
      continue;
    }
    const double projected = estimator_variance_at(C, A, alpha);
    const int reps = 10000;
    double acc = 0.0, acc2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double est = simulate_acv_once(A, L, alpha, gen);
      acc += est;
      acc2 += est * est;
    }
    const double empirical = (acc2 - acc * acc / reps) / (reps - 1);
    worst_rel = std::max(worst_rel, std::fabs(empirical - projected) / projected);
  }
  const bool ok_var = worst_rel <= 0.10;
  pass = pass && ok_var;
  detail += "variance rel err=" + fmt(worst_rel) + (ok_var ? "" : " (!)") + "; ";

  {
    const int M = 2;
    const Eigen::MatrixXd C = random_spd(M + 1, gen);
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
    AllocationMatrix A;
    {
      AllocationMatrix::Group g0;
      g0.size = 6;
      g0.in_z0 = true;
      g0.in_zstar = {1, 0};
      g0.in_z = {0, 0};
      AllocationMatrix::Group g1;
      g1.size = 9;
      g1.in_z0 = false;
      g1.in_zstar = {0, 1};
      g1.in_z = {1, 0};
      AllocationMatrix::Group g2;
      g2.size = 14;
      g2.in_z0 = false;
      g2.in_zstar = {0, 0};
      g2.in_z = {1, 1};
      A.groups = {g0, g1, g2};
    }
    const auto cc = component_covariances(C, A);
    const int reps = 400000;
    std::normal_distribution<double> N01(0.0, 1.0);
    Eigen::VectorXd sum_d = Eigen::VectorXd::Zero(M);
    Eigen::MatrixXd sum_dd = Eigen::MatrixXd::Zero(M, M);
    double sum_q0 = 0.0;
    Eigen::VectorXd sum_dq = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd z(M + 1), u(M + 1);
    for (int r = 0; r < reps; ++r) {
      Matrix sums(3, M + 1);
      for (index_t g = 0; g < 3; ++g)
        for (int m = 0; m <= M; ++m) sums(g, m) = 0.0;
      for (index_t g = 0; g < 3; ++g)
        for (index_t i = 0; i < A.groups[static_cast<std::size_t>(g)].size; ++i) {
          for (int m = 0; m <= M; ++m) z(m) = N01(gen);
          u = L * z;
          for (int m = 0; m <= M; ++m)
            if (A.group_used_by(m, g)) sums(g, m) += u(m);
        }
      auto set_mean = [&](int m, bool star) {
        double acc = 0.0;
        index_t n = 0;
        for (index_t g = 0; g < 3; ++g) {
          const auto& grp = A.groups[static_cast<std::size_t>(g)];
          const bool in = (m == 0) ? grp.in_z0
                                   : (star ? grp.in_zstar[static_cast<std::size_t>(m - 1)]
                                           : grp.in_z[static_cast<std::size_t>(m - 1)]);
          if (in) {
            acc += sums(g, m);
            n += grp.size;
          }
        }
        return acc / static_cast<double>(n);
      };
      const double q0 = set_mean(0, false);
      sum_q0 += q0;
      Eigen::VectorXd d(M);
      for (int m = 1; m <= M; ++m) d(m - 1) = set_mean(m, true) - set_mean(m, false);
      sum_d += d;
      sum_dq += d * q0;
      sum_dd += d * d.transpose();
    }
    const double inv = 1.0 / reps;
    bool ok_cc = true;
    const double tol = 3.0 / std::sqrt(static_cast<double>(reps));
    for (int m = 0; m < M; ++m) {
      const double cov_dq = sum_dq(m) * inv - sum_d(m) * inv * (sum_q0 * inv);
      if (std::fabs(cov_dq - cc.cov_d0(m)) > tol * std::sqrt(cc.var_q0 * cc.cov_dd(m, m)) + 1e-9) ok_cc = false;
      for (int nn = 0; nn < M; ++nn) {
        const double cov_mn = sum_dd(m, nn) * inv - (sum_d(m) * inv) * (sum_d(nn) * inv);
        if (std::fabs(cov_mn - cc.cov_dd(m, nn)) > tol * std::sqrt(cc.cov_dd(m, m) * cc.cov_dd(nn, nn)) + 1e-9)
          ok_cc = false;
      }
    }
    pass = pass && ok_cc;
    detail += std::string("component covariances vs simulation") + (ok_cc ? " ok" : " (!)");
  }
  report(6, "ACV algebra suite", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 7: scaled-noise variant behavior.
// ---------------------------------------------------------------------------

void criterion_7(int workers) {
  bench::Case1Options opt;
  opt.form = NoiseForm::scaled;
  opt.optimize_n_in = false;
  opt.reuse_inner = true;
  opt.workers = workers;
  const auto r = bench::run_case1(opt);

  // xi = 0.2 sits at grid index 8; under scaled noise it must not be a
  // local maximum of the EIG curve.
  const double m_prev = r.mf.mean[7], m_at = r.mf.mean[8], m_next = r.mf.mean[9];
  const bool not_local_max = !(m_prev < m_at && m_next < m_at);
  double base_avg = 0.0, mf_avg = 0.0;
  for (double v : r.baseline.variance) base_avg += v;
  for (double v : r.mf.variance) mf_avg += v;
  const double ratio = base_avg / mf_avg;
  const bool ratio_ok = ratio >= 8.0;
  report(7, "scaled-noise variant: curve shape and reduction", not_local_max && ratio_ok,
         "mean(0.175/0.2/0.225)=" + fmt(m_prev) + "/" + fmt(m_at) + "/" + fmt(m_next) +
             (not_local_max ? "" : " local max (!)") + "; naive-reuse ratio=" + fmt(ratio) +
             (ratio_ok ? "" : " < 8 (!)"));
}

// ---------------------------------------------------------------------------
// Criterion 8: numerical stability properties.
// ---------------------------------------------------------------------------

void criterion_8() {
  bool pass = true;
  std::string detail;
  {
    const NoiseSpec noise({1e-6});
    const auto prior = bench::case1_prior();
    const RngStream root(8);
    const auto batch = SampleBatch::draw(prior, noise, -1, root, 3);
    bool finite = true;
    for (NoiseForm form : {NoiseForm::additive, NoiseForm::scaled}) {
      UtilityModelSpec spec;
      spec.model = ForwardModel::benchmark(0, BenchmarkFn::case1_g0, 1.0);
      spec.form = form;
      spec.n_in = 100000;
      DesignPoint xi;
      xi.value = {0.6};
      const auto u = eval_utility_batch(spec, xi, batch, root.child(kInnerStreamLabel), noise, prior);
      for (double v : u) finite = finite && std::isfinite(v);
    }
    pass = pass && finite;
    detail += std::string("sigma=1e-6, n_in=1e5 finite") + (finite ? " ok" : " (!)") + "; ";
  }
  {
    const NoiseSpec noise({1e-2});
    const auto prior = bench::case1_prior();
    const RngStream root(606);
    const auto batch = SampleBatch::draw(prior, noise, -1, root, 64);
    DesignPoint xi;
    xi.value = {0.4};
    double worst = 0.0;
    for (double shift : {0.5, 3.0}) {
      UtilityModelSpec base;
      base.model = ForwardModel::benchmark(0, BenchmarkFn::case1_g0, 1.0);
      base.form = NoiseForm::additive;
      base.n_in = 256;
      UtilityModelSpec shifted = base;
      shifted.model = ForwardModel::benchmark(0, BenchmarkFn::case1_g0, 1.0, 1.0, shift);
      const auto ua = eval_utility_batch(base, xi, batch, root.child(kInnerStreamLabel), noise, prior);
      const auto ub = eval_utility_batch(shifted, xi, batch, root.child(kInnerStreamLabel), noise, prior);
      for (std::size_t i = 0; i < ua.size(); ++i) worst = std::max(worst, std::fabs(ua[i] - ub[i]));
    }
    const bool ok = worst <= 1e-9;
    pass = pass && ok;
    detail += "shift-invariance worst |du|=" + fmt(worst) + (ok ? "" : " (!)");
  }
  report(8, "numerical stability: log-sum-exp contract and shift invariance", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: synthetic 4-fidelity tabulated ensemble end to end.
// ---------------------------------------------------------------------------

void criterion_9(int workers) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mfeig_tabulated";
  fs::create_directories(dir);

  // Synthetic solver outputs: 4 fidelities evaluated on a shared pool of
  // parameter samples at 6 designs, written in the tabulated CSV schema.
  const index_t n_pool = 3000, n_designs = 6, n_theta = 2;
  std::mt19937_64 gen(909090);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Matrix thetas(n_pool, n_theta);
  for (index_t i = 0; i < n_pool; ++i)
    for (index_t c = 0; c < n_theta; ++c) thetas(i, c) = U(gen);
  std::vector<DesignPoint> designs = linspace_designs(0.1, 1.0, n_designs);
  auto g_fid = [](int fid, const double* th, double xi) {
    const double k = 1.0 - 0.12 * fid;  // degraded curvature per fidelity
    return k * th[0] * th[0] * xi + 0.8 * th[1] * xi * xi + th[0] * std::exp(-xi);
  };
  std::vector<std::string> paths;
  for (int fid = 0; fid < 4; ++fid) {
    const auto path = (dir / ("fid" + std::to_string(fid) + ".csv")).string();
    std::ofstream f(path);
    f << "sample_index,design_index,theta_0,theta_1,y_0\n";
    for (index_t i = 0; i < n_pool; ++i)
      for (index_t d = 0; d < n_designs; ++d)
        f << i << "," << d << "," << io::format_double(thetas(i, 0)) << "," << io::format_double(thetas(i, 1))
          << "," << io::format_double(g_fid(fid, thetas.row(i), designs[static_cast<std::size_t>(d)].scalar()))
          << "\n";
    paths.push_back(path);
  }

  TabulatedManifest manifest;
  manifest.n_theta = n_theta;
  manifest.ny = 1;
  for (const auto& d : designs) manifest.designs.push_back(d.value);

  const double costs[4] = {100.0, 10.0, 1.0, 0.25};
  std::vector<UtilityModelSpec> specs;
  for (int fid = 0; fid < 4; ++fid) {
    UtilityModelSpec s;
    s.model = ForwardModel::tabulated(fid, load_tabulated_model(paths[static_cast<std::size_t>(fid)], manifest),
                                      costs[fid]);
    s.form = NoiseForm::additive;
    s.n_in = 24;
    s.reuse_inner = true;
    specs.push_back(std::move(s));
  }
  const auto prior = PriorSpec::sample_pool(n_pool);
  const NoiseSpec noise({5e-2});
  const RngStream root(41004);

  BudgetSpec budget;
  budget.w_budget = 3.0e5;
  budget.n_in_0 = 24;
  budget.n_in_box = {{4, 64}, {4, 64}, {4, 64}};

  PilotEvaluations pilot(specs, designs, 64, root.child(11), noise, prior, 24, workers);
  InnerSearchSpec search;
  search.strategy = SearchStrategy::coarse_to_fine;
  search.cf_points = 4;
  search.cf_rounds = 3;
  const auto found = optimize_inner_sizes(pilot, budget, bench::all_families(), search, workers);

  auto run_specs = specs;
  for (std::size_t m = 0; m < run_specs.size(); ++m) run_specs[m].n_in = found.n_in[m];

  std::vector<double> w_active{static_cast<double>(found.n_in[0] + 1) * costs[0]};
  for (int m : found.design.active_models)
    w_active.push_back(static_cast<double>(found.n_in[static_cast<std::size_t>(m)] + 1) * costs[m]);
  const double cost = estimator_cost(w_active, found.design.allocation);
  const bool feasible = cost <= budget.w_budget;
  auto [sigma_naive, w_naive] = pilot.at(std::vector<index_t>{24, 24, 24});
  const double mc_var = sigma_naive(0, 0) / std::floor(budget.w_budget / w_naive[0]);
  const bool dominates = found.design.projected_variance <= mc_var;

  const index_t trials = 150;
  const auto mf = run_sweep(designs, found.design, run_specs, trials, root.child(12), noise, prior, workers);
  const auto base = run_baseline_nmc(designs, baseline_n_out(budget.w_budget, w_active[0]), run_specs[0], trials,
                                     root.child(12), noise, prior, workers);
  bool unbiased = true;
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const double se = std::sqrt((mf.variance[d] + base.variance[d]) / static_cast<double>(trials));
    if (std::fabs(mf.mean[d] - base.mean[d]) > 4.0 * se) unbiased = false;
  }
  report(9, "tabulated 4-fidelity ensemble end to end", feasible && dominates && unbiased,
         "cost=" + fmt(cost) + "/" + fmt(budget.w_budget) + (feasible ? "" : " (!)") +
             "; projected=" + fmt(found.design.projected_variance) + " vs MC=" + fmt(mc_var) +
             (dominates ? "" : " (!)") + "; n_in=[" + std::to_string(found.n_in[0]) + "," +
             std::to_string(found.n_in[1]) + "," + std::to_string(found.n_in[2]) + "," +
             std::to_string(found.n_in[3]) + "]" + (unbiased ? "; means agree" : "; means disagree (!)"));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const int workers = resolve_workers(0);
  std::printf("acceptance suite: %d workers, %s kernels\n", workers, kernels::backend_name());

  criterion_6();
  criterion_8();
  criterion_5(workers);
  criterion_4(workers);
  criterion_9(workers);
  criterion_3(workers);
  criterion_7(workers);
  criteria_1_and_2(workers);

  std::printf("acceptance suite finished in %.0fs: %d criterion(s) failed\n", elapsed(t0), g_failures);
  return g_failures;
}
