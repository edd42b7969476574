#include "mfeig/design.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>

#include "mfeig/kernels/kernels.hpp"
#include "mfeig/parallel.hpp"

namespace mfeig {

double estimator_cost(std::span<const double> w, const AllocationMatrix& A) {
  const int M = A.num_models();
  if (static_cast<int>(w.size()) != M + 1) throw ConfigError("estimator_cost: cost vector size mismatch");
  double cost = static_cast<double>(A.z0_size()) * w[0];
  for (int m = 1; m <= M; ++m) cost += static_cast<double>(A.evaluations(m)) * w[static_cast<std::size_t>(m)];
  return cost;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 12, 12>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 12, 1>;

// Closed-form component covariances per family with continuous sizes
// (subset-restricted covariance Cs, costs ws; sizes[0] is always n0-like).
// Returns var*cost, the scale-invariant objective of the continuous
// relaxation, or +inf when the candidate degenerates.
struct FamilyEval {
  EstimatorFamily family;
  const Eigen::MatrixXd& Cs;  // (K+1)x(K+1)
  const std::vector<double>& ws;

  double operator()(std::span<const double> sizes) const {
    const int K = static_cast<int>(Cs.rows()) - 1;
    SmallMat dd(K, K);
    SmallVec d0(K);
    double var_q0, cost;
    switch (family) {
      case EstimatorFamily::ACVIS: {
        const double n0 = sizes[0];
        var_q0 = Cs(0, 0) / n0;
        cost = ws[0] * n0;
        for (int m = 1; m <= K; ++m) {
          const double zm = n0 + sizes[static_cast<std::size_t>(m)];
          cost += ws[static_cast<std::size_t>(m)] * zm;
          d0(m - 1) = Cs(0, m) * (1.0 / n0 - 1.0 / zm);
          for (int n = 1; n <= K; ++n) {
            const double zn = n0 + sizes[static_cast<std::size_t>(n)];
            if (m == n)
              dd(m - 1, n - 1) = Cs(m, m) * (1.0 / n0 - 1.0 / zm);
            else
              dd(m - 1, n - 1) = Cs(m, n) * (1.0 / n0 - 1.0 / zm - 1.0 / zn + n0 / (zm * zn));
          }
        }
        break;
      }
      case EstimatorFamily::ACVMF: {
        const double n0 = sizes[0];
        var_q0 = Cs(0, 0) / n0;
        cost = ws[0] * n0;
        for (int m = 1; m <= K; ++m) {
          const double sm = sizes[static_cast<std::size_t>(m)];
          if (sm <= n0) return kInf;
          cost += ws[static_cast<std::size_t>(m)] * sm;
          d0(m - 1) = Cs(0, m) * (1.0 / n0 - 1.0 / sm);
          for (int n = 1; n <= K; ++n) {
            const double sn = sizes[static_cast<std::size_t>(n)];
            dd(m - 1, n - 1) = Cs(m, n) * (1.0 / n0 - 1.0 / sm - 1.0 / sn + std::min(sm, sn) / (sm * sn));
          }
        }
        break;
      }
      case EstimatorFamily::MFMC: {
        const double n0 = sizes[0];
        var_q0 = Cs(0, 0) / n0;
        cost = ws[0] * n0;
        for (int m = 1; m <= K; ++m) {
          const double prev = sizes[static_cast<std::size_t>(m - 1)];
          const double cur = sizes[static_cast<std::size_t>(m)];
          if (cur <= prev) return kInf;
          cost += ws[static_cast<std::size_t>(m)] * cur;
          d0(m - 1) = Cs(0, m) * (1.0 / prev - 1.0 / cur);
          for (int n = 1; n <= K; ++n) {
            const double pn = sizes[static_cast<std::size_t>(n - 1)];
            const double cn = sizes[static_cast<std::size_t>(n)];
            auto ov = [](double a, double b) { return 1.0 / std::max(a, b); };
            dd(m - 1, n - 1) = Cs(m, n) * (ov(prev, pn) - ov(prev, cn) - ov(cur, pn) + ov(cur, cn));
          }
        }
        break;
      }
      case EstimatorFamily::MLMC: {
        const double n0 = sizes[0];
        var_q0 = Cs(0, 0) / n0;
        cost = ws[0] * n0;
        for (int m = 1; m <= K; ++m) {
          const double nm = sizes[static_cast<std::size_t>(m)];
          const double nprev = sizes[static_cast<std::size_t>(m - 1)];
          cost += ws[static_cast<std::size_t>(m)] * (nprev + nm);
          d0(m - 1) = (m == 1) ? Cs(0, 1) / n0 : 0.0;
          for (int n = 1; n <= K; ++n) {
            if (n == m)
              dd(m - 1, n - 1) = Cs(m, m) * (1.0 / nprev + 1.0 / nm);
            else if (n == m + 1)
              dd(m - 1, n - 1) = -Cs(m, n) / nm;
            else if (n == m - 1)
              dd(m - 1, n - 1) = -Cs(m, n) / nprev;
            else
              dd(m - 1, n - 1) = 0.0;
          }
        }
        break;
      }
      default:
        return kInf;
    }

    double var;
    if (family == EstimatorFamily::MLMC) {
      // alpha fixed at -1.
      var = var_q0 - 2.0 * d0.sum() + dd.sum();
    } else {
      Eigen::LLT<SmallMat> llt(dd);
      if (llt.info() != Eigen::Success) return kInf;
      var = var_q0 - d0.dot(llt.solve(d0));
    }
    if (!(var > 0.0) || !std::isfinite(var)) return kInf;
    return var * cost;
  }
};

// Minimal Nelder-Mead for the low-dimensional ratio problems.
struct NelderMead {
  int dim;
  int max_eval;

  template <typename F>
  std::pair<std::vector<double>, double> run(const F& f, std::span<const double> x0, double step) const {
    const int n = dim;
    std::vector<std::vector<double>> xs(static_cast<std::size_t>(n + 1), std::vector<double>(static_cast<std::size_t>(n)));
    std::vector<double> fs(static_cast<std::size_t>(n + 1));
    for (int v = 0; v <= n; ++v) {
      for (int d = 0; d < n; ++d) xs[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)] = x0[static_cast<std::size_t>(d)];
      if (v > 0) xs[static_cast<std::size_t>(v)][static_cast<std::size_t>(v - 1)] += step;
      fs[static_cast<std::size_t>(v)] = f(xs[static_cast<std::size_t>(v)]);
    }
    int evals = n + 1;
    std::vector<double> xc(static_cast<std::size_t>(n)), xr(static_cast<std::size_t>(n)), xe(static_cast<std::size_t>(n));
    while (evals < max_eval) {
      // Order simplex.
      std::vector<int> ord(static_cast<std::size_t>(n + 1));
      for (int v = 0; v <= n; ++v) ord[static_cast<std::size_t>(v)] = v;
      std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)]; });
      const int best = ord[0], worst = ord[static_cast<std::size_t>(n)];
      if (std::isfinite(fs[static_cast<std::size_t>(best)]) &&
          fs[static_cast<std::size_t>(worst)] - fs[static_cast<std::size_t>(best)] <=
              1e-13 * (std::fabs(fs[static_cast<std::size_t>(best)]) + 1e-300))
        break;
      // Centroid of all but worst.
      std::fill(xc.begin(), xc.end(), 0.0);
      for (int v = 0; v <= n; ++v) {
        if (v == worst) continue;
        for (int d = 0; d < n; ++d) xc[static_cast<std::size_t>(d)] += xs[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)];
      }
      for (double& c : xc) c /= static_cast<double>(n);
      auto blend = [&](std::vector<double>& out, double coef) {
        for (int d = 0; d < n; ++d)
          out[static_cast<std::size_t>(d)] = xc[static_cast<std::size_t>(d)] +
                                             coef * (xc[static_cast<std::size_t>(d)] - xs[static_cast<std::size_t>(worst)][static_cast<std::size_t>(d)]);
      };
      blend(xr, 1.0);
      const double fr = f(xr);
      ++evals;
      if (fr < fs[static_cast<std::size_t>(best)]) {
        blend(xe, 2.0);
        const double fe = f(xe);
        ++evals;
        if (fe < fr) {
          xs[static_cast<std::size_t>(worst)] = xe;
          fs[static_cast<std::size_t>(worst)] = fe;
        } else {
          xs[static_cast<std::size_t>(worst)] = xr;
          fs[static_cast<std::size_t>(worst)] = fr;
        }
        continue;
      }
      const int second_worst = ord[static_cast<std::size_t>(n - 1)];
      if (fr < fs[static_cast<std::size_t>(second_worst)]) {
        xs[static_cast<std::size_t>(worst)] = xr;
        fs[static_cast<std::size_t>(worst)] = fr;
        continue;
      }
      blend(xe, -0.5);  // contraction
      const double fc = f(xe);
      ++evals;
      if (fc < fs[static_cast<std::size_t>(worst)]) {
        xs[static_cast<std::size_t>(worst)] = xe;
        fs[static_cast<std::size_t>(worst)] = fc;
        continue;
      }
      // Shrink toward best.
      for (int v = 0; v <= n; ++v) {
        if (v == best) continue;
        for (int d = 0; d < n; ++d)
          xs[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)] =
              0.5 * (xs[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)] + xs[static_cast<std::size_t>(best)][static_cast<std::size_t>(d)]);
        fs[static_cast<std::size_t>(v)] = f(xs[static_cast<std::size_t>(v)]);
        ++evals;
      }
    }
    int best = 0;
    for (int v = 1; v <= dim; ++v)
      if (fs[static_cast<std::size_t>(v)] < fs[static_cast<std::size_t>(best)]) best = v;
    return {xs[static_cast<std::size_t>(best)], fs[static_cast<std::size_t>(best)]};
  }
};

// Maps unconstrained optimizer variables to continuous sizes (n0 = 1).
void sizes_from_x(EstimatorFamily family, std::span<const double> x, std::vector<double>& sizes) {
  const int K = static_cast<int>(x.size());
  sizes.resize(static_cast<std::size_t>(K + 1));
  sizes[0] = 1.0;
  auto e = [](double v) { return std::exp(std::clamp(v, -30.0, 30.0)); };
  for (int m = 1; m <= K; ++m) {
    const double xm = x[static_cast<std::size_t>(m - 1)];
    switch (family) {
      case EstimatorFamily::ACVIS: sizes[static_cast<std::size_t>(m)] = e(xm); break;
      case EstimatorFamily::ACVMF: sizes[static_cast<std::size_t>(m)] = 1.0 + e(xm); break;
      case EstimatorFamily::MFMC:
        sizes[static_cast<std::size_t>(m)] = sizes[static_cast<std::size_t>(m - 1)] * (1.0 + e(xm));
        break;
      case EstimatorFamily::MLMC: sizes[static_cast<std::size_t>(m)] = e(xm); break;
      default: break;
    }
  }
}

struct IntegerDesign {
  AllocationMatrix allocation;
  std::vector<index_t> param_sizes;
  bool feasible = false;
};

AllocationMatrix build_family_allocation(EstimatorFamily family, std::span<const index_t> sizes) {
  const int K = static_cast<int>(sizes.size()) - 1;
  switch (family) {
    case EstimatorFamily::ACVIS: {
      std::vector<index_t> extras(sizes.begin() + 1, sizes.end());
      return acvis_allocation(sizes[0], extras);
    }
    case EstimatorFamily::ACVMF: {
      std::vector<index_t> zm(sizes.begin() + 1, sizes.end());
      return acvmf_allocation(sizes[0], zm);
    }
    case EstimatorFamily::MFMC: {
      std::vector<index_t> all(sizes.begin(), sizes.end());
      return mfmc_allocation(all);
    }
    case EstimatorFamily::MLMC: {
      std::vector<index_t> all(sizes.begin(), sizes.end());
      return mlmc_allocation(all).allocation;
    }
    default:
      throw ConfigError("build_family_allocation: unsupported family");
  }
  (void)K;
}

// Floor the continuous sizes into a structurally valid, budget-feasible
// integer design; oversized results shed samples from the largest size.
IntegerDesign integerize(EstimatorFamily family, std::span<const double> csizes, std::span<const double> ws,
                         double budget) {
  IntegerDesign out;
  const int K = static_cast<int>(csizes.size()) - 1;
  std::vector<index_t>& s = out.param_sizes;
  s.resize(static_cast<std::size_t>(K + 1));
  auto enforce_structure = [&]() {
    s[0] = std::max<index_t>(1, s[0]);
    for (int m = 1; m <= K; ++m) {
      index_t lo = 1;
      if (family == EstimatorFamily::ACVMF) lo = s[0] + 1;
      if (family == EstimatorFamily::MFMC) lo = s[static_cast<std::size_t>(m - 1)] + 1;
      s[static_cast<std::size_t>(m)] = std::max(lo, s[static_cast<std::size_t>(m)]);
    }
  };
  for (int m = 0; m <= K; ++m)
    s[static_cast<std::size_t>(m)] = static_cast<index_t>(std::floor(csizes[static_cast<std::size_t>(m)]));
  enforce_structure();

  auto cost_of = [&]() {
    AllocationMatrix A = build_family_allocation(family, s);
    return std::pair<double, AllocationMatrix>(estimator_cost(ws, A), std::move(A));
  };
  for (int guard = 0; guard < 4096; ++guard) {
    auto [cost, A] = cost_of();
    if (cost <= budget) {
      out.allocation = std::move(A);
      out.feasible = true;
      return out;
    }
    // Shed the excess from the largest size that can still shrink.
    int pick = -1;
    index_t largest = 0;
    for (int m = 0; m <= K; ++m) {
      index_t lo = 1;
      if (family == EstimatorFamily::ACVMF && m >= 1) lo = s[0] + 1;
      if (family == EstimatorFamily::MFMC && m >= 1) lo = s[static_cast<std::size_t>(m - 1)] + 1;
      if (s[static_cast<std::size_t>(m)] > lo && s[static_cast<std::size_t>(m)] >= largest) {
        largest = s[static_cast<std::size_t>(m)];
        pick = m;
      }
    }
    if (pick < 0) return out;  // stuck at structural minimum, infeasible
    index_t lo = 1;
    if (family == EstimatorFamily::ACVMF && pick >= 1) lo = s[0] + 1;
    if (family == EstimatorFamily::MFMC && pick >= 1) lo = s[static_cast<std::size_t>(pick - 1)] + 1;
    const index_t old = s[static_cast<std::size_t>(pick)];
    s[static_cast<std::size_t>(pick)] = old - 1;
    enforce_structure();
    const double unit = cost - cost_of().first;
    index_t steps = 1;
    if (unit > 0.0) steps = static_cast<index_t>(std::ceil((cost - budget) / unit));
    s[static_cast<std::size_t>(pick)] = std::max(lo, old - std::max<index_t>(1, steps));
    enforce_structure();
  }
  return out;
}

struct CandidateOutcome {
  bool valid = false;
  double variance = kInf;
  double cost = kInf;
  int n_models = 0;
  EstimatorDesign design;
};

// Optimize one (family, model subset) candidate.
CandidateOutcome optimize_family_subset(EstimatorFamily family, const std::vector<int>& subset,
                                        const Eigen::MatrixXd& C, std::span<const double> w, double budget,
                                        std::span<const index_t> n_in_all) {
  CandidateOutcome out;
  const int K = static_cast<int>(subset.size());
  Eigen::MatrixXd Cs(K + 1, K + 1);
  std::vector<double> ws(static_cast<std::size_t>(K + 1));
  std::vector<int> cols{0};
  for (int m : subset) cols.push_back(m);
  for (int a = 0; a <= K; ++a) {
    ws[static_cast<std::size_t>(a)] = w[static_cast<std::size_t>(cols[static_cast<std::size_t>(a)])];
    for (int b = 0; b <= K; ++b) Cs(a, b) = C(cols[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(b)]);
  }

  const FamilyEval eval{family, Cs, ws};
  std::vector<double> sizes;
  auto objective = [&](const std::vector<double>& x) {
    sizes_from_x(family, x, sizes);
    return eval(sizes);
  };

  // Fixed deterministic multistart in log-ratio space.
  std::vector<std::vector<double>> starts;
  {
    std::vector<double> s1(static_cast<std::size_t>(K), std::log(4.0));
    std::vector<double> s2(static_cast<std::size_t>(K));
    std::vector<double> s3(static_cast<std::size_t>(K));
    for (int m = 1; m <= K; ++m) {
      const double ratio = std::max(1.5, ws[0] / ws[static_cast<std::size_t>(m)]);
      s2[static_cast<std::size_t>(m - 1)] = std::log(ratio);
      s3[static_cast<std::size_t>(m - 1)] = 0.5 * std::log(ratio);
    }
    starts = {s1, s2, s3};
  }
  const NelderMead nm{K, 140 * K + 120};
  std::vector<double> best_x;
  double best_f = kInf;
  for (const auto& s0 : starts) {
    auto [x, f] = nm.run(objective, s0, 0.7);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }
  if (!std::isfinite(best_f)) return out;

  sizes_from_x(family, best_x, sizes);
  const double unit_cost = [&] {
    double c = ws[0] * sizes[0];
    for (int m = 1; m <= K; ++m) {
      double evals = sizes[static_cast<std::size_t>(m)];
      if (family == EstimatorFamily::ACVIS) evals = sizes[0] + sizes[static_cast<std::size_t>(m)];
      if (family == EstimatorFamily::MLMC) evals = sizes[static_cast<std::size_t>(m - 1)] + sizes[static_cast<std::size_t>(m)];
      c += ws[static_cast<std::size_t>(m)] * evals;
    }
    return c;
  }();
  // The budget shed below trims oversized entries when the optimizer ran to
  // a flat asymptote, so clamp the scale at one high-fidelity sample.
  const double scale = std::max(1.0, budget / unit_cost);
  std::vector<double> csizes(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) csizes[i] = sizes[i] * scale;

  auto integer = integerize(family, csizes, ws, budget);
  if (!integer.feasible) return out;

  // Exact integer-design evaluation through the group algebra.
  Eigen::VectorXd alpha;
  double variance;
  try {
    const auto cc = component_covariances(Cs, integer.allocation);
    if (family == EstimatorFamily::MLMC) {
      alpha = Eigen::VectorXd::Constant(K, -1.0);
      variance = estimator_variance_at(Cs, integer.allocation, alpha);
    } else {
      alpha = optimal_weights(cc.cov_dd, cc.cov_d0);
      variance = cc.var_q0 + cc.cov_d0.dot(alpha);
    }
  } catch (const NumericalError&) {
    return out;
  }
  if (!std::isfinite(variance) || variance <= 0.0) return out;

  out.valid = true;
  out.variance = variance;
  out.cost = estimator_cost(ws, integer.allocation);
  out.n_models = K;
  out.design.family = family;
  out.design.active_models = subset;
  out.design.allocation = std::move(integer.allocation);
  out.design.alpha = std::move(alpha);
  out.design.n_in.assign(n_in_all.begin(), n_in_all.end());
  out.design.projected_variance = variance;
  out.design.projected_cost = out.cost;
  return out;
}

}  // namespace

EstimatorDesign optimize_allocation(const Eigen::MatrixXd& C, std::span<const double> w, const BudgetSpec& budget,
                                    std::span<const EstimatorFamily> families, std::span<const index_t> n_in_all) {
  const int M = static_cast<int>(C.rows()) - 1;
  if (C.rows() != C.cols() || M < 0) throw ConfigError("optimize_allocation: bad covariance matrix");
  if (static_cast<int>(w.size()) != M + 1) throw ConfigError("optimize_allocation: cost vector size mismatch");
  for (double wm : w)
    if (!(wm > 0.0)) throw ConfigError("optimize_allocation: costs must be positive");
  if (budget.w_budget < w[0]) throw NumericalError("budget cannot afford a single high-fidelity sample");

  CandidateOutcome best;
  // Plain MC is always in the candidate set.
  {
    const index_t n0 = static_cast<index_t>(std::floor(budget.w_budget / w[0]));
    AllocationMatrix A;
    AllocationMatrix::Group g;
    g.size = n0;
    g.in_z0 = true;
    A.groups.push_back(g);
    best.valid = true;
    best.variance = C(0, 0) / static_cast<double>(n0);
    best.cost = static_cast<double>(n0) * w[0];
    best.n_models = 0;
    best.design.family = EstimatorFamily::MC;
    best.design.allocation = std::move(A);
    best.design.alpha = Eigen::VectorXd();
    best.design.n_in.assign(n_in_all.begin(), n_in_all.end());
    best.design.projected_variance = best.variance;
    best.design.projected_cost = best.cost;
  }

  // Low-fidelity model subsets: everything for M <= 4, the full set beyond.
  std::vector<std::vector<int>> subsets;
  if (M >= 1) {
    if (M <= 4) {
      for (unsigned mask = 1; mask < (1u << M); ++mask) {
        std::vector<int> s;
        for (int m = 1; m <= M; ++m)
          if (mask & (1u << (m - 1))) s.push_back(m);
        subsets.push_back(std::move(s));
      }
      std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
        if (a.size() != b.size()) return a.size() < b.size();
        return a < b;
      });
    } else {
      std::vector<int> all;
      for (int m = 1; m <= M; ++m) all.push_back(m);
      subsets.push_back(std::move(all));
    }
  }

  auto consider = [&](CandidateOutcome&& cand) {
    if (!cand.valid) return;
    const bool better = cand.variance < best.variance ||
                        (cand.variance == best.variance && cand.cost < best.cost) ||
                        (cand.variance == best.variance && cand.cost == best.cost && cand.n_models < best.n_models);
    if (better) best = std::move(cand);
  };

  for (const EstimatorFamily family : families) {
    if (family == EstimatorFamily::MC) continue;
    for (const auto& subset : subsets)
      consider(optimize_family_subset(family, subset, C, w, budget.w_budget, n_in_all));
  }
  return best.design;
}

// ---------------------------------------------------------------------------
// Pilot evaluation cache
// ---------------------------------------------------------------------------

namespace {

// logsumexp over ascending prefixes of l; cuts ascending, out[k] gets
// logsumexp(l[0:cuts[k]]).
void prefix_logsumexp(const double* l, std::span<const index_t> cuts, double* out) {
  const auto& ops = kernels::active_ops();
  double run_max = -kInf;
  double run_sum = 0.0;
  index_t pos = 0;
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    const index_t c = cuts[k];
    if (c > pos) {
      const std::size_t len = static_cast<std::size_t>(c - pos);
      const double smax = ops.max(l + pos, len);
      const double ssum = ops.exp_sum(l + pos, len, smax);
      if (run_sum == 0.0) {
        run_max = smax;
        run_sum = ssum;
      } else if (smax > run_max) {
        run_sum = run_sum * std::exp(run_max - smax) + ssum;
        run_max = smax;
      } else {
        run_sum += ssum * std::exp(smax - run_max);
      }
      pos = c;
    }
    out[k] = run_max + std::log(run_sum);
  }
}

}  // namespace

PilotEvaluations::PilotEvaluations(std::vector<UtilityModelSpec> specs, std::vector<DesignPoint> designs,
                                   index_t n_pilot, const RngStream& rng, const NoiseSpec& noise,
                                   const PriorSpec& prior, index_t n_in_0, int workers)
    : specs_(std::move(specs)),
      designs_(std::move(designs)),
      n_pilot_(n_pilot),
      n_in_0_(n_in_0),
      rng_(rng),
      noise_(&noise),
      prior_(&prior),
      workers_(workers) {
  if (specs_.empty()) throw ConfigError("pilot needs at least one utility model");
  const int M = static_cast<int>(specs_.size()) - 1;
  if (n_pilot_ < M + 2) throw ConfigError("pilot needs N_pilot >= M + 2 for a well-defined sample covariance");
  if (designs_.empty()) throw ConfigError("pilot needs at least one design");
  reuse_ = specs_.front().reuse_inner;
  for (const auto& s : specs_)
    if (s.reuse_inner != reuse_) throw ConfigError("utility models disagree on inner-loop reuse");
  specs_[0].n_in = n_in_0_;
  values_.resize(specs_.size());
  measured_wg_.assign(specs_.size(), 0.0);
  measured_evals_.assign(specs_.size(), 0.0);
  // The high-fidelity row is always evaluated at its fixed inner size.
  ensure_values(std::vector<std::vector<index_t>>(1, std::vector<index_t>{n_in_0_}));
}

void PilotEvaluations::prepare(std::span<const std::vector<index_t>> axis_values) {
  std::vector<std::vector<index_t>> req(specs_.size());
  req[0] = {n_in_0_};
  if (axis_values.size() != specs_.size() - 1)
    throw ConfigError("pilot prepare: one axis per low-fidelity model required");
  for (std::size_t m = 1; m < specs_.size(); ++m) req[m] = axis_values[m - 1];
  ensure_values(req);
}

const std::vector<double>& PilotEvaluations::row(int model, index_t n_in) const {
  for (const auto& [v, data] : values_[static_cast<std::size_t>(model)])
    if (v == n_in) return data;
  throw ConfigError("pilot cache miss for model " + std::to_string(model) + " at n_in " + std::to_string(n_in));
}

void PilotEvaluations::ensure_values(const std::vector<std::vector<index_t>>& requested) {
  // Collect missing (model, n_in) pairs.
  std::vector<std::vector<index_t>> missing(specs_.size());
  bool any = false;
  for (std::size_t m = 0; m < requested.size() && m < specs_.size(); ++m) {
    for (index_t v : requested[m]) {
      if (v < 1) throw ConfigError("inner sizes must be >= 1");
      bool have = false;
      for (const auto& [have_v, data] : values_[m])
        if (have_v == v) {
          have = true;
          break;
        }
      if (!have && std::find(missing[m].begin(), missing[m].end(), v) == missing[m].end()) {
        missing[m].push_back(v);
        any = true;
      }
    }
  }
  if (!any) return;
  for (auto& mv : missing) std::sort(mv.begin(), mv.end());

  const index_t n_designs = static_cast<index_t>(designs_.size());
  const int n_models = static_cast<int>(specs_.size());
  // Allocate destination rows first, then resolve stable pointers.
  std::vector<std::vector<std::vector<double>*>> dest(specs_.size());
  for (std::size_t m = 0; m < specs_.size(); ++m) {
    const std::size_t first = values_[m].size();
    for (index_t v : missing[m])
      values_[m].emplace_back(v, std::vector<double>(static_cast<std::size_t>(n_designs * n_pilot_)));
    for (std::size_t s = first; s < values_[m].size(); ++s) dest[m].push_back(&values_[m][s].second);
  }

  std::vector<index_t> max_rows(specs_.size(), 0);
  for (std::size_t m = 0; m < specs_.size(); ++m)
    if (!missing[m].empty()) max_rows[m] = missing[m].back();
  index_t shared_rows = 0;
  for (index_t v : max_rows) shared_rows = std::max(shared_rows, v);

  // Pilot batches are drawn per design and shared across models.
  std::vector<SampleBatch> batches(static_cast<std::size_t>(n_designs));
  for (index_t k = 0; k < n_designs; ++k)
    batches[static_cast<std::size_t>(k)] = SampleBatch::draw(*prior_, *noise_, designs_[static_cast<std::size_t>(k)].index,
                                                             rng_.child(static_cast<std::uint64_t>(k)), n_pilot_);

  constexpr index_t kBlock = 64;
  const index_t blocks_per_design = (n_pilot_ + kBlock - 1) / kBlock;
  const index_t n_tasks = n_designs * blocks_per_design;

  // Per-thread timing accumulators (seconds, evals) per model.
  const std::size_t nthreads = static_cast<std::size_t>(std::max(1, resolve_workers(workers_)));
  std::vector<std::vector<double>> secs(nthreads, std::vector<double>(specs_.size(), 0.0));
  std::vector<std::vector<double>> evals(nthreads, std::vector<double>(specs_.size(), 0.0));

  parallel_for_blocks(n_tasks, workers_, [&](index_t task, int tid) {
    UtilityScratch scratch;
    std::vector<double> inner;
    std::vector<double> lse(16), u_tmp(16);
    const index_t k = task / blocks_per_design;
    const index_t b = task % blocks_per_design;
    const index_t i_begin = b * kBlock;
    const index_t i_end = std::min(n_pilot_, i_begin + kBlock);
    const auto& design = designs_[static_cast<std::size_t>(k)];
    const auto& batch = batches[static_cast<std::size_t>(k)];
    const auto design_root = rng_.child(static_cast<std::uint64_t>(k));
    const auto inner_root = design_root.child(kInnerStreamLabel);
    const index_t dim = prior_->dim();

    // Per-(model) contexts at this design.
    std::vector<detail::ModelDesignCtx> ctx;
    ctx.reserve(specs_.size());
    for (const auto& s : specs_) ctx.push_back(detail::ModelDesignCtx::make(s, design, *noise_, *prior_));

    for (index_t i = i_begin; i < i_end; ++i) {
      const std::span<const double> theta{batch.theta.row(i), static_cast<std::size_t>(batch.theta.cols())};
      const std::span<const double> eps{batch.eps.row(i), static_cast<std::size_t>(batch.eps.cols())};
      if (reuse_) {
        inner.resize(static_cast<std::size_t>(shared_rows * dim));
        prior_->sample_rows(derive_child_key(inner_root.raw(), static_cast<std::uint64_t>(i)), 0, shared_rows,
                            inner.data());
      }
      for (int m = 0; m < n_models; ++m) {
        if (missing[static_cast<std::size_t>(m)].empty()) continue;
        const auto& cuts = missing[static_cast<std::size_t>(m)];
        const index_t rows = max_rows[static_cast<std::size_t>(m)];
        const double* inner_ptr;
        if (reuse_) {
          inner_ptr = inner.data();
        } else {
          scratch.theta_rows.resize(static_cast<std::size_t>(rows * dim));
          prior_->sample_rows(
              derive_child_key(derive_child_key(inner_root.raw(), static_cast<std::uint64_t>(specs_[static_cast<std::size_t>(m)].model.id())),
                               static_cast<std::uint64_t>(i)),
              0, rows, scratch.theta_rows.data());
          inner_ptr = scratch.theta_rows.data();
        }
        const auto t0 = std::chrono::steady_clock::now();
        // Log-likelihood terms for all rows once, then prefix logsumexp.
        double numerator;
        {
          const auto& c = ctx[static_cast<std::size_t>(m)];
          const auto& ops = kernels::active_ops();
          scratch.l.resize(static_cast<std::size_t>(rows));
          if (c.fast) {
            detail::fill_power_cache(c.poly.power_kind, inner_ptr, rows, scratch);
            const double t = theta[0];
            double tp = 0.0;
            switch (c.poly.power_kind) {
              case 3: tp = t * t * t; break;
              case 25: tp = t * t * std::sqrt(t); break;
              case 2: tp = t * t; break;
            }
            const double g_theta = c.poly.a * tp + c.poly.b * t + c.poly.shift;
            if (c.spec->form == NoiseForm::additive) {
              const double y = g_theta + eps[0];
              numerator = -(eps[0] * eps[0]) * c.half_inv_var;
              ops.loglik_additive_poly(y, scratch.power.data(), inner_ptr, static_cast<std::size_t>(rows), c.poly.a,
                                       c.poly.b, c.poly.shift, c.half_inv_var, scratch.l.data());
            } else {
              if (g_theta == 0.0)
                throw NumericalError("scaled data model is non-invertible at a pilot draw (g = 0)");
              const double y = g_theta * (1.0 + eps[0]);
              numerator = -(eps[0] * eps[0]) * c.half_inv_var - std::log(std::fabs(g_theta));
              double min_abs_g;
              ops.loglik_scaled_poly(y, scratch.power.data(), inner_ptr, static_cast<std::size_t>(rows), c.poly.a,
                                     c.poly.b, c.poly.shift, c.half_inv_var, scratch.l.data(), &min_abs_g);
              if (min_abs_g == 0.0)
                throw NumericalError("scaled data model is non-invertible at a pilot draw (g = 0)");
            }
          } else {
            const auto& spec = *c.spec;
            const auto y = simulate_data(spec.model, spec.form, theta, design, eps);
            numerator = noise_->log_density(design.index, eps);
            if (spec.form == NoiseForm::scaled) {
              const auto gv = spec.model.eval(theta, design);
              for (double gi : gv) {
                if (gi == 0.0) throw NumericalError("scaled data model is non-invertible at this theta (g = 0)");
                numerator -= std::log(std::fabs(gi));
              }
            }
            for (index_t j = 0; j < rows; ++j) {
              const auto inv = inverse_noise(spec.model, spec.form, y,
                                             {inner_ptr + j * dim, static_cast<std::size_t>(dim)}, design);
              scratch.l[static_cast<std::size_t>(j)] = noise_->log_density(design.index, inv.eps) + inv.log_abs_det_jinv;
            }
          }
          lse.resize(cuts.size());
          prefix_logsumexp(scratch.l.data(), cuts, lse.data());
        }
        const auto t1 = std::chrono::steady_clock::now();
        secs[static_cast<std::size_t>(tid)][static_cast<std::size_t>(m)] +=
            std::chrono::duration<double>(t1 - t0).count();
        evals[static_cast<std::size_t>(tid)][static_cast<std::size_t>(m)] += static_cast<double>(rows + 1);

        for (std::size_t ci = 0; ci < cuts.size(); ++ci) {
          const double u = numerator - lse[ci] + std::log(static_cast<double>(cuts[ci]));
          if (!std::isfinite(u))
            throw NumericalError("pilot utility evaluation produced a non-finite value");
          (*dest[static_cast<std::size_t>(m)][ci])[static_cast<std::size_t>(k * n_pilot_ + i)] = u;
        }
      }
    }
  });

  for (std::size_t m = 0; m < specs_.size(); ++m) {
    double total_secs = 0.0, total_evals = 0.0;
    for (std::size_t t = 0; t < secs.size(); ++t) {
      total_secs += secs[t][m];
      total_evals += evals[t][m];
    }
    if (total_evals > 0.0) {
      // Running average over everything measured so far.
      const double prev_evals = measured_evals_[m];
      const double prev_secs = measured_wg_[m] * prev_evals;
      measured_evals_[m] = prev_evals + total_evals;
      measured_wg_[m] = (prev_secs + total_secs) / measured_evals_[m];
    }
  }
}

std::pair<Eigen::MatrixXd, std::vector<double>> PilotEvaluations::at(std::span<const index_t> n_in_lowfi) {
  const int M = static_cast<int>(specs_.size()) - 1;
  if (static_cast<int>(n_in_lowfi.size()) != M) throw ConfigError("pilot at(): need one inner size per low-fi model");
  std::vector<std::vector<index_t>> req(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) req[static_cast<std::size_t>(m)] = {n_in_lowfi[static_cast<std::size_t>(m)]};
  prepare(req);

  const auto per_design = sigma_per_design(n_in_lowfi);
  Eigen::MatrixXd bar = Eigen::MatrixXd::Zero(M + 1, M + 1);
  for (const auto& s : per_design) bar += s;
  bar /= static_cast<double>(per_design.size());

  std::vector<double> w(specs_.size());
  w[0] = static_cast<double>(n_in_0_ + 1) * specs_[0].model.cost_g();
  for (int m = 1; m <= M; ++m)
    w[static_cast<std::size_t>(m)] =
        static_cast<double>(n_in_lowfi[static_cast<std::size_t>(m - 1)] + 1) * specs_[static_cast<std::size_t>(m)].model.cost_g();
  return {bar, w};
}

Eigen::MatrixXd sample_covariance(std::span<const double* const> columns, index_t n) {
  const int M1 = static_cast<int>(columns.size());
  if (n < 2) throw ConfigError("sample covariance needs at least two rows");
  std::vector<double> mean(static_cast<std::size_t>(M1));
  for (int a = 0; a < M1; ++a)
    mean[static_cast<std::size_t>(a)] =
        kernels::active_ops().sum(columns[static_cast<std::size_t>(a)], static_cast<std::size_t>(n)) / static_cast<double>(n);
  Eigen::MatrixXd S(M1, M1);
  for (int a = 0; a < M1; ++a) {
    const double* ua = columns[static_cast<std::size_t>(a)];
    for (int b = a; b < M1; ++b) {
      const double* ub = columns[static_cast<std::size_t>(b)];
      double acc = 0.0;
      for (index_t i = 0; i < n; ++i)
        acc += (ua[i] - mean[static_cast<std::size_t>(a)]) * (ub[i] - mean[static_cast<std::size_t>(b)]);
      S(a, b) = S(b, a) = acc / static_cast<double>(n - 1);
    }
  }
  return S;
}

std::vector<Eigen::MatrixXd> PilotEvaluations::sigma_per_design(std::span<const index_t> n_in_lowfi) {
  const int M = static_cast<int>(specs_.size()) - 1;
  {
    std::vector<std::vector<index_t>> full(specs_.size());
    full[0] = {n_in_0_};
    for (int m = 1; m <= M; ++m) full[static_cast<std::size_t>(m)] = {n_in_lowfi[static_cast<std::size_t>(m - 1)]};
    ensure_values(full);
  }
  std::vector<const std::vector<double>*> rows(specs_.size());
  rows[0] = &row(0, n_in_0_);
  for (int m = 1; m <= M; ++m) rows[static_cast<std::size_t>(m)] = &row(m, n_in_lowfi[static_cast<std::size_t>(m - 1)]);

  const index_t n_designs = static_cast<index_t>(designs_.size());
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(n_designs));
  std::vector<const double*> cols(specs_.size());
  for (index_t k = 0; k < n_designs; ++k) {
    for (int a = 0; a <= M; ++a) cols[static_cast<std::size_t>(a)] = rows[static_cast<std::size_t>(a)]->data() + k * n_pilot_;
    out.push_back(sample_covariance(cols, n_pilot_));
  }
  return out;
}

std::vector<std::uint8_t> PilotEvaluations::degenerate(std::span<const index_t> n_in_lowfi) {
  const auto per_design = sigma_per_design(n_in_lowfi);
  std::vector<std::uint8_t> flags(per_design.size(), 0);
  for (std::size_t k = 0; k < per_design.size(); ++k)
    for (int m = 0; m < per_design[k].rows(); ++m)
      if (per_design[k](m, m) == 0.0) flags[k] = 1;
  return flags;
}

std::vector<double> PilotEvaluations::rho0(std::span<const index_t> n_in_lowfi) {
  const auto per_design = sigma_per_design(n_in_lowfi);
  const int M = static_cast<int>(specs_.size()) - 1;
  std::vector<double> rho(specs_.size(), 0.0);
  rho[0] = 1.0;
  for (int m = 1; m <= M; ++m) {
    double acc = 0.0;
    index_t n = 0;
    for (const auto& S : per_design) {
      const double denom = std::sqrt(S(0, 0) * S(m, m));
      if (denom > 0.0) {
        acc += S(0, m) / denom;
        ++n;
      }
    }
    rho[static_cast<std::size_t>(m)] = n > 0 ? acc / static_cast<double>(n) : 0.0;
  }
  return rho;
}

PilotResult PilotEvaluations::pilot_result(std::span<const index_t> n_in_lowfi) {
  PilotResult r;
  r.designs = designs_;
  r.n_pilot = n_pilot_;
  r.n_in.push_back(n_in_0_);
  for (index_t v : n_in_lowfi) r.n_in.push_back(v);
  auto [bar, w] = at(n_in_lowfi);
  r.sigma_bar = std::move(bar);
  r.cost_w = std::move(w);
  r.sigma_per_design = sigma_per_design(n_in_lowfi);
  r.measured_wg = measured_wg_;
  r.degenerate = degenerate(n_in_lowfi);
  r.rho0 = rho0(n_in_lowfi);
  return r;
}

PilotResult run_pilot(const std::vector<UtilityModelSpec>& specs, const std::vector<DesignPoint>& designs,
                      index_t n_pilot, const RngStream& rng, const NoiseSpec& noise, const PriorSpec& prior,
                      int workers) {
  if (specs.empty()) throw ConfigError("run_pilot: no utility models");
  PilotEvaluations cache(specs, designs, n_pilot, rng, noise, prior, specs[0].n_in, workers);
  std::vector<index_t> lowfi;
  for (std::size_t m = 1; m < specs.size(); ++m) lowfi.push_back(specs[m].n_in);
  return cache.pilot_result(lowfi);
}

// ---------------------------------------------------------------------------
// Inner-loop size search
// ---------------------------------------------------------------------------

namespace {

struct EvaluatedCandidate {
  std::vector<index_t> n_in_lowfi;
  EstimatorDesign design;
  bool valid = false;
};

std::vector<EvaluatedCandidate> evaluate_lattice(PilotCovarianceSource& pilot,
                                                 const std::vector<std::vector<index_t>>& axes,
                                                 const BudgetSpec& budget,
                                                 std::span<const EstimatorFamily> families, index_t n_in_0,
                                                 int workers) {
  pilot.prepare(axes);
  const int K = static_cast<int>(axes.size());
  index_t count = 1;
  for (const auto& a : axes) {
    if (a.empty()) throw ConfigError("inner-size search: empty candidate axis");
    count *= static_cast<index_t>(a.size());
    if (count > 2'000'000) throw ConfigError("inner-size search lattice too large");
  }
  // Gather covariance and cost per candidate serially (the source may cache),
  // then optimize allocations in parallel.
  std::vector<EvaluatedCandidate> cands(static_cast<std::size_t>(count));
  std::vector<Eigen::MatrixXd> sigmas(static_cast<std::size_t>(count));
  std::vector<std::vector<double>> costs(static_cast<std::size_t>(count));
  for (index_t c = 0; c < count; ++c) {
    std::vector<index_t> v(static_cast<std::size_t>(K));
    index_t rem = c;
    for (int k = K - 1; k >= 0; --k) {
      const auto& axis = axes[static_cast<std::size_t>(k)];
      v[static_cast<std::size_t>(k)] = axis[static_cast<std::size_t>(rem % static_cast<index_t>(axis.size()))];
      rem /= static_cast<index_t>(axis.size());
    }
    cands[static_cast<std::size_t>(c)].n_in_lowfi = v;
    auto [sigma, w] = pilot.at(v);
    sigmas[static_cast<std::size_t>(c)] = std::move(sigma);
    costs[static_cast<std::size_t>(c)] = std::move(w);
  }
  parallel_for_blocks(count, workers, [&](index_t c, int) {
    auto& cand = cands[static_cast<std::size_t>(c)];
    std::vector<index_t> n_in_all;
    n_in_all.push_back(n_in_0);
    for (index_t v : cand.n_in_lowfi) n_in_all.push_back(v);
    try {
      cand.design = optimize_allocation(sigmas[static_cast<std::size_t>(c)], costs[static_cast<std::size_t>(c)],
                                        budget, families, n_in_all);
      cand.valid = true;
    } catch (const NumericalError&) {
      cand.valid = false;
    }
  });
  return cands;
}

}  // namespace

InnerSizeResult optimize_inner_sizes(PilotCovarianceSource& pilot, const BudgetSpec& budget,
                                     std::span<const EstimatorFamily> families, const InnerSearchSpec& search,
                                     int workers) {
  InnerSizeResult result;
  const index_t n_in_0 = budget.n_in_0;

  auto pick_best = [](const std::vector<EvaluatedCandidate>& cands) -> const EvaluatedCandidate* {
    const EvaluatedCandidate* best = nullptr;
    for (const auto& c : cands) {
      if (!c.valid) continue;
      if (best == nullptr || c.design.projected_variance < best->design.projected_variance) best = &c;
    }
    return best;
  };

  if (search.strategy == SearchStrategy::grid) {
    if (search.grid_axes.empty()) throw ConfigError("grid search requires candidate axes");
    const auto cands = evaluate_lattice(pilot, search.grid_axes, budget, families, n_in_0, workers);
    const auto* best = pick_best(cands);
    if (best == nullptr) throw NumericalError("inner-size search found no feasible candidate");
    result.n_in.push_back(n_in_0);
    for (index_t v : best->n_in_lowfi) result.n_in.push_back(v);
    result.design = best->design;
    if (search.grid_axes.size() == 2) {
      const index_t r = static_cast<index_t>(search.grid_axes[0].size());
      const index_t cc = static_cast<index_t>(search.grid_axes[1].size());
      result.surface = Matrix(r, cc);
      for (index_t i = 0; i < r; ++i)
        for (index_t j = 0; j < cc; ++j) {
          const auto& cand = cands[static_cast<std::size_t>(i * cc + j)];
          result.surface(i, j) = cand.valid ? cand.design.projected_variance : kInf;
        }
    }
    return result;
  }

  // Coarse-to-fine rectangle refinement over the integer box.
  if (budget.n_in_box.empty()) throw ConfigError("coarse-to-fine search requires an n_in box");
  const int K = static_cast<int>(budget.n_in_box.size());
  std::vector<std::pair<index_t, index_t>> box = budget.n_in_box;
  for (const auto& [lo, hi] : box)
    if (lo < 1 || hi < lo) throw ConfigError("invalid n_in search box");

  const EvaluatedCandidate* incumbent = nullptr;
  std::vector<EvaluatedCandidate> kept;
  for (int round = 0; round < std::max(1, search.cf_rounds); ++round) {
    std::vector<std::vector<index_t>> axes(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      const auto [lo, hi] = box[static_cast<std::size_t>(k)];
      const int pts = std::max(2, search.cf_points);
      std::vector<index_t> axis;
      for (int p = 0; p < pts; ++p) {
        const double frac = static_cast<double>(p) / static_cast<double>(pts - 1);
        axis.push_back(lo + static_cast<index_t>(std::llround(frac * static_cast<double>(hi - lo))));
      }
      std::sort(axis.begin(), axis.end());
      axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
      axes[static_cast<std::size_t>(k)] = std::move(axis);
    }
    auto cands = evaluate_lattice(pilot, axes, budget, families, n_in_0, workers);
    for (auto& c : cands)
      if (c.valid) kept.push_back(std::move(c));
    incumbent = nullptr;
    for (const auto& c : kept)
      if (incumbent == nullptr || c.design.projected_variance < incumbent->design.projected_variance) incumbent = &c;
    if (incumbent == nullptr) throw NumericalError("inner-size search found no feasible candidate");
    // Shrink the box around the incumbent.
    bool can_shrink = false;
    for (int k = 0; k < K; ++k) {
      const auto [lo, hi] = box[static_cast<std::size_t>(k)];
      const index_t center = incumbent->n_in_lowfi[static_cast<std::size_t>(k)];
      const index_t width = hi - lo;
      const index_t half = std::max<index_t>(2, width / (2 * std::max(2, search.cf_points) - 2));
      const index_t new_lo = std::max(budget.n_in_box[static_cast<std::size_t>(k)].first, center - half);
      const index_t new_hi = std::min(budget.n_in_box[static_cast<std::size_t>(k)].second, center + half);
      if (new_hi - new_lo < width) can_shrink = true;
      box[static_cast<std::size_t>(k)] = {new_lo, new_hi};
    }
    if (!can_shrink) break;
  }
  result.n_in.push_back(n_in_0);
  for (index_t v : incumbent->n_in_lowfi) result.n_in.push_back(v);
  result.design = incumbent->design;
  return result;
}

}  // namespace mfeig
