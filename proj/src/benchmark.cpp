#include "mfeig/benchmark.hpp"

namespace mfeig::bench {

namespace {

constexpr std::uint64_t kPilotLabel = 11;
// The baseline shares the sweep's trial streams, so baseline and MF-EIG
// estimates at the same trial see the same outer samples.
constexpr std::uint64_t kSweepLabel = 12;

}  // namespace

std::span<const EstimatorFamily> all_families() {
  static const EstimatorFamily fams[] = {EstimatorFamily::MC, EstimatorFamily::MFMC, EstimatorFamily::MLMC,
                                         EstimatorFamily::ACVMF, EstimatorFamily::ACVIS};
  return fams;
}

PriorSpec case1_prior() { return PriorSpec::independent_uniform({{0.0, 1.0}}); }

NoiseSpec case1_noise() { return NoiseSpec({1e-2}); }

std::vector<UtilityModelSpec> case1_specs(NoiseForm form, bool reuse, std::span<const index_t> n_in) {
  if (n_in.size() != 3) throw ConfigError("case1_specs expects inner sizes for all three models");
  const BenchmarkFn fns[3] = {BenchmarkFn::case1_g0, BenchmarkFn::case1_g1, BenchmarkFn::case1_g2};
  const double costs[3] = {1.0, 0.1, 0.01};
  std::vector<UtilityModelSpec> specs;
  for (int m = 0; m < 3; ++m) {
    UtilityModelSpec s;
    s.model = ForwardModel::benchmark(m, fns[m], costs[m]);
    s.form = form;
    s.n_in = n_in[static_cast<std::size_t>(m)];
    s.reuse_inner = reuse;
    specs.push_back(std::move(s));
  }
  return specs;
}

Case1Result run_case1(const Case1Options& opt) {
  Case1Result r;
  r.designs = linspace_designs(0.0, 1.0, opt.n_designs);
  const PriorSpec prior = case1_prior();
  const NoiseSpec noise = case1_noise();
  const RngStream root(opt.seed);

  BudgetSpec budget;
  budget.w_budget = opt.w_budget;
  budget.n_in_0 = opt.n_in_0;
  budget.n_in_box = {{opt.box_lo, opt.box_hi}, {opt.box_lo, opt.box_hi}};

  const std::vector<index_t> naive{opt.n_in_0, opt.n_in_0, opt.n_in_0};
  auto specs = case1_specs(opt.form, opt.reuse_inner, naive);

  PilotEvaluations pilot(specs, r.designs, opt.n_pilot, root.child(kPilotLabel), noise, prior, opt.n_in_0,
                         opt.workers);

  if (opt.optimize_n_in) {
    InnerSearchSpec search;
    search.strategy = SearchStrategy::grid;
    const auto axis = integer_axis(opt.box_lo, opt.box_hi, opt.grid_points);
    search.grid_axes = {axis, axis};
    auto found = optimize_inner_sizes(pilot, budget, all_families(), search, opt.workers);
    r.n_in = found.n_in;
    r.design = found.design;
    r.search_surface = std::move(found.surface);
  } else {
    r.n_in = naive;
    auto [sigma, w] = pilot.at(std::span<const index_t>(naive).subspan(1));
    r.design = optimize_allocation(sigma, w, budget, all_families(), r.n_in);
  }
  r.pilot = pilot.pilot_result(std::span<const index_t>(r.n_in).subspan(1));

  // Final ensemble at the selected inner sizes.
  r.specs = case1_specs(opt.form, opt.reuse_inner, r.n_in);

  r.mf = run_sweep(r.designs, r.design, r.specs, opt.n_trials, root.child(kSweepLabel), noise, prior, opt.workers);
  const double w0 = static_cast<double>(opt.n_in_0 + 1) * 1.0;
  r.baseline_n_out = baseline_n_out(opt.w_budget, w0);
  r.baseline = run_baseline_nmc(r.designs, r.baseline_n_out, r.specs[0], opt.n_trials, root.child(kSweepLabel),
                                noise, prior, opt.workers);
  r.report = reduction_report(r.baseline, r.mf);
  return r;
}

}  // namespace mfeig::bench
