#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfeig/benchmark.hpp"
#include "mfeig/config.hpp"
#include "mfeig/io.hpp"
#include "mfeig/kernels/kernels.hpp"

namespace {

using namespace mfeig;

constexpr std::uint64_t kPilotLabel = 11;
constexpr std::uint64_t kSweepLabel = 12;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<DesignPoint> pilot_designs(const RunConfig& cfg) {
  if (cfg.pilot_design_indices.empty()) return cfg.designs;
  std::vector<DesignPoint> out;
  for (int k : cfg.pilot_design_indices) out.push_back(cfg.designs[static_cast<std::size_t>(k)]);
  return out;
}

// Swaps measured per-evaluation costs into the ensemble when requested.
void apply_cost_source(RunConfig& cfg, const std::vector<double>& measured_wg) {
  if (cfg.cost_source != "measured") return;
  for (std::size_t m = 0; m < cfg.ensemble.size(); ++m) {
    if (m < measured_wg.size() && measured_wg[m] > 0.0) cfg.ensemble[m].model.set_cost_g(measured_wg[m]);
  }
}

void print_pilot_table(const PilotResult& pilot) {
  std::printf("pilot: %lld samples at %zu designs\n", static_cast<long long>(pilot.n_pilot), pilot.designs.size());
  std::printf("%-8s %-10s %-14s %-14s %-14s\n", "model", "n_in", "cost w_m", "measured w^g", "rho(u_m,u_0)");
  for (std::size_t m = 0; m < pilot.cost_w.size(); ++m) {
    std::printf("u_%-6zu %-10lld %-14.6g %-14.6g %-14.6g\n", m, static_cast<long long>(pilot.n_in[m]),
                pilot.cost_w[m], m < pilot.measured_wg.size() ? pilot.measured_wg[m] : 0.0,
                m < pilot.rho0.size() ? pilot.rho0[m] : 0.0);
  }
  std::size_t flagged = 0;
  for (auto f : pilot.degenerate) flagged += f;
  if (flagged > 0) std::printf("note: %zu designs had a degenerate (zero-variance) utility model\n", flagged);
}

int cmd_pilot(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  const auto dir = ensure_dir(out_dir.empty() ? cfg.output_dir : out_dir);
  const RngStream root(cfg.master_seed);
  const auto designs = pilot_designs(cfg);
  const auto pilot =
      run_pilot(cfg.ensemble, designs, cfg.n_pilot, root.child(kPilotLabel), cfg.noise, cfg.prior, cfg.workers);
  io::write_pilot_json((dir / "pilot.json").string(), pilot, cfg.cost_source == "measured");
  print_pilot_table(pilot);
  std::printf("wrote %s\n", (dir / "pilot.json").c_str());
  return 0;
}

int cmd_design(const std::string& config_path, const std::string& pilot_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  const auto dir = ensure_dir(out_dir.empty() ? cfg.output_dir : out_dir);
  const PilotResult pilot = io::read_pilot_json(pilot_path);
  if (static_cast<std::size_t>(pilot.sigma_bar.rows()) != cfg.ensemble.size())
    throw ConfigError("pilot file covers a different model ensemble than the config");
  apply_cost_source(cfg, pilot.measured_wg);

  const std::span<const EstimatorFamily> families =
      cfg.families.empty() ? bench::all_families() : std::span<const EstimatorFamily>(cfg.families);
  EstimatorDesign design;
  if (cfg.fixed_n_in) {
    // Use the pilot file directly; its inner sizes must match.
    std::vector<index_t> n_in_all{cfg.budget.n_in_0};
    for (index_t v : *cfg.fixed_n_in) n_in_all.push_back(v);
    if (pilot.n_in != n_in_all)
      throw ConfigError("pilot file was evaluated at different inner sizes than the config requests");
    design = optimize_allocation(pilot.sigma_bar, pilot.cost_w, cfg.budget, families, n_in_all);
  } else {
    // Inner-size search: pilot evaluations are recreated deterministically
    // from the config seed (the pilot file stays the portable record).
    if (cfg.budget.n_in_box.empty()) throw ConfigError("inner-size search needs budget.n_in_search_box");
    const RngStream root(cfg.master_seed);
    const auto designs = pilot_designs(cfg);
    PilotEvaluations cache(cfg.ensemble, designs, cfg.n_pilot, root.child(kPilotLabel), cfg.noise, cfg.prior,
                           cfg.budget.n_in_0, cfg.workers);
    InnerSearchSpec search;
    search.strategy = cfg.strategy;
    if (cfg.strategy == SearchStrategy::grid) {
      for (const auto& [lo, hi] : cfg.budget.n_in_box)
        search.grid_axes.push_back(integer_axis(lo, hi, cfg.grid_points));
    }
    auto found = optimize_inner_sizes(cache, cfg.budget, families, search, cfg.workers);
    design = found.design;
  }

  io::write_design_json((dir / "design.json").string(), design);
  const index_t n0_mc = static_cast<index_t>(std::floor(cfg.budget.w_budget / pilot.cost_w[0]));
  const double mc_var = pilot.sigma_bar(0, 0) / static_cast<double>(n0_mc);
  std::printf("design: family=%s models=%zu projected variance=%.6g cost=%.6g\n", family_name(design.family),
              design.active_models.size(), design.projected_variance, design.projected_cost);
  std::printf("MC at equal budget: variance=%.6g  projected reduction ratio=%.4g\n", mc_var,
              mc_var / design.projected_variance);
  std::printf("wrote %s\n", (dir / "design.json").c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& design_path, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  const auto dir = ensure_dir(out_dir.empty() ? cfg.output_dir : out_dir);
  EstimatorDesign design = io::read_design_json(design_path);
  if (design.n_in.size() != cfg.ensemble.size())
    throw ConfigError("design file covers a different model ensemble than the config");
  for (std::size_t m = 0; m < cfg.ensemble.size(); ++m) cfg.ensemble[m].n_in = design.n_in[m];

  const RngStream root(cfg.master_seed);
  const auto mf =
      run_sweep(cfg.designs, design, cfg.ensemble, cfg.n_trials, root.child(kSweepLabel), cfg.noise, cfg.prior,
                cfg.workers);
  const index_t n_out = baseline_n_out(cfg.budget.w_budget, cfg.ensemble[0].cost());
  const auto baseline = run_baseline_nmc(cfg.designs, n_out, cfg.ensemble[0], cfg.n_trials, root.child(kSweepLabel),
                                         cfg.noise, cfg.prior, cfg.workers);
  const auto report = reduction_report(baseline, mf);

  io::write_sweep_csv((dir / "sweep.csv").string(), mf);
  io::write_sweep_csv((dir / "baseline.csv").string(), baseline);
  io::write_reduction_csv((dir / "reduction.csv").string(), report);
  io::SummaryInfo info;
  info.mf = &mf;
  info.baseline = &baseline;
  info.report = &report;
  info.n_in = design.n_in;
  info.family = family_name(design.family);
  io::write_summary_json((dir / "summary.json").string(), info);

  std::printf("sweep: %lld trials x %zu designs\n", static_cast<long long>(cfg.n_trials), cfg.designs.size());
  if (cfg.n_trials >= 2)
    std::printf("design-averaged variance: baseline=%.6g mf=%.6g ratio=%.4g\n", report.avg_baseline_var,
                report.avg_mf_var, report.avg_ratio);
  std::printf("xi* = design %lld\n", static_cast<long long>(report.argmax_index));
  std::printf("wrote %s, %s, %s, %s\n", (dir / "sweep.csv").c_str(), (dir / "baseline.csv").c_str(),
              (dir / "reduction.csv").c_str(), (dir / "summary.json").c_str());
  return 0;
}

int cmd_benchmark(const std::string& variant, const std::string& mode, bool reuse, std::uint64_t seed,
                  index_t n_trials, const std::string& out_dir, int workers) {
  bench::Case1Options opt;
  opt.form = variant == "scaled" ? NoiseForm::scaled : NoiseForm::additive;
  opt.optimize_n_in = (mode == "optimal");
  opt.reuse_inner = reuse;
  opt.seed = seed;
  opt.n_trials = n_trials;
  opt.workers = workers;
  const auto r = bench::run_case1(opt);

  const auto dir = ensure_dir(out_dir);
  io::write_pilot_json((dir / "pilot.json").string(), r.pilot, false);
  io::write_design_json((dir / "design.json").string(), r.design);
  io::write_sweep_csv((dir / "sweep.csv").string(), r.mf);
  io::write_sweep_csv((dir / "baseline.csv").string(), r.baseline);
  io::write_reduction_csv((dir / "reduction.csv").string(), r.report);
  io::SummaryInfo info;
  info.mf = &r.mf;
  info.baseline = &r.baseline;
  info.report = &r.report;
  info.n_in = r.n_in;
  info.family = family_name(r.design.family);
  io::write_summary_json((dir / "summary.json").string(), info);

  std::printf("benchmark: variant=%s mode=%s reuse=%s seed=%llu trials=%lld\n", variant.c_str(), mode.c_str(),
              reuse ? "on" : "off", static_cast<unsigned long long>(seed), static_cast<long long>(n_trials));
  std::printf("n_in = [%lld, %lld, %lld], family=%s, baseline N_out=%lld\n", static_cast<long long>(r.n_in[0]),
              static_cast<long long>(r.n_in[1]), static_cast<long long>(r.n_in[2]), family_name(r.design.family),
              static_cast<long long>(r.baseline_n_out));
  std::printf("%-34s %14s %14s\n", "", "baseline NMC", "MF-EIG");
  std::printf("%-34s %14.6g %14.6g\n", "variance (projected)",
              r.pilot.sigma_bar(0, 0) / static_cast<double>(r.baseline_n_out), r.design.projected_variance);
  std::printf("%-34s %14.6g %14.6g\n", "variance (empirical, design-avg)", r.report.avg_baseline_var,
              r.report.avg_mf_var);
  std::printf("%-34s %14s %14.4g\n", "variance reduction ratio (proj.)", "--",
              (r.pilot.sigma_bar(0, 0) / static_cast<double>(r.baseline_n_out)) / r.design.projected_variance);
  std::printf("%-34s %14s %14.4g\n", "variance reduction ratio (emp.)", "--", r.report.avg_ratio);
  std::printf("xi* = %.6g (design %lld)\n", r.report.argmax.scalar(), static_cast<long long>(r.report.argmax_index));
  std::printf("wrote results to %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity expected-information-gain estimation"};
  app.require_subcommand(1);

  std::string config_path, pilot_path, design_path, out_dir;
  std::string variant = "additive", mode = "naive";
  bool reuse = false;
  std::uint64_t seed = bench::Case1Options{}.seed;
  long long trials = 50;
  int workers = 0;
  std::string kernels_backend;

  app.add_option("--kernels", kernels_backend, "Kernel backend: auto|scalar|avx2");

  auto* pilot = app.add_subcommand("pilot", "Run pilot sampling and write pilot.json");
  pilot->add_option("-c,--config", config_path, "Run configuration JSON")->required();
  pilot->add_option("-o,--out", out_dir, "Output directory");

  auto* design = app.add_subcommand("design", "Optimize the estimator design from a pilot file");
  design->add_option("-c,--config", config_path, "Run configuration JSON")->required();
  design->add_option("-p,--pilot", pilot_path, "pilot.json from the pilot step")->required();
  design->add_option("-o,--out", out_dir, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Run the design-domain sweep for a frozen design");
  sweep->add_option("-c,--config", config_path, "Run configuration JSON")->required();
  sweep->add_option("-d,--design", design_path, "design.json from the design step")->required();
  sweep->add_option("-o,--out", out_dir, "Output directory");

  auto* bench_cmd = app.add_subcommand("benchmark", "Run the bundled nonlinear benchmark end to end");
  bench_cmd->add_option("--variant", variant, "additive|scaled")->check(CLI::IsMember({"additive", "scaled"}));
  bench_cmd->add_option("--mode", mode, "naive|optimal inner-loop sizes")->check(CLI::IsMember({"naive", "optimal"}));
  bench_cmd->add_flag("--reuse", reuse, "Share inner-loop draws across utility models");
  bench_cmd->add_option("--seed", seed, "Master seed");
  bench_cmd->add_option("--trials", trials, "Number of estimation trials");
  bench_cmd->add_option("--workers", workers, "Worker threads (0 = auto)");
  bench_cmd->add_option("-o,--out", out_dir, "Output directory")->default_val("bench_out");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!kernels_backend.empty()) mfeig::kernels::set_backend(kernels_backend.c_str());
    if (pilot->parsed()) return cmd_pilot(config_path, out_dir);
    if (design->parsed()) return cmd_design(config_path, pilot_path, out_dir);
    if (sweep->parsed()) return cmd_sweep(config_path, design_path, out_dir);
    if (bench_cmd->parsed())
      return cmd_benchmark(variant, mode, reuse, seed, static_cast<mfeig::index_t>(trials), out_dir, workers);
  } catch (const mfeig::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mfeig::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
