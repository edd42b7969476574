#include "mfeig/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mfeig {

namespace {

using nlohmann::json;

NoiseForm parse_form(const std::string& s) {
  if (s == "additive") return NoiseForm::additive;
  if (s == "scaled") return NoiseForm::scaled;
  throw ConfigError("noise form must be 'additive' or 'scaled', got '" + s + "'");
}

}  // namespace

std::vector<DesignPoint> linspace_designs(double lo, double hi, index_t n) {
  if (n < 1) throw ConfigError("design grid needs at least one point");
  std::vector<DesignPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) {
    DesignPoint p;
    const double frac = (n == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    p.value = {lo + frac * (hi - lo)};
    p.index = static_cast<int>(i);
    out.push_back(std::move(p));
  }
  return out;
}

index_t baseline_n_out(double w_budget, double w0) {
  if (!(w0 > 0.0)) throw ConfigError("baseline cost must be positive");
  const index_t n = static_cast<index_t>(std::ceil(w_budget / w0));
  if (n < 1) throw NumericalError("budget cannot afford a single high-fidelity sample");
  return n;
}

std::vector<index_t> integer_axis(index_t lo, index_t hi, index_t points) {
  if (lo < 1 || hi < lo || points < 1) throw ConfigError("invalid integer axis");
  std::vector<index_t> axis;
  for (index_t p = 0; p < points; ++p) {
    const double frac = (points == 1) ? 0.0 : static_cast<double>(p) / static_cast<double>(points - 1);
    axis.push_back(lo + static_cast<index_t>(std::llround(frac * static_cast<double>(hi - lo))));
  }
  axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
  return axis;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }

  RunConfig cfg;
  try {
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();

    // Designs: explicit list or linspace.
    const auto& dj = j.at("designs");
    if (dj.is_object()) {
      const auto& ls = dj.at("linspace");
      cfg.designs = linspace_designs(ls.at("from").get<double>(), ls.at("to").get<double>(), ls.at("n").get<index_t>());
    } else {
      int idx = 0;
      for (const auto& d : dj) {
        DesignPoint p;
        if (d.is_array())
          p.value = d.get<std::vector<double>>();
        else
          p.value = {d.get<double>()};
        p.index = idx++;
        cfg.designs.push_back(std::move(p));
      }
      if (cfg.designs.empty()) throw ConfigError("design list is empty");
    }

    // Noise.
    const auto& nj = j.at("noise");
    cfg.form = parse_form(nj.at("form").get<std::string>());
    if (nj.contains("kind") && nj.at("kind").get<std::string>() != "gaussian")
      throw ConfigError("only gaussian noise is supported");
    std::optional<std::vector<std::vector<double>>> per_design;
    if (nj.contains("per_design")) {
      per_design = nj.at("per_design").get<std::vector<std::vector<double>>>();
      if (per_design->size() != cfg.designs.size())
        throw ConfigError("noise per_design table must have one row per design");
    }
    cfg.noise = NoiseSpec(nj.at("sigma").get<std::vector<double>>(), per_design);

    // Models.
    const auto& mj = j.at("models");
    if (!mj.is_array() || mj.empty()) throw ConfigError("config needs a non-empty model list");
    index_t tab_manifest_ntheta = 1;
    if (j.contains("tabulated") && j.at("tabulated").contains("n_theta"))
      tab_manifest_ntheta = j.at("tabulated").at("n_theta").get<index_t>();
    std::set<int> ids;
    index_t pool_size = 0;
    std::vector<ForwardModel> models;
    for (const auto& m : mj) {
      const int id = m.at("id").get<int>();
      if (!ids.insert(id).second) throw ConfigError("duplicate model id " + std::to_string(id));
      const std::string kind = m.at("kind").get<std::string>();
      const double cost = m.at("cost").get<double>();
      if (kind == "benchmark") {
        const std::string fn_name = m.at("fn").get<std::string>();
        const auto fn = benchmark_fn_from_name(fn_name);
        if (!fn) throw ConfigError("unknown benchmark model '" + fn_name + "'");
        const double coeff = m.contains("coeff") ? m.at("coeff").get<double>() : 1.0;
        const double offset = m.contains("output_offset") ? m.at("output_offset").get<double>() : 0.0;
        models.push_back(ForwardModel::benchmark(id, *fn, cost, coeff, offset));
      } else if (kind == "tabulated") {
        const std::string tpath = m.at("path").get<std::string>();
        if (!std::filesystem::exists(tpath)) throw ConfigError("tabulated model file does not exist: " + tpath);
        TabulatedManifest manifest;
        manifest.n_theta = tab_manifest_ntheta;
        manifest.ny = static_cast<index_t>(cfg.noise.ny());
        for (const auto& d : cfg.designs) manifest.designs.push_back(d.value);
        auto table = load_tabulated_model(tpath, manifest);
        if (pool_size == 0)
          pool_size = table->n_samples();
        else if (pool_size != table->n_samples())
          throw ConfigError("tabulated models disagree on sample pool size");
        models.push_back(ForwardModel::tabulated(id, std::move(table), cost));
      } else {
        throw ConfigError("model kind must be 'benchmark' or 'tabulated'");
      }
    }
    std::sort(models.begin(), models.end(), [](const ForwardModel& a, const ForwardModel& b) { return a.id() < b.id(); });
    if (models[0].id() != 0) throw ConfigError("exactly one model must have id 0");
    for (std::size_t i = 0; i < models.size(); ++i)
      if (models[i].id() != static_cast<int>(i)) throw ConfigError("model ids must be contiguous 0..M");

    // Prior: uniform components, or the tabulated sample pool.
    if (pool_size > 0) {
      if (j.contains("prior") && !j.at("prior").is_null())
        throw ConfigError("tabulated ensembles draw parameters from the table; omit 'prior'");
      cfg.prior = PriorSpec::sample_pool(pool_size);
    } else {
      std::vector<PriorSpec::Uniform> comps;
      for (const auto& c : j.at("prior"))
        comps.push_back({c.at("lower").get<double>(), c.at("upper").get<double>()});
      cfg.prior = PriorSpec::independent_uniform(std::move(comps));
    }

    cfg.reuse_inner = j.contains("reuse_inner") ? j.at("reuse_inner").get<bool>() : false;

    // Budget.
    const auto& bj = j.at("budget");
    cfg.budget.w_budget = bj.at("w_budget").get<double>();
    cfg.budget.n_in_0 = bj.at("n_in_0").get<index_t>();
    if (cfg.budget.n_in_0 < 1) throw ConfigError("n_in_0 must be >= 1");
    if (bj.contains("n_in_search_box")) {
      for (const auto& b : bj.at("n_in_search_box")) {
        const auto v = b.get<std::vector<index_t>>();
        if (v.size() != 2 || v[0] < 1 || v[1] < v[0]) throw ConfigError("bad n_in_search_box entry");
        cfg.budget.n_in_box.emplace_back(v[0], v[1]);
      }
      if (cfg.budget.n_in_box.size() + 1 != models.size())
        throw ConfigError("n_in_search_box needs one interval per low-fidelity model");
    }
    if (bj.contains("strategy")) {
      const std::string s = bj.at("strategy").get<std::string>();
      if (s == "grid")
        cfg.strategy = SearchStrategy::grid;
      else if (s == "coarse_to_fine")
        cfg.strategy = SearchStrategy::coarse_to_fine;
      else
        throw ConfigError("strategy must be 'grid' or 'coarse_to_fine'");
    }
    if (bj.contains("grid_points")) cfg.grid_points = bj.at("grid_points").get<index_t>();

    if (j.contains("n_in")) {
      const auto v = j.at("n_in").get<std::vector<index_t>>();
      if (v.size() + 1 != models.size()) throw ConfigError("n_in needs one value per low-fidelity model");
      for (index_t x : v)
        if (x < 1) throw ConfigError("n_in values must be >= 1");
      cfg.fixed_n_in = v;
    }

    // Pilot.
    const auto& pj = j.at("pilot");
    cfg.n_pilot = pj.at("n_pilot").get<index_t>();
    if (pj.contains("design_indices")) {
      cfg.pilot_design_indices = pj.at("design_indices").get<std::vector<int>>();
      for (int k : cfg.pilot_design_indices)
        if (k < 0 || static_cast<std::size_t>(k) >= cfg.designs.size())
          throw ConfigError("pilot design index out of range");
    }

    // Sweep.
    cfg.n_trials = j.at("sweep").at("n_trials").get<index_t>();
    if (cfg.n_trials < 1) throw ConfigError("n_trials must be >= 1");

    if (j.contains("cost_source")) {
      cfg.cost_source = j.at("cost_source").get<std::string>();
      if (cfg.cost_source != "assigned" && cfg.cost_source != "measured")
        throw ConfigError("cost_source must be 'assigned' or 'measured'");
    }
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
    if (j.contains("families")) {
      for (const auto& fj : j.at("families")) {
        const std::string name = fj.get<std::string>();
        bool found = false;
        for (EstimatorFamily f : {EstimatorFamily::MC, EstimatorFamily::MFMC, EstimatorFamily::MLMC,
                                  EstimatorFamily::ACVMF, EstimatorFamily::ACVIS}) {
          if (name == family_name(f)) {
            cfg.families.push_back(f);
            found = true;
          }
        }
        if (!found) throw ConfigError("unknown estimator family '" + name + "'");
      }
      if (cfg.families.empty()) throw ConfigError("families list must not be empty");
    }

    // Assemble the utility-model ensemble. Inner sizes: fixed list when
    // given, n_in_0 everywhere otherwise (the design step may override).
    for (std::size_t i = 0; i < models.size(); ++i) {
      UtilityModelSpec spec;
      spec.model = models[i];
      spec.form = cfg.form;
      spec.reuse_inner = cfg.reuse_inner;
      if (i == 0)
        spec.n_in = cfg.budget.n_in_0;
      else if (cfg.fixed_n_in)
        spec.n_in = (*cfg.fixed_n_in)[i - 1];
      else
        spec.n_in = cfg.budget.n_in_0;
      cfg.ensemble.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is missing or mistypes fields: ") + e.what());
  }
  return cfg;
}

}  // namespace mfeig
