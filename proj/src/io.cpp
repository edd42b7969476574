#include "mfeig/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mfeig::io {

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

// Minimal ordered JSON writer with fixed float formatting.
class Writer {
 public:
  explicit Writer(std::string path) : path_(std::move(path)) {}

  void raw(const std::string& s) { out_ += s; }
  void number(double v) { out_ += format_double(v); }
  void number(index_t v) { out_ += std::to_string(v); }

  template <typename T>
  void array(const std::vector<T>& xs) {
    out_ += '[';
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out_ += ',';
      number(xs[i]);
    }
    out_ += ']';
  }

  void matrix(const Eigen::MatrixXd& m) {
    out_ += '[';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (r) out_ += ',';
      out_ += '[';
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c) out_ += ',';
        number(m(r, c));
      }
      out_ += ']';
    }
    out_ += ']';
  }

  void finish() {
    std::ofstream f(path_);
    if (!f) throw ConfigError("cannot write " + path_);
    f << out_ << "\n";
  }

 private:
  std::string path_;
  std::string out_;
};

std::vector<std::vector<double>> design_values(const std::vector<DesignPoint>& designs) {
  std::vector<std::vector<double>> v;
  v.reserve(designs.size());
  for (const auto& d : designs) v.push_back(d.value);
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "null";
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_pilot_json(const std::string& path, const PilotResult& pilot, bool include_measured_costs) {
  Writer w(path);
  w.raw("{\"n_pilot\":");
  w.number(pilot.n_pilot);
  w.raw(",\"designs\":[");
  for (std::size_t k = 0; k < pilot.designs.size(); ++k) {
    if (k) w.raw(",");
    w.array(pilot.designs[k].value);
  }
  w.raw("],\"n_in\":");
  w.array(pilot.n_in);
  w.raw(",\"costs\":");
  w.array(pilot.cost_w);
  w.raw(",\"sigma_bar\":");
  w.matrix(pilot.sigma_bar);
  w.raw(",\"sigma_per_design\":[");
  for (std::size_t k = 0; k < pilot.sigma_per_design.size(); ++k) {
    if (k) w.raw(",");
    w.matrix(pilot.sigma_per_design[k]);
  }
  w.raw("],\"rho0\":");
  w.array(pilot.rho0);
  w.raw(",\"degenerate\":[");
  for (std::size_t k = 0; k < pilot.degenerate.size(); ++k) {
    if (k) w.raw(",");
    w.raw(pilot.degenerate[k] ? "true" : "false");
  }
  w.raw("]");
  if (include_measured_costs) {
    w.raw(",\"measured_wg\":");
    w.array(pilot.measured_wg);
  }
  w.raw("}");
  w.finish();
}

PilotResult read_pilot_json(const std::string& path) {
  const json j = load_json_file(path);
  PilotResult p;
  try {
    p.n_pilot = j.at("n_pilot").get<index_t>();
    int idx = 0;
    for (const auto& d : j.at("designs")) {
      DesignPoint pt;
      pt.value = d.get<std::vector<double>>();
      pt.index = idx++;
      p.designs.push_back(std::move(pt));
    }
    p.n_in = j.at("n_in").get<std::vector<index_t>>();
    p.cost_w = j.at("costs").get<std::vector<double>>();
    const auto sb = j.at("sigma_bar").get<std::vector<std::vector<double>>>();
    const int n = static_cast<int>(sb.size());
    p.sigma_bar.resize(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) p.sigma_bar(r, c) = sb[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    for (const auto& m : j.at("sigma_per_design")) {
      const auto rows = m.get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd M(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) M(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      p.sigma_per_design.push_back(std::move(M));
    }
    if (j.contains("rho0")) p.rho0 = j.at("rho0").get<std::vector<double>>();
    if (j.contains("degenerate"))
      for (const auto& b : j.at("degenerate")) p.degenerate.push_back(b.get<bool>() ? 1 : 0);
    if (j.contains("measured_wg")) p.measured_wg = j.at("measured_wg").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError("pilot file " + path + " is missing fields: " + e.what());
  }
  return p;
}

void write_design_json(const std::string& path, const EstimatorDesign& design) {
  Writer w(path);
  w.raw("{\"family\":\"");
  w.raw(family_name(design.family));
  w.raw("\",\"active_models\":[");
  for (std::size_t i = 0; i < design.active_models.size(); ++i) {
    if (i) w.raw(",");
    w.raw(std::to_string(design.active_models[i]));
  }
  w.raw("],\"groups\":[");
  for (std::size_t g = 0; g < design.allocation.groups.size(); ++g) {
    const auto& grp = design.allocation.groups[g];
    if (g) w.raw(",");
    w.raw("{\"size\":");
    w.number(grp.size);
    w.raw(",\"z0\":");
    w.raw(grp.in_z0 ? "true" : "false");
    auto member_list = [&](const std::vector<std::uint8_t>& flags) {
      std::string s = "[";
      bool first = true;
      for (std::size_t m = 0; m < flags.size(); ++m) {
        if (!flags[m]) continue;
        if (!first) s += ",";
        first = false;
        s += std::to_string(design.active_models[m]);
      }
      s += "]";
      return s;
    };
    w.raw(",\"zstar\":" + member_list(grp.in_zstar));
    w.raw(",\"z\":" + member_list(grp.in_z));
    w.raw("}");
  }
  w.raw("],\"alpha\":[");
  for (Eigen::Index i = 0; i < design.alpha.size(); ++i) {
    if (i) w.raw(",");
    w.number(design.alpha(i));
  }
  w.raw("],\"n_in\":");
  w.array(design.n_in);
  w.raw(",\"projected_variance\":");
  w.number(design.projected_variance);
  w.raw(",\"projected_cost\":");
  w.number(design.projected_cost);
  w.raw("}");
  w.finish();
}

EstimatorDesign read_design_json(const std::string& path) {
  const json j = load_json_file(path);
  EstimatorDesign d;
  try {
    const std::string fam = j.at("family").get<std::string>();
    bool found = false;
    for (EstimatorFamily f : {EstimatorFamily::MC, EstimatorFamily::MFMC, EstimatorFamily::MLMC,
                              EstimatorFamily::ACVMF, EstimatorFamily::ACVIS}) {
      if (fam == family_name(f)) {
        d.family = f;
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown estimator family '" + fam + "' in " + path);
    d.active_models = j.at("active_models").get<std::vector<int>>();
    const int K = static_cast<int>(d.active_models.size());
    for (const auto& gj : j.at("groups")) {
      AllocationMatrix::Group g;
      g.size = gj.at("size").get<index_t>();
      g.in_z0 = gj.at("z0").get<bool>();
      g.in_zstar.assign(static_cast<std::size_t>(K), 0);
      g.in_z.assign(static_cast<std::size_t>(K), 0);
      auto set_flags = [&](const json& ids, std::vector<std::uint8_t>& flags) {
        for (const auto& id : ids) {
          const int ensemble_id = id.get<int>();
          bool matched = false;
          for (int k = 0; k < K; ++k)
            if (d.active_models[static_cast<std::size_t>(k)] == ensemble_id) {
              flags[static_cast<std::size_t>(k)] = 1;
              matched = true;
            }
          if (!matched) throw ConfigError("design group references inactive model " + std::to_string(ensemble_id));
        }
      };
      set_flags(gj.at("zstar"), g.in_zstar);
      set_flags(gj.at("z"), g.in_z);
      d.allocation.groups.push_back(std::move(g));
    }
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    d.alpha.resize(static_cast<Eigen::Index>(alpha.size()));
    for (std::size_t i = 0; i < alpha.size(); ++i) d.alpha(static_cast<Eigen::Index>(i)) = alpha[i];
    d.n_in = j.at("n_in").get<std::vector<index_t>>();
    d.projected_variance = j.at("projected_variance").get<double>();
    if (j.contains("projected_cost")) d.projected_cost = j.at("projected_cost").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("design file " + path + " is missing fields: " + e.what());
  }
  return d;
}

void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  const std::size_t dim = sweep.designs.empty() ? 0 : sweep.designs[0].value.size();
  f << "design_index";
  for (std::size_t c = 0; c < dim; ++c) f << ",design_value_" << c;
  f << ",trial,estimate\n";
  for (index_t d = 0; d < static_cast<index_t>(sweep.designs.size()); ++d) {
    for (index_t t = 0; t < sweep.n_trials(); ++t) {
      f << d;
      for (double v : sweep.designs[static_cast<std::size_t>(d)].value) f << "," << format_double(v);
      f << "," << t << "," << format_double(sweep.estimates(t, d)) << "\n";
    }
  }
}

void write_reduction_csv(const std::string& path, const ReductionReport& report) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << "design_index,baseline_var,mf_var,ratio\n";
  for (std::size_t d = 0; d < report.ratio.size(); ++d) {
    f << d << "," << format_double(report.baseline_var[d]) << "," << format_double(report.mf_var[d]) << ","
      << format_double(report.ratio[d]) << "\n";
  }
}

void write_summary_json(const std::string& path, const SummaryInfo& s) {
  if (s.mf == nullptr) throw ConfigError("summary requires sweep results");
  Writer w(path);
  const index_t best = argmax_design(*s.mf);
  w.raw("{\"xi_star_index\":");
  w.number(best);
  w.raw(",\"xi_star\":");
  w.array(s.mf->designs[static_cast<std::size_t>(best)].value);
  w.raw(",\"n_trials\":");
  w.number(s.mf->n_trials());
  w.raw(",\"family\":\"" + s.family + "\"");
  w.raw(",\"n_in\":");
  w.array(s.n_in);
  auto stat_block = [&](const SweepResult& r) {
    std::string out = "{\"mean\":[";
    for (std::size_t d = 0; d < r.mean.size(); ++d) {
      if (d) out += ",";
      out += format_double(r.mean[d]);
    }
    out += "],\"variance\":[";
    for (std::size_t d = 0; d < r.variance.size(); ++d) {
      if (d) out += ",";
      out += format_double(r.variance[d]);
    }
    out += "]}";
    return out;
  };
  w.raw(",\"mf\":" + stat_block(*s.mf));
  if (s.baseline != nullptr) w.raw(",\"baseline\":" + stat_block(*s.baseline));
  if (s.report != nullptr) {
    w.raw(",\"avg_baseline_var\":");
    w.number(s.mf->n_trials() >= 2 ? s.report->avg_baseline_var : std::numeric_limits<double>::quiet_NaN());
    w.raw(",\"avg_mf_var\":");
    w.number(s.mf->n_trials() >= 2 ? s.report->avg_mf_var : std::numeric_limits<double>::quiet_NaN());
    w.raw(",\"avg_reduction_ratio\":");
    w.number(s.mf->n_trials() >= 2 ? s.report->avg_ratio : std::numeric_limits<double>::quiet_NaN());
  }
  w.raw("}");
  w.finish();
}

}  // namespace mfeig::io
