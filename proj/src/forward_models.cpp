#include "mfeig/forward_models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mfeig/rng.hpp"

namespace mfeig {

TabulatedModel::TabulatedModel(Matrix thetas, std::vector<std::vector<double>> designs, index_t ny, Matrix outputs)
    : thetas_(std::move(thetas)), designs_(std::move(designs)), ny_(ny), outputs_(std::move(outputs)) {
  if (outputs_.rows() != thetas_.rows() || outputs_.cols() != static_cast<index_t>(designs_.size()) * ny_)
    throw ConfigError("tabulated model: output table shape mismatch");
}

std::span<const double> TabulatedModel::lookup(index_t sample, index_t design) const {
  if (sample < 0 || sample >= n_samples())
    throw ConfigError("tabulated model: sample index " + std::to_string(sample) + " outside table");
  if (design < 0 || design >= n_designs())
    throw ConfigError("tabulated model: design index " + std::to_string(design) + " outside table");
  return {outputs_.row(sample) + design * ny_, static_cast<std::size_t>(ny_)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

double parse_double(const std::string& s, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || (end != nullptr && *end != '\0' && *end != '\r'))
    throw ConfigError("tabulated model: cannot parse number '" + s + "' in " + context);
  return v;
}

}  // namespace

std::shared_ptr<const TabulatedModel> load_tabulated_model(const std::string& path, const TabulatedManifest& manifest) {
  std::ifstream in(path);
  if (!in) throw ConfigError("tabulated model: cannot open " + path);

  std::string header;
  if (!std::getline(in, header)) throw ConfigError("tabulated model: no rows in " + path);
  {
    std::vector<std::string> expected = {"sample_index", "design_index"};
    for (index_t c = 0; c < manifest.n_theta; ++c) expected.push_back("theta_" + std::to_string(c));
    for (index_t c = 0; c < manifest.ny; ++c) expected.push_back("y_" + std::to_string(c));
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const auto cols = split_csv_line(header);
    if (cols != expected)
      throw ConfigError("tabulated model: malformed header in " + path);
  }

  struct Row {
    index_t sample, design;
    std::vector<double> theta, y;
  };
  std::vector<Row> rows;
  std::string line;
  index_t max_sample = -1;
  const index_t n_designs = static_cast<index_t>(manifest.designs.size());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (static_cast<index_t>(f.size()) != 2 + manifest.n_theta + manifest.ny)
      throw ConfigError("tabulated model: wrong field count in row '" + line + "'");
    Row r;
    r.sample = static_cast<index_t>(parse_double(f[0], "sample_index"));
    r.design = static_cast<index_t>(parse_double(f[1], "design_index"));
    if (r.design < 0 || r.design >= n_designs)
      throw ConfigError("tabulated model: design_index " + std::to_string(r.design) + " outside manifest design list");
    for (index_t c = 0; c < manifest.n_theta; ++c) r.theta.push_back(parse_double(f[2 + c], "theta"));
    for (index_t c = 0; c < manifest.ny; ++c) {
      const double v = parse_double(f[2 + manifest.n_theta + c], "y");
      if (!std::isfinite(v)) throw ConfigError("tabulated model: non-finite output in row '" + line + "'");
      r.y.push_back(v);
    }
    max_sample = std::max(max_sample, r.sample);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ConfigError("tabulated model: no rows in " + path);

  const index_t n_samples = max_sample + 1;
  Matrix thetas(n_samples, manifest.n_theta);
  Matrix outputs(n_samples, n_designs * manifest.ny);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n_samples * n_designs), 0);
  std::vector<std::uint8_t> theta_set(static_cast<std::size_t>(n_samples), 0);
  for (const auto& r : rows) {
    if (r.sample < 0) throw ConfigError("tabulated model: negative sample_index");
    auto& flag = seen[static_cast<std::size_t>(r.sample * n_designs + r.design)];
    if (flag)
      throw ConfigError("tabulated model: duplicate key (sample " + std::to_string(r.sample) + ", design " +
                        std::to_string(r.design) + ")");
    flag = 1;
    if (theta_set[static_cast<std::size_t>(r.sample)]) {
      for (index_t c = 0; c < manifest.n_theta; ++c)
        if (thetas(r.sample, c) != r.theta[static_cast<std::size_t>(c)])
          throw ConfigError("tabulated model: inconsistent theta for sample " + std::to_string(r.sample));
    } else {
      for (index_t c = 0; c < manifest.n_theta; ++c) thetas(r.sample, c) = r.theta[static_cast<std::size_t>(c)];
      theta_set[static_cast<std::size_t>(r.sample)] = 1;
    }
    for (index_t c = 0; c < manifest.ny; ++c) outputs(r.sample, r.design * manifest.ny + c) = r.y[static_cast<std::size_t>(c)];
  }
  std::string gaps;
  for (index_t s = 0; s < n_samples; ++s)
    for (index_t d = 0; d < n_designs; ++d)
      if (!seen[static_cast<std::size_t>(s * n_designs + d)]) {
        if (!gaps.empty()) gaps += ", ";
        if (gaps.size() > 200) {
          gaps += "...";
          goto report;
        }
        gaps += "(" + std::to_string(s) + "," + std::to_string(d) + ")";
      }
report:
  if (!gaps.empty()) throw ConfigError("tabulated model: missing rows for " + gaps);

  return std::make_shared<TabulatedModel>(std::move(thetas), manifest.designs, manifest.ny, std::move(outputs));
}

std::optional<BenchmarkFn> benchmark_fn_from_name(const std::string& name) {
  if (name == "case1_g0") return BenchmarkFn::case1_g0;
  if (name == "case1_g1") return BenchmarkFn::case1_g1;
  if (name == "case1_g2") return BenchmarkFn::case1_g2;
  if (name == "linear_gaussian") return BenchmarkFn::linear_gaussian;
  return std::nullopt;
}

const char* benchmark_fn_name(BenchmarkFn fn) {
  switch (fn) {
    case BenchmarkFn::case1_g0: return "case1_g0";
    case BenchmarkFn::case1_g1: return "case1_g1";
    case BenchmarkFn::case1_g2: return "case1_g2";
    case BenchmarkFn::linear_gaussian: return "linear_gaussian";
  }
  return "?";
}

ForwardModel ForwardModel::benchmark(int id, BenchmarkFn fn, double cost_g, double coeff, double output_offset) {
  if (!(cost_g > 0.0)) throw ConfigError("forward model cost must be positive");
  ForwardModel m;
  m.id_ = id;
  m.kind_ = Kind::benchmark;
  m.cost_g_ = cost_g;
  m.fn_ = fn;
  m.coeff_ = coeff;
  m.output_offset_ = output_offset;
  return m;
}

ForwardModel ForwardModel::tabulated(int id, std::shared_ptr<const TabulatedModel> table, double cost_g) {
  if (!(cost_g > 0.0)) throw ConfigError("forward model cost must be positive");
  if (!table) throw ConfigError("tabulated forward model requires a table");
  ForwardModel m;
  m.id_ = id;
  m.kind_ = Kind::tabulated;
  m.cost_g_ = cost_g;
  m.table_ = std::move(table);
  return m;
}

index_t ForwardModel::ny() const { return kind_ == Kind::tabulated ? table_->ny() : 1; }

index_t ForwardModel::n_theta() const { return 1; }

namespace {

inline double case1_b(double xi) { return std::exp(-std::fabs(0.2 - xi)); }

constexpr double k1 = 0.70710678118654752440;  // 0.5^0.5
constexpr double k2 = 0.5;

}  // namespace

std::optional<ForwardModel::PolyCoef> ForwardModel::poly_coef(const DesignPoint& xi) const {
  if (kind_ != Kind::benchmark) return std::nullopt;
  const double x = xi.scalar();
  switch (fn_) {
    case BenchmarkFn::case1_g0:
      return PolyCoef{3, x * x, case1_b(x), output_offset_};
    case BenchmarkFn::case1_g1:
      return PolyCoef{25, k1 * std::pow(x, 1.75), case1_b(x), output_offset_};
    case BenchmarkFn::case1_g2:
      return PolyCoef{2, k2 * std::pow(x, 1.5), case1_b(x), output_offset_};
    case BenchmarkFn::linear_gaussian:
      return std::nullopt;
  }
  return std::nullopt;
}

void ForwardModel::eval(std::span<const double> theta, const DesignPoint& xi, std::span<double> out) const {
  if (static_cast<index_t>(out.size()) != ny()) throw ConfigError("forward_eval: output dimension mismatch");
  if (theta.empty()) throw ConfigError("forward_eval: empty theta");
  for (double t : theta)
    if (!std::isfinite(t)) throw NumericalError("forward_eval: non-finite theta");

  if (kind_ == Kind::tabulated) {
    const auto row = table_->lookup(static_cast<index_t>(std::llround(theta[0])), xi.index);
    std::copy(row.begin(), row.end(), out.begin());
    return;
  }
  const double t = theta[0];
  if (fn_ == BenchmarkFn::linear_gaussian) {
    out[0] = coeff_ * xi.scalar() * inv_std_normal_cdf(t) + output_offset_;
    return;
  }
  const auto c = *poly_coef(xi);
  double p = 0.0;
  switch (c.power_kind) {
    case 3: p = t * t * t; break;
    case 25: p = t * t * std::sqrt(t); break;
    case 2: p = t * t; break;
  }
  out[0] = c.a * p + c.b * t + c.shift;
}

std::vector<double> ForwardModel::eval(std::span<const double> theta, const DesignPoint& xi) const {
  std::vector<double> out(static_cast<std::size_t>(ny()));
  eval(theta, xi, out);
  return out;
}

std::vector<double> simulate_data(const ForwardModel& model, NoiseForm form, std::span<const double> theta,
                                  const DesignPoint& xi, std::span<const double> eps) {
  auto y = model.eval(theta, xi);
  if (eps.size() != y.size()) throw ConfigError("simulate_data: eps dimension mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (form == NoiseForm::additive) {
      y[i] += eps[i];
    } else {
      if (y[i] == 0.0) throw NumericalError("simulate_data: scaled form with g_i = 0 is non-invertible");
      y[i] *= 1.0 + eps[i];
    }
  }
  return y;
}

InverseResult inverse_noise(const ForwardModel& model, NoiseForm form, std::span<const double> y,
                            std::span<const double> theta, const DesignPoint& xi) {
  const auto g = model.eval(theta, xi);
  if (y.size() != g.size()) throw ConfigError("inverse_noise: y dimension mismatch");
  InverseResult r;
  r.eps.resize(g.size());
  r.log_abs_det_jinv = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (form == NoiseForm::additive) {
      r.eps[i] = y[i] - g[i];
    } else {
      if (g[i] == 0.0) throw NumericalError("inverse_noise: scaled form with g_i = 0 is non-invertible");
      r.eps[i] = (y[i] - g[i]) / g[i];
      r.log_abs_det_jinv -= std::log(std::fabs(g[i]));
    }
  }
  return r;
}

}  // namespace mfeig
