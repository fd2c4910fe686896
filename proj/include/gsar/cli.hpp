#pragma once

// Command-line front end: CSV ingestion, the fit/effects/simulate/generate
// commands and their JSON and text reports.
//
// Exit codes: 0 success (non-convergence is only a warning), 1 numerical
// failure inside the fit, 2 usage, file, parse or dimension errors.

#include <gsar/effects.hpp>
#include <gsar/estimator.hpp>
#include <gsar/family.hpp>
#include <gsar/simkit.hpp>
#include <gsar/weights.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gsar::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNumerical = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kInterceptName = "(Intercept)";

// ---------------------------------------------------------------------------
// CSV data.

/// Column-major numeric table read from a headed CSV file.
struct DataTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

  const std::vector<double>& column(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("no column named '" + name + "'");
    return columns[static_cast<std::size_t>(it - names.begin())];
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t line, const std::string& column) {
  if (cell.empty()) throw ParseError("blank cell in column '" + column + "'", line);
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("column '" + column + "': '" + cell + "' is not a finite number", line);
  return v;
}

}  // namespace detail

/// Comma-separated, header row required, no quoting. Blank cells and
/// ragged rows are rejected with their line number.
inline DataTable read_csv(std::istream& in) {
  DataTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw ParseError("missing header row", line_no == 0 ? 1 : line_no);
  t.names = detail::split_commas(line);
  for (std::size_t k = 0; k < t.names.size(); ++k) {
    if (t.names[k].empty()) throw ParseError("empty column name", line_no);
    for (std::size_t j = 0; j < k; ++j)
      if (t.names[j] == t.names[k]) throw ParseError("duplicate column '" + t.names[k] + "'", line_no);
  }
  t.columns.resize(t.names.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != t.names.size())
      throw ParseError("expected " + std::to_string(t.names.size()) + " cells, found " +
                           std::to_string(cells.size()),
                       line_no);
    for (std::size_t k = 0; k < cells.size(); ++k)
      t.columns[k].push_back(detail::parse_cell(cells[k], line_no, t.names[k]));
  }
  if (t.rows() == 0) throw ParseError("no data rows", line_no);
  return t;
}

inline DataTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file '" + path + "'");
  return read_csv(in);
}

/// How a binomial response column is read.
enum class ResponseKind { Auto, Proportion, Successes };

inline ResponseKind parse_response_kind(std::string_view s) {
  if (s == "auto") return ResponseKind::Auto;
  if (s == "proportion") return ResponseKind::Proportion;
  if (s == "successes") return ResponseKind::Successes;
  throw ValidationError("unknown response kind '" + std::string(s) + "'");
}

struct ModelData {
  Observations y;
  Eigen::MatrixXd x;
  std::vector<std::string> names;
  bool intercept = true;
};

struct ModelColumns {
  std::string response;
  std::vector<std::string> covariates;
  std::optional<std::string> trials;
  bool intercept = true;
  ResponseKind response_kind = ResponseKind::Auto;
};

/// Auto reads a binomial response as success counts when every value is an
/// integer and at least one exceeds 1, and as proportions otherwise.
inline ModelData build_model_data(const DataTable& t, const ModelColumns& cols,
                                  const FamilySpec& spec) {
  const std::size_t n = t.rows();
  const auto& resp = t.column(cols.response);
  ModelData d;
  d.intercept = cols.intercept;
  d.y.resize(n);

  if (spec.family() == Family::Binomial) {
    if (!cols.trials) throw ValidationError("binomial fits need --trials");
    const auto& trials = t.column(*cols.trials);
    ResponseKind kind = cols.response_kind;
    if (kind == ResponseKind::Auto) {
      const bool integral = std::all_of(resp.begin(), resp.end(),
                                        [](double v) { return v == std::round(v); });
      const bool above_one = std::any_of(resp.begin(), resp.end(), [](double v) { return v > 1.0; });
      kind = integral && above_one ? ResponseKind::Successes : ResponseKind::Proportion;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double m = trials[i];
      if (!(m >= 1.0) || m != std::round(m) || m > 1e9)
        throw ValidationError("row " + std::to_string(i + 1) + ": trials must be a positive integer");
      d.y[i].trials = static_cast<int>(m);
      d.y[i].y = kind == ResponseKind::Successes ? resp[i] / m : resp[i];
    }
  } else {
    if (cols.trials) throw ValidationError("--trials only applies to the binomial family");
    for (std::size_t i = 0; i < n; ++i) d.y[i].y = resp[i];
  }
  for (std::size_t i = 0; i < n; ++i) validate_observation(spec, d.y[i], i);

  const auto p = static_cast<Eigen::Index>(cols.covariates.size() + (cols.intercept ? 1 : 0));
  if (p == 0) throw ValidationError("the model has no columns");
  d.x.resize(static_cast<Eigen::Index>(n), p);
  Eigen::Index k = 0;
  if (cols.intercept) {
    d.x.col(k++).setOnes();
    d.names.emplace_back(kInterceptName);
  }
  for (const auto& name : cols.covariates) {
    if (name == cols.response) throw ValidationError("response '" + name + "' listed as a covariate");
    const auto& c = t.column(name);
    for (std::size_t i = 0; i < n; ++i) d.x(static_cast<Eigen::Index>(i), k) = c[i];
    d.names.push_back(name);
    ++k;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Reports.

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

struct FitContext {
  ModelColumns columns;
  std::string weights_path;
  bool weights_standardized = true;
  FitConfig config;
};

inline nlohmann::ordered_json fit_report(const FitResult& f, const ModelData& d,
                                         const FamilySpec& spec, const EffectsSummary& effects,
                                         const FitContext& ctx) {
  using json = nlohmann::ordered_json;
  json model;
  model["name"] = "gsar";
  model["response"] = ctx.columns.response;
  model["covariates"] = ctx.columns.covariates;
  model["trials"] = ctx.columns.trials ? json(*ctx.columns.trials) : json(nullptr);
  model["intercept"] = d.intercept;
  model["weights"] = ctx.weights_path;
  model["weights_standardized"] = ctx.weights_standardized;
  model["rho_step_beta"] = std::string(to_string(ctx.config.rho_step_beta));
  if (spec.family() == Family::NegativeBinomial) model["nb_shape"] = spec.aux();
  json notes = json::array();
  if (!f.converged) notes.push_back("estimation did not converge");
  if (!f.var_rho_error.empty()) notes.push_back("var_rho: " + f.var_rho_error);
  if (!f.vcov_error.empty()) notes.push_back("vcov: " + f.vcov_error);
  model["notes"] = notes;

  json j;
  j["model"] = model;
  j["family"] = std::string(to_string(spec.family()));
  j["link"] = std::string(to_string(spec.link()));
  j["n"] = d.x.rows();
  j["p"] = d.x.cols();
  j["rho_hat"] = f.rho_hat;
  j["var_rho"] = number_or_null(f.var_rho);
  j["phi_hat"] = number_or_null(f.phi_hat);

  const Eigen::VectorXd se = standard_errors(f.vcov_beta);
  const Eigen::VectorXd se_model = standard_errors(f.vcov_beta_model);
  json coefs = json::array();
  for (Eigen::Index k = 0; k < f.beta_hat.size(); ++k) {
    const double z = f.beta_hat[k] / se[k];
    coefs.push_back({{"name", d.names[static_cast<std::size_t>(k)]},
                     {"estimate", f.beta_hat[k]},
                     {"std_error", number_or_null(se[k])},
                     {"z_value", number_or_null(z)},
                     {"p_value", number_or_null(two_sided_p(z))},
                     {"std_error_model", number_or_null(se_model[k])}});
  }
  j["coefficients"] = coefs;

  json eff = json::array();
  for (const auto& e : effects)
    eff.push_back({{"name", e.name}, {"direct", e.direct}, {"indirect", e.indirect}, {"total", e.total}});
  j["effects"] = eff;
  j["converged"] = f.converged;
  j["iterations"] = {{"outer", f.n_outer}, {"inner", f.n_inner_total}};
  return j;
}

namespace detail {

inline std::string cell(const nlohmann::ordered_json& v) {
  if (!v.is_number()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", v.get<double>());
  return buf;
}

inline std::string cell(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

}  // namespace detail

/// Coefficient table with the columns Estimate, Std Error, z value, p value,
/// Direct, Indirect, Total, followed by a rho row.
inline void write_table(std::ostream& out, const nlohmann::ordered_json& report) {
  const std::vector<std::string> heads = {"Estimate", "Std Error", "z value", "p value",
                                          "Direct",   "Indirect",  "Total"};
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> labels;
  for (const auto& c : report.at("coefficients")) {
    const auto name = c.at("name").get<std::string>();
    std::vector<std::string> r = {detail::cell(c.at("estimate")), detail::cell(c.at("std_error")),
                                  detail::cell(c.at("z_value")), detail::cell(c.at("p_value"))};
    const nlohmann::ordered_json* eff = nullptr;
    for (const auto& e : report.at("effects"))
      if (e.at("name") == name) eff = &e;
    for (const char* key : {"direct", "indirect", "total"})
      r.push_back(eff ? detail::cell(eff->at(key)) : "");
    labels.push_back(name);
    rows.push_back(std::move(r));
  }
  const double rho = report.at("rho_hat").get<double>();
  const auto& var = report.at("var_rho");
  const double se = var.is_number() ? std::sqrt(var.get<double>())
                                    : std::numeric_limits<double>::quiet_NaN();
  rows.push_back({detail::cell(rho), detail::cell(se), detail::cell(rho / se),
                  detail::cell(two_sided_p(rho / se)), "", "", ""});
  labels.emplace_back("rho");

  std::size_t label_w = 4;
  for (const auto& l : labels) label_w = std::max(label_w, l.size());
  std::vector<std::size_t> w(heads.size());
  for (std::size_t k = 0; k < heads.size(); ++k) {
    w[k] = heads[k].size();
    for (const auto& r : rows) w[k] = std::max(w[k], r[k].size());
  }
  out << detail::pad("", label_w, true);
  for (std::size_t k = 0; k < heads.size(); ++k) out << "  " << detail::pad(heads[k], w[k]);
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << detail::pad(labels[i], label_w, true);
    for (std::size_t k = 0; k < heads.size(); ++k) out << "  " << detail::pad(rows[i][k], w[k]);
    out << '\n';
  }
  out << "family " << report.at("family").get<std::string>() << "/"
      << report.at("link").get<std::string>() << ", n = " << report.at("n").get<long long>()
      << ", phi_hat = " << detail::cell(report.at("phi_hat"))
      << ", converged = " << (report.at("converged").get<bool>() ? "yes" : "no") << '\n';
}

inline void write_effects_table(std::ostream& out, const EffectsSummary& effects) {
  std::size_t label_w = 4;
  for (const auto& e : effects) label_w = std::max(label_w, e.name.size());
  out << detail::pad("", label_w, true) << "  " << detail::pad("Direct", 12) << "  "
      << detail::pad("Indirect", 12) << "  " << detail::pad("Total", 12) << '\n';
  for (const auto& e : effects)
    out << detail::pad(e.name, label_w, true) << "  " << detail::pad(detail::cell(e.direct), 12)
        << "  " << detail::pad(detail::cell(e.indirect), 12) << "  "
        << detail::pad(detail::cell(e.total), 12) << '\n';
}

// ---------------------------------------------------------------------------
// Commands.

namespace detail {

inline std::pair<Eigen::Index, Eigen::Index> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  auto to_int = [&](std::string_view part) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size() || v < 1 || v > 100000)
      throw ValidationError("--grid expects RxC with positive integers, got '" + s + "'");
    return static_cast<Eigen::Index>(v);
  };
  if (x == std::string::npos) throw ValidationError("--grid expects RxC, got '" + s + "'");
  return {to_int(std::string_view(s).substr(0, x)), to_int(std::string_view(s).substr(x + 1))};
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

inline SpatialWeights prepare_weights(const std::string& path, const std::string& format,
                                      bool standardize, std::ostream& err) {
  SpatialWeights w = load_weights(path, parse_weights_format(format));
  if (!standardize) return w;
  const auto r = row_standardize_report(w);
  if (r.empty_rows > 0)
    err << "warning: " << r.empty_rows << " unit(s) have no neighbors; their rows stay zero\n";
  return r.weights;
}

inline FamilySpec make_spec(const std::string& family, const std::string& link,
                            std::optional<double> nb_shape) {
  const Family f = parse_family(family);
  std::optional<Link> l;
  if (!link.empty()) l = parse_link(link);
  if (f != Family::NegativeBinomial) nb_shape.reset();
  return FamilySpec::make(f, l, nb_shape);
}

}  // namespace detail

struct FitArgs {
  std::string data;
  std::string weights;
  std::string weights_format = "edge-list";
  std::string family;
  std::string link;
  std::string response;
  std::vector<std::string> covariates;
  std::string trials;
  std::string response_kind = "auto";
  bool no_intercept = false;
  bool no_standardize = false;
  std::optional<double> rho_fixed;
  double eps_rho = FitConfig{}.eps_rho;
  double eps_beta = FitConfig{}.eps_beta;
  int max_outer = FitConfig{}.max_outer;
  std::string rho_step_beta = "glm";
  bool var_rho_closed_form = false;
  std::optional<double> nb_shape;
  std::string out;
  bool table = false;
};

inline int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const FamilySpec spec = detail::make_spec(a.family, a.link, a.nb_shape);
  FitContext ctx;
  ctx.columns.response = a.response;
  ctx.columns.covariates = a.covariates;
  if (!a.trials.empty()) ctx.columns.trials = a.trials;
  ctx.columns.intercept = !a.no_intercept;
  ctx.columns.response_kind = parse_response_kind(a.response_kind);
  ctx.weights_path = a.weights;
  ctx.weights_standardized = !a.no_standardize;
  ctx.config.eps_rho = a.eps_rho;
  ctx.config.eps_beta = a.eps_beta;
  ctx.config.max_outer = a.max_outer;
  ctx.config.rho_fixed = a.rho_fixed;
  ctx.config.rho_step_beta = parse_rho_step_beta(a.rho_step_beta);
  ctx.config.poisson_closed_form_var_rho = a.var_rho_closed_form;
  ctx.config.validate();

  const DataTable table = load_csv(a.data);
  const ModelData d = build_model_data(table, ctx.columns, spec);
  const SpatialWeights w = detail::prepare_weights(a.weights, a.weights_format, !a.no_standardize, err);
  if (w.n() != d.x.rows())
    throw DimensionError("weights have n = " + std::to_string(w.n()) + " but the data have " +
                         std::to_string(d.x.rows()) + " rows");

  const FitResult f = fit(d.y, d.x, w, spec, ctx.config);
  std::optional<Eigen::Index> skip;
  if (d.intercept) skip = 0;
  const EffectsSummary effects = summarize_effects(f.beta_hat, f.rho_hat, w, d.names, skip);
  const auto report = fit_report(f, d, spec, effects, ctx);

  if (!f.converged)
    err << "warning: estimation did not converge after " << f.n_outer << " outer iterations\n";
  if (!f.var_rho_error.empty()) err << "warning: var_rho unavailable: " << f.var_rho_error << '\n';
  if (!f.vcov_error.empty()) err << "warning: covariance unavailable: " << f.vcov_error << '\n';

  if (!a.out.empty()) {
    auto file = detail::open_out(a.out);
    file << report.dump(2) << '\n';
  }
  if (a.table) write_table(out, report);
  else if (a.out.empty()) out << report.dump(2) << '\n';
  return kExitOk;
}

struct EffectsArgs {
  std::string report;
  std::string weights;
  std::string weights_format = "edge-list";
  bool json = false;
};

inline int cmd_effects(const EffectsArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.report);
  if (!in) throw Error("cannot open report '" + a.report + "'");
  nlohmann::ordered_json r;
  try {
    r = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("report '" + a.report + "' is not valid JSON: " + e.what());
  }
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  double rho = 0.0;
  bool standardized = true;
  bool intercept = false;
  long long n = 0;
  try {
    const auto& coefs = r.at("coefficients");
    beta.resize(static_cast<Eigen::Index>(coefs.size()));
    for (std::size_t k = 0; k < coefs.size(); ++k) {
      names.push_back(coefs[k].at("name").get<std::string>());
      beta[static_cast<Eigen::Index>(k)] = coefs[k].at("estimate").get<double>();
    }
    rho = r.at("rho_hat").get<double>();
    n = r.at("n").get<long long>();
    const auto& model = r.at("model");
    standardized = model.value("weights_standardized", true);
    intercept = model.value("intercept", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error("report '" + a.report + "' lacks a field: " + e.what());
  }
  const SpatialWeights w = detail::prepare_weights(a.weights, a.weights_format, standardized, err);
  if (w.n() != n)
    throw DimensionError("report has n = " + std::to_string(n) + " but the weights have n = " +
                         std::to_string(w.n()));
  std::optional<Eigen::Index> skip;
  if (intercept && !names.empty() && names.front() == kInterceptName) skip = 0;
  const EffectsSummary effects = summarize_effects(beta, rho, w, names, skip);
  if (a.json) {
    nlohmann::ordered_json eff = nlohmann::ordered_json::array();
    for (const auto& e : effects)
      eff.push_back({{"name", e.name}, {"direct", e.direct}, {"indirect", e.indirect}, {"total", e.total}});
    out << eff.dump(2) << '\n';
  } else {
    write_effects_table(out, effects);
  }
  return kExitOk;
}

struct SimulateArgs {
  std::string family;
  std::string grid = "12x12";
  double rho = 0.5;
  int replicates = 100;
  std::optional<std::uint64_t> seed;
  bool compare_glm = false;
  bool timing = false;
  std::optional<double> nb_shape;
  std::string rho_step_beta = "glm";
  std::string csv = "replicates.csv";
  std::string json = "summary.json";
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  SimScenario s;
  s.family = parse_family(a.family);
  std::tie(s.rows, s.cols) = detail::parse_grid(a.grid);
  s.rho_true = a.rho;
  s.replicates = a.replicates;
  if (a.nb_shape) s.nb_shape = *a.nb_shape;
  if (a.seed) {
    s.seed = *a.seed;
  } else {
    s.seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
    err << "seed: " << s.seed << '\n';
  }
  s.validate();
  FitConfig cfg;
  cfg.rho_step_beta = parse_rho_step_beta(a.rho_step_beta);

  RunOptions opt;
  opt.compare_glm = a.compare_glm;
  const SimReport report = run_replicates(s, cfg, opt);
  {
    auto file = detail::open_out(a.csv);
    write_replicates_csv(file, report, a.timing);
  }
  const auto j = to_json(report);
  {
    auto file = detail::open_out(a.json);
    file << j.dump(2) << '\n';
  }
  if (report.failures > 0)
    err << "warning: " << report.failures << " replicate(s) failed\n";
  if (report.nonconverged > 0)
    err << "warning: " << report.nonconverged << " replicate(s) did not converge\n";
  out << "replicates " << s.replicates << ", failures " << report.failures << ", nonconverged "
      << report.nonconverged << ", mean rho_hat "
      << (j["mean_rho_hat"].is_number() ? format_real(j["mean_rho_hat"].get<double>()) : "nan")
      << '\n';
  return report.all_failed ? kExitNumerical : kExitOk;
}

struct GenerateArgs {
  std::string family;
  std::string grid = "12x12";
  double rho = 0.5;
  std::uint64_t seed = SimScenario{}.seed;
  int replicate = 0;
  std::optional<double> nb_shape;
  std::string data = "data.csv";
  std::string weights = "weights.txt";
  std::string weights_format = "edge-list";
};

/// Writes one simulated dataset as CSV (y, x1, x2[, trials]) plus the binary
/// rook adjacency, ready for `fit`.
inline int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream&) {
  SimScenario s;
  s.family = parse_family(a.family);
  std::tie(s.rows, s.cols) = detail::parse_grid(a.grid);
  s.rho_true = a.rho;
  s.seed = a.seed;
  if (a.nb_shape) s.nb_shape = *a.nb_shape;
  s.validate();
  if (a.replicate < 0) throw ValidationError("--replicate must be >= 0");
  const SimDataset d = simulate_dataset(s, a.replicate);
  const bool binomial = s.family == Family::Binomial;
  {
    auto file = detail::open_out(a.data);
    file << "y,x1,x2" << (binomial ? ",trials" : "") << '\n';
    for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
      const auto& obs = d.y[static_cast<std::size_t>(i)];
      file << format_real(obs.y) << ',' << format_real(d.x(i, 1)) << ',' << format_real(d.x(i, 2));
      if (binomial) file << ',' << obs.trials;
      file << '\n';
    }
  }
  save_weights(a.weights, rook_adjacency(s.rows, s.cols), parse_weights_format(a.weights_format));
  out << "wrote " << a.data << " and " << a.weights << " (n = " << s.n() << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point.

/// Parses `args` (without the program name) and runs one command.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generalized spatial autoregressive models"};
  app.name("gsar");
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to CSV data and a weights file");
  fit_cmd->add_option("--data", fa.data, "CSV file with a header row")->required();
  fit_cmd->add_option("--weights", fa.weights, "Spatial weights file")->required();
  fit_cmd->add_option("--weights-format", fa.weights_format, "edge-list or gal")->capture_default_str();
  fit_cmd->add_option("--family", fa.family, "normal, binomial, poisson, gamma, negative_binomial")->required();
  fit_cmd->add_option("--link", fa.link, "Link (defaults to the canonical one)");
  fit_cmd->add_option("--response", fa.response, "Response column")->required();
  fit_cmd->add_option("--covariates", fa.covariates, "Covariate columns, comma separated")
      ->delimiter(',');
  fit_cmd->add_option("--trials", fa.trials, "Trials column (binomial)");
  fit_cmd->add_option("--response-kind", fa.response_kind, "Binomial response: auto, proportion or successes")
      ->capture_default_str();
  fit_cmd->add_flag("--no-intercept", fa.no_intercept, "Do not add an intercept column");
  fit_cmd->add_flag("--no-standardize", fa.no_standardize, "Use the weights as given");
  fit_cmd->add_option("--rho-fixed", fa.rho_fixed, "Hold rho at this value");
  fit_cmd->add_option("--eps-rho", fa.eps_rho, "Outer tolerance on rho")->capture_default_str();
  fit_cmd->add_option("--eps-beta", fa.eps_beta, "Inner tolerance on beta")->capture_default_str();
  fit_cmd->add_option("--max-outer", fa.max_outer, "Outer iteration limit")->capture_default_str();
  fit_cmd->add_option("--rho-step-beta", fa.rho_step_beta, "Beta used by the rho search: glm or gee")
      ->capture_default_str();
  fit_cmd->add_flag("--var-rho-closed-form", fa.var_rho_closed_form,
                    "Poisson: analytic curvature for Var(rho_hat)");
  fit_cmd->add_option("--nb-shape", fa.nb_shape, "Negative binomial shape");
  fit_cmd->add_option("--out", fa.out, "Write the JSON report here");
  fit_cmd->add_flag("--table", fa.table, "Print a coefficient table");

  EffectsArgs ea;
  auto* eff_cmd = app.add_subcommand("effects", "Recompute impacts from a saved fit report");
  eff_cmd->add_option("--report", ea.report, "JSON report written by fit")->required();
  eff_cmd->add_option("--weights", ea.weights, "Weights file used for the fit")->required();
  eff_cmd->add_option("--weights-format", ea.weights_format, "edge-list or gal")->capture_default_str();
  eff_cmd->add_flag("--json", ea.json, "Print JSON instead of a table");

  SimulateArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo recovery study on a rook grid");
  sim_cmd->add_option("--family", sa.family, "poisson, gamma, binomial, ...")->required();
  sim_cmd->add_option("--grid", sa.grid, "Grid as RxC")->capture_default_str();
  sim_cmd->add_option("--rho", sa.rho, "True rho, |rho| <= 0.95")->capture_default_str();
  sim_cmd->add_option("--replicates", sa.replicates, "Number of replicates")->capture_default_str();
  sim_cmd->add_option("--seed", sa.seed, "Master seed (printed when generated)");
  sim_cmd->add_flag("--compare-glm", sa.compare_glm, "Add the GLM-with-Wy baseline column");
  sim_cmd->add_flag("--timing", sa.timing, "Add a runtime_ms column (not reproducible)");
  sim_cmd->add_option("--nb-shape", sa.nb_shape, "Negative binomial shape");
  sim_cmd->add_option("--rho-step-beta", sa.rho_step_beta, "glm or gee")->capture_default_str();
  sim_cmd->add_option("--csv", sa.csv, "Replicate CSV output")->capture_default_str();
  sim_cmd->add_option("--json", sa.json, "Aggregate JSON output")->capture_default_str();

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Write one simulated dataset and its weights");
  gen_cmd->add_option("--family", ga.family, "poisson, gamma, binomial, ...")->required();
  gen_cmd->add_option("--grid", ga.grid, "Grid as RxC")->capture_default_str();
  gen_cmd->add_option("--rho", ga.rho, "True rho")->capture_default_str();
  gen_cmd->add_option("--seed", ga.seed, "Master seed")->capture_default_str();
  gen_cmd->add_option("--replicate", ga.replicate, "Replicate index")->capture_default_str();
  gen_cmd->add_option("--nb-shape", ga.nb_shape, "Negative binomial shape");
  gen_cmd->add_option("--data", ga.data, "CSV output")->capture_default_str();
  gen_cmd->add_option("--weights", ga.weights, "Weights output")->capture_default_str();
  gen_cmd->add_option("--weights-format", ga.weights_format, "edge-list or gal")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fa, out, err);
    if (*eff_cmd) return cmd_effects(ea, out, err);
    if (*sim_cmd) return cmd_simulate(sa, out, err);
    if (*gen_cmd) return cmd_generate(ga, out, err);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace gsar::cli
