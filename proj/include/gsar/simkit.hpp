#pragma once

// Seeded data-generating processes on rook grids and the Monte Carlo
// replication harness.
//
// Every random draw comes from an engine keyed by (seed, replicate, stream),
// so a replicate's dataset does not depend on which thread produced it or in
// which order replicates ran.

#include <gsar/effects.hpp>
#include <gsar/error.hpp>
#include <gsar/estimator.hpp>
#include <gsar/family.hpp>
#include <gsar/glm.hpp>
#include <gsar/spalg.hpp>
#include <gsar/weights.hpp>

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace gsar {

// ---------------------------------------------------------------------------
// Random streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { Covariates = 1, Trials = 2, Response = 3 };

/// Independent engine for (seed, replicate, stream).
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t replicate, Stream stream) {
  const std::uint64_t k0 = splitmix64(seed);
  const std::uint64_t k1 = splitmix64(k0 ^ splitmix64(replicate + 0x632be59bd9b4e019ULL));
  const std::uint64_t k2 = splitmix64(k1 ^ splitmix64(static_cast<std::uint64_t>(stream)));
  std::seed_seq seq{static_cast<std::uint32_t>(k2), static_cast<std::uint32_t>(k2 >> 32),
                    static_cast<std::uint32_t>(k1), static_cast<std::uint32_t>(k1 >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Scenarios.

inline constexpr double kMaxSimRho = 0.95;

struct SimScenario {
  Family family = Family::Poisson;
  Eigen::Index rows = 12;
  Eigen::Index cols = 12;
  double rho_true = 0.5;
  Eigen::VectorXd beta_true = (Eigen::VectorXd(3) << 0.5, -0.5, 1.0).finished();
  int replicates = 100;
  std::uint64_t seed = 20240601;
  int max_trials = 100;
  double gamma_shape = 1.0;
  /// Negative-binomial shape (only used by that family).
  double nb_shape = 5.0;

  Eigen::Index n() const { return rows * cols; }

  FamilySpec family_spec() const {
    return family == Family::NegativeBinomial ? FamilySpec::make(family, std::nullopt, nb_shape)
                                              : FamilySpec::make(family);
  }

  void validate() const {
    if (rows < 1 || cols < 1 || rows * cols < 4) throw ValidationError("grid needs rows*cols >= 4");
    if (!(std::abs(rho_true) <= kMaxSimRho))
      throw ValidationError("rho_true must lie in [-0.95, 0.95]");
    if (beta_true.size() != 3) throw ValidationError("beta_true needs (b0, b1, b2)");
    if (replicates < 1) throw ValidationError("replicates must be >= 1");
    if (max_trials < 1) throw ValidationError("max_trials must be >= 1");
    if (!(gamma_shape > 0.0) || !(nb_shape > 0.0)) throw ValidationError("shapes must be positive");
  }
};

/// The grid presets n = 49, 81, 144, 400.
inline SimScenario preset(Family family, Eigen::Index n, double rho) {
  SimScenario s;
  s.family = family;
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n || (n != 49 && n != 81 && n != 144 && n != 400))
    throw ValidationError("preset grids are n = 49, 81, 144, 400");
  s.rows = s.cols = side;
  s.rho_true = rho;
  return s;
}

struct SimDataset {
  Observations y;
  Eigen::MatrixXd x;
  SpatialWeights w;
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
};

/// Draws one replicate: x1 ~ N(0,1), x2 ~ N(2,1), eta = A^{-1} X beta,
/// mu = g^{-1}(eta) and the response from the scenario's family.
inline SimDataset simulate_dataset(const SimScenario& scn, int replicate_index,
                                   const std::optional<SpatialWeights>& weights = std::nullopt) {
  scn.validate();
  const FamilySpec spec = scn.family_spec();
  SpatialWeights w = weights ? *weights : build_rook_grid(scn.rows, scn.cols);
  const Eigen::Index n = w.n();
  if (n != scn.n()) throw DimensionError("weights do not match the scenario grid");
  const auto rep = static_cast<std::uint64_t>(replicate_index);

  Eigen::MatrixXd x(n, 3);
  {
    auto eng = stream_engine(scn.seed, rep, Stream::Covariates);
    std::normal_distribution<double> x1(0.0, 1.0);
    std::normal_distribution<double> x2(2.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = x1(eng);
      x(i, 2) = x2(eng);
    }
  }
  const SpatialOperator op(w, scn.rho_true);
  const Eigen::VectorXd xb = x * scn.beta_true;

  auto eng = stream_engine(scn.seed, rep, Stream::Response);
  Eigen::VectorXd eta;
  if (spec.family() == Family::Normal) {
    // y = A^{-1}(X beta + e) so that Cov(y) = (A^T A)^{-1}.
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = noise(eng);
    eta = op.solve_A(xb);
    const Eigen::VectorXd yv = op.solve_A(Eigen::VectorXd(xb + e));
    SimDataset out{Observations(static_cast<std::size_t>(n)), x, w, eta, eta};
    for (Eigen::Index i = 0; i < n; ++i) out.y[static_cast<std::size_t>(i)].y = yv[i];
    return out;
  }
  eta = op.solve_A(xb);
  if (!eta.allFinite()) throw NumericalError("nonfinite linear predictor");

  std::vector<int> trials(static_cast<std::size_t>(n), 1);
  if (spec.family() == Family::Binomial) {
    auto teng = stream_engine(scn.seed, rep, Stream::Trials);
    std::uniform_int_distribution<int> du(1, scn.max_trials);
    for (auto& m : trials) m = du(teng);
  }

  Eigen::VectorXd mu(n);
  Observations y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    mu[i] = inv_link(spec, eta[i]);
    if (!std::isfinite(mu[i]) || mu[i] > 1e12)
      throw NumericalError("mean out of range at unit " + std::to_string(i));
    y[idx].trials = trials[idx];
    switch (spec.family()) {
      case Family::Poisson:
        y[idx].y = static_cast<double>(std::poisson_distribution<long long>(mu[i])(eng));
        break;
      case Family::Gamma: {
        // Mean mu, shape k: scale mu / k, variance mu^2 / k.
        double draw = std::gamma_distribution<double>(scn.gamma_shape, mu[i] / scn.gamma_shape)(eng);
        y[idx].y = std::max(draw, std::numeric_limits<double>::min());
        break;
      }
      case Family::Binomial: {
        const int s = std::binomial_distribution<int>(trials[idx], mu[i])(eng);
        y[idx].y = static_cast<double>(s) / trials[idx];
        break;
      }
      case Family::NegativeBinomial: {
        const double lambda =
            std::gamma_distribution<double>(scn.nb_shape, mu[i] / scn.nb_shape)(eng);
        y[idx].y = static_cast<double>(
            std::poisson_distribution<long long>(std::max(lambda, 1e-300))(eng));
        break;
      }
      case Family::Normal:
        break;
    }
  }
  return {std::move(y), std::move(x), std::move(w), std::move(eta), std::move(mu)};
}

// ---------------------------------------------------------------------------
// Replication harness.

enum class ReplicateStatus { Ok, NotConverged, Failed };

inline std::string_view to_string(ReplicateStatus s) {
  switch (s) {
    case ReplicateStatus::Ok: return "ok";
    case ReplicateStatus::NotConverged: return "nonconverged";
    case ReplicateStatus::Failed: return "failed";
  }
  return "?";
}

struct ReplicateRow {
  int index = 0;
  ReplicateStatus status = ReplicateStatus::Failed;
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd beta_hat;
  /// Coefficient of W y in the GLM-with-lag baseline, when requested.
  double glm_wy = std::numeric_limits<double>::quiet_NaN();
  double runtime_ms = 0.0;
  std::string error;

  bool converged() const { return status == ReplicateStatus::Ok; }
  bool has_estimates() const { return status != ReplicateStatus::Failed; }
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  int count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double bias = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
};

struct SimReport {
  SimScenario scenario;
  bool compare_glm = false;
  std::vector<ReplicateRow> rows;
  std::vector<ParameterSummary> aggregates;
  int failures = 0;
  int nonconverged = 0;
  bool all_failed = false;

  const ParameterSummary& summary(const std::string& name) const {
    for (const auto& s : aggregates)
      if (s.name == name) return s;
    throw ValidationError("no aggregate named '" + name + "'");
  }
};

/// Linear interpolation between order statistics (R's type 7).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ParameterSummary summarize_parameter(std::string name, double truth,
                                            const std::vector<double>& values) {
  ParameterSummary s;
  s.name = std::move(name);
  s.truth = truth;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.bias = s.mean - truth;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  s.q1 = quantile_sorted(sorted, 0.25);
  s.median = quantile_sorted(sorted, 0.5);
  s.q3 = quantile_sorted(sorted, 0.75);
  return s;
}

/// Recomputes failure counts and per-parameter aggregates from the rows,
/// which are first put in replicate order.
inline void aggregate(SimReport& report) {
  std::sort(report.rows.begin(), report.rows.end(),
            [](const ReplicateRow& a, const ReplicateRow& b) { return a.index < b.index; });
  report.failures = 0;
  report.nonconverged = 0;
  const auto p = report.scenario.beta_true.size();
  std::vector<double> rho;
  std::vector<std::vector<double>> beta(static_cast<std::size_t>(p));
  std::vector<double> glm;
  for (const auto& r : report.rows) {
    if (r.status == ReplicateStatus::Failed) {
      ++report.failures;
      continue;
    }
    if (r.status == ReplicateStatus::NotConverged) ++report.nonconverged;
    rho.push_back(r.rho_hat);
    for (Eigen::Index k = 0; k < p; ++k) beta[static_cast<std::size_t>(k)].push_back(r.beta_hat[k]);
    if (report.compare_glm && std::isfinite(r.glm_wy)) glm.push_back(r.glm_wy);
  }
  report.all_failed = report.failures == static_cast<int>(report.rows.size());
  report.aggregates.clear();
  report.aggregates.push_back(summarize_parameter("rho_hat", report.scenario.rho_true, rho));
  for (Eigen::Index k = 0; k < p; ++k)
    report.aggregates.push_back(summarize_parameter("beta_hat_" + std::to_string(k),
                                                    report.scenario.beta_true[k],
                                                    beta[static_cast<std::size_t>(k)]));
  if (report.compare_glm)
    report.aggregates.push_back(summarize_parameter("glm_wy_coef", report.scenario.rho_true, glm));
}

/// GLM with the spatial lag W y as an extra covariate; returns its coefficient.
inline double glm_lag_baseline(const SimDataset& d, const FamilySpec& spec) {
  Eigen::VectorXd yv(d.x.rows());
  for (Eigen::Index i = 0; i < yv.size(); ++i) yv[i] = d.y[static_cast<std::size_t>(i)].y;
  Eigen::MatrixXd xa(d.x.rows(), d.x.cols() + 1);
  xa << d.x, d.w.matrix() * yv;
  return fit_glm(d.y, xa, spec).beta[d.x.cols()];
}

struct RunOptions {
  /// 0: GSAR_THREADS, else hardware concurrency.
  unsigned threads = 0;
  bool compare_glm = false;
};

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GSAR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline ReplicateRow run_one(const SimScenario& scn, const SpatialWeights& w, const FitConfig& cfg,
                            int index, bool compare_glm) {
  ReplicateRow row;
  row.index = index;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const SimDataset d = simulate_dataset(scn, index, w);
    const FitResult f = fit(d.y, d.x, d.w, scn.family_spec(), cfg);
    row.rho_hat = f.rho_hat;
    row.beta_hat = f.beta_hat;
    row.status = f.converged ? ReplicateStatus::Ok : ReplicateStatus::NotConverged;
    if (compare_glm) {
      try {
        row.glm_wy = glm_lag_baseline(d, scn.family_spec());
      } catch (const Error&) {
      }
    }
  } catch (const std::exception& e) {
    row.status = ReplicateStatus::Failed;
    row.error = e.what();
  }
  row.runtime_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

/// Fits every replicate of the scenario; failures are recorded, not raised.
inline SimReport run_replicates(const SimScenario& scn, const FitConfig& cfg = {},
                                const RunOptions& opt = {}) {
  scn.validate();
  cfg.validate();
  SimReport report;
  report.scenario = scn;
  report.compare_glm = opt.compare_glm;
  report.rows.resize(static_cast<std::size_t>(scn.replicates));
  const SpatialWeights w = build_rook_grid(scn.rows, scn.cols);

  const unsigned threads =
      std::min<unsigned>(resolve_threads(opt.threads), static_cast<unsigned>(scn.replicates));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < scn.replicates; i = next++)
      report.rows[static_cast<std::size_t>(i)] = run_one(scn, w, cfg, i, opt.compare_glm);
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  aggregate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Report files.

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per replicate. The runtime column is opt-in so that default output
/// is reproducible byte for byte.
inline void write_replicates_csv(std::ostream& out, const SimReport& report, bool with_runtime) {
  const auto p = report.scenario.beta_true.size();
  out << "index,status,converged,rho_hat";
  for (Eigen::Index k = 0; k < p; ++k) out << ",beta_hat_" << k;
  if (report.compare_glm) out << ",glm_wy_coef";
  if (with_runtime) out << ",runtime_ms";
  out << '\n';
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : report.rows) {
    out << r.index << ',' << to_string(r.status) << ',' << (r.converged() ? 1 : 0) << ','
        << format_real(r.has_estimates() ? r.rho_hat : nan);
    for (Eigen::Index k = 0; k < p; ++k)
      out << ',' << format_real(r.has_estimates() ? r.beta_hat[k] : nan);
    if (report.compare_glm) out << ',' << format_real(r.glm_wy);
    if (with_runtime) out << ',' << format_real(r.runtime_ms);
    out << '\n';
  }
}

inline nlohmann::ordered_json to_json(const SimReport& report) {
  const auto& s = report.scenario;
  nlohmann::ordered_json j;
  j["family"] = std::string(to_string(s.family));
  j["link"] = std::string(to_string(default_link(s.family)));
  j["grid"] = {{"rows", s.rows}, {"cols", s.cols}};
  j["n"] = s.n();
  j["rho_true"] = s.rho_true;
  j["beta_true"] = std::vector<double>(s.beta_true.data(), s.beta_true.data() + s.beta_true.size());
  j["replicates"] = s.replicates;
  j["seed"] = s.seed;
  j["failures"] = report.failures;
  j["nonconverged"] = report.nonconverged;
  j["all_failed"] = report.all_failed;
  const auto& rho = report.summary("rho_hat");
  j["mean_rho_hat"] = std::isfinite(rho.mean) ? nlohmann::ordered_json(rho.mean) : nullptr;
  auto num = [](double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json agg = nlohmann::ordered_json::object();
  for (const auto& a : report.aggregates) {
    agg[a.name] = {{"truth", a.truth}, {"count", a.count}, {"mean", num(a.mean)},
                   {"bias", num(a.bias)}, {"sd", num(a.sd)}, {"q1", num(a.q1)},
                   {"median", num(a.median)}, {"q3", num(a.q3)}};
  }
  j["aggregates"] = agg;
  return j;
}

/// Parses a replicate CSV written by write_replicates_csv back into rows.
inline std::vector<ReplicateRow> read_replicates_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty replicate CSV", 1);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) header.push_back(c);
  }
  std::vector<std::size_t> beta_cols;
  std::optional<std::size_t> rho_col;
  std::optional<std::size_t> glm_col;
  std::optional<std::size_t> status_col;
  std::optional<std::size_t> index_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].rfind("beta_hat_", 0) == 0) beta_cols.push_back(c);
    if (header[c] == "rho_hat") rho_col = c;
    if (header[c] == "glm_wy_coef") glm_col = c;
    if (header[c] == "status") status_col = c;
    if (header[c] == "index") index_col = c;
  }
  if (!rho_col || !status_col || !index_col) throw ParseError("missing replicate columns", 1);
  std::vector<ReplicateRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != header.size()) throw ParseError("wrong number of cells", lineno);
    ReplicateRow r;
    r.index = std::stoi(cells[*index_col]);
    const auto& st = cells[*status_col];
    r.status = st == "ok" ? ReplicateStatus::Ok
               : st == "nonconverged" ? ReplicateStatus::NotConverged
                                      : ReplicateStatus::Failed;
    r.rho_hat = std::stod(cells[*rho_col]);
    r.beta_hat.resize(static_cast<Eigen::Index>(beta_cols.size()));
    for (std::size_t k = 0; k < beta_cols.size(); ++k)
      r.beta_hat[static_cast<Eigen::Index>(k)] = std::stod(cells[beta_cols[k]]);
    if (glm_col) r.glm_wy = std::stod(cells[*glm_col]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gsar
