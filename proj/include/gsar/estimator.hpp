#pragma once

// Generalized spatial autoregressive fit: eta = rho W eta + X beta, i.e.
// eta = A^{-1} X beta with A = I - rho W.
//
// The fit alternates a bounded maximization of the quasi-likelihood profile
// over rho with GEE updates of beta under the working covariance
//   Cov(Y) = D[v]^{1/2} (A^T A)^{-1} D[v]^{1/2},  v_i = V(mu_i) / M_i,
// starting from the independence GLM at rho = 0. The dispersion is held at
// one during the alternation and estimated once at the optimum.

#include <gsar/error.hpp>
#include <gsar/family.hpp>
#include <gsar/glm.hpp>
#include <gsar/optimize.hpp>
#include <gsar/spalg.hpp>
#include <gsar/weights.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gsar {

/// Which beta the rho search in each outer step is run at.
enum class RhoStepBeta {
  /// The independence fit on X~ at the current rho: the outer loop is then
  /// coordinate ascent of the quasi-likelihood in (rho, beta).
  Glm,
  /// The GEE-updated beta at the current rho.
  Gee,
};

inline std::string_view to_string(RhoStepBeta b) { return b == RhoStepBeta::Glm ? "glm" : "gee"; }

inline RhoStepBeta parse_rho_step_beta(std::string_view s) {
  if (s == "glm") return RhoStepBeta::Glm;
  if (s == "gee") return RhoStepBeta::Gee;
  throw ValidationError("unknown rho-step beta '" + std::string(s) + "' (expected glm or gee)");
}

struct FitConfig {
  double eps_beta = 1e-6;
  double eps_rho = 1e-6;
  int max_outer = 50;
  int max_inner = 50;
  std::pair<double, double> rho_bounds{-1.0 + 1e-6, 1.0 - 1e-6};
  std::optional<double> rho_fixed;
  RhoStepBeta rho_step_beta = RhoStepBeta::Glm;
  /// Use the analytic Poisson curvature for Var(rho_hat) instead of the
  /// numeric second difference.
  bool poisson_closed_form_var_rho = false;

  void validate() const {
    if (!(eps_beta > 0.0) || !(eps_rho > 0.0)) throw ValidationError("tolerances must be positive");
    if (max_outer < 1 || max_inner < 1) throw ValidationError("iteration limits must be >= 1");
    const auto [lo, hi] = rho_bounds;
    if (!(lo > -1.0) || !(hi < 1.0) || !(lo < hi))
      throw ValidationError("rho bounds must satisfy -1 < lo < hi < 1");
    if (rho_fixed && !(std::abs(*rho_fixed) < kRhoLimit))
      throw ValidationError("rho_fixed must lie in (-1, 1)");
  }
};

/// One outer step: beta estimated at `rho`, then the rho search at that
/// beta. The profile is recorded at both rho values for the same beta.
struct OuterStep {
  double rho = 0.0;
  double rho_search = 0.0;
  double ql_before = 0.0;
  double ql_after = 0.0;
  int inner_iterations = 0;
  bool inner_converged = false;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  double rho_hat = 0.0;
  /// Beta at which the final rho search ran; rho_hat maximizes its profile.
  Eigen::VectorXd beta_profile;
  /// NaN when n <= p + 1 leaves no residual degrees of freedom.
  double phi_hat = 0.0;
  /// Sandwich J^{-1} B J^{-1}.
  Eigen::MatrixXd vcov_beta;
  /// Model-based phi_hat (X~^T N Cov^{-1} N X~)^{-1}, for comparison.
  Eigen::MatrixXd vcov_beta_model;
  /// Why a covariance matrix is NaN-filled, when one is.
  std::string vcov_error;
  double var_rho = std::numeric_limits<double>::quiet_NaN();
  /// Why var_rho is NaN, when it is.
  std::string var_rho_error;
  Eigen::VectorXd eta_hat;
  Eigen::VectorXd mu_hat;
  Eigen::VectorXd pearson_residuals;
  int n_outer = 0;
  int n_inner_total = 0;
  bool converged = false;
  double ql_at_optimum = 0.0;
  std::vector<OuterStep> trace;
};

// ---------------------------------------------------------------------------
// Profile quasi-likelihood in rho.

/// sum_i ql(y_i, mu_i) with mu = g^{-1}(A^{-1} X beta). Normal terms are
/// divided by phi (A^T A)^{-1}_ii.
inline double profile_ql(const SpatialOperator& op, const Eigen::VectorXd& beta,
                         const Observations& y, const Eigen::MatrixXd& x, const FamilySpec& spec,
                         double phi = 1.0) {
  const Eigen::VectorXd eta = op.solve_A(Eigen::VectorXd(x * beta));
  Eigen::VectorXd scale;
  if (spec.family() == Family::Normal) scale = phi * op.ata_inv_diag();
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    double q = ql_kernel(spec, y[idx], inv_link(spec, eta[i]), idx);
    if (spec.family() == Family::Normal) q /= scale[i];
    total += q;
  }
  if (!std::isfinite(total)) throw NumericalError("nonfinite quasi-likelihood profile");
  return total;
}

inline double profile_ql(double rho, const Eigen::VectorXd& beta, const Observations& y,
                         const Eigen::MatrixXd& x, const SpatialWeights& w,
                         const FamilySpec& spec, double phi = 1.0) {
  return profile_ql(SpatialOperator(w, rho), beta, y, x, spec, phi);
}

/// argmax of the profile over cfg.rho_bounds, or cfg.rho_fixed when set.
/// `previous`, when given, is a candidate the search will not fall below.
inline double maximize_rho(const Eigen::VectorXd& beta, const Observations& y,
                           const Eigen::MatrixXd& x, const SpatialWeights& w,
                           const FamilySpec& spec, double phi, const FitConfig& cfg,
                           std::optional<double> previous = std::nullopt) {
  if (cfg.rho_fixed) return *cfg.rho_fixed;
  auto objective = [&](double rho) {
    try {
      return profile_ql(rho, beta, y, x, w, spec, phi);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  const auto [lo, hi] = cfg.rho_bounds;
  return maximize_bounded(objective, lo, hi, {}, previous).argmax;
}

// ---------------------------------------------------------------------------
// GEE update of beta at fixed rho.

struct BetaUpdate {
  Eigen::VectorXd beta;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

/// Returns G = A D[N / sqrt(v)] X~ and r = A D[N / sqrt(v)] z, so that the
/// GEE normal equations X~^T N Cov^{-1} N X~ beta = X~^T N Cov^{-1} N z read
/// G^T G beta = G^T r.
struct WhitenedSystem {
  Eigen::MatrixXd g;
  Eigen::VectorXd r;
};

inline WhitenedSystem whiten(const SpatialOperator& op, const Eigen::MatrixXd& x_tilde,
                             const Eigen::VectorXd& beta, const Observations& y,
                             const FamilySpec& spec) {
  const Eigen::Index n = x_tilde.rows();
  const Eigen::VectorXd eta = x_tilde * beta;
  Eigen::VectorXd scale(n);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& obs = y[static_cast<std::size_t>(i)];
    const double mu = inv_link(spec, eta[i]);
    const double d = d_inv_link(spec, eta[i]);
    const double v = variance(spec, mu) / obs.trials;
    scale[i] = d / std::sqrt(v);
    z[i] = eta[i] + (obs.y - mu) / d;
  }
  WhitenedSystem sys;
  sys.g = op.apply_A(Eigen::MatrixXd(scale.asDiagonal() * x_tilde));
  sys.r = op.apply_A(Eigen::MatrixXd(scale.cwiseProduct(z))).col(0);
  return sys;
}

inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& g, const Eigen::VectorXd& r) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
  if (qr.rank() < g.cols()) throw NumericalError("weighted GEE normal equations are singular");
  return qr.solve(r);
}

}  // namespace detail

namespace detail {

/// ||A D[v]^{-1/2} (y - mu(beta))||^2 with v held at `v_frozen`.
inline double working_residual(const SpatialOperator& op, const Eigen::MatrixXd& x_tilde,
                               const Eigen::VectorXd& beta, const Observations& y,
                               const FamilySpec& spec, const Eigen::VectorXd& v_frozen) {
  const Eigen::VectorXd eta = x_tilde * beta;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    r[i] = (y[static_cast<std::size_t>(i)].y - inv_link(spec, eta[i])) / std::sqrt(v_frozen[i]);
  const double q = op.apply_A(Eigen::MatrixXd(r)).squaredNorm();
  return std::isfinite(q) ? q : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Iterates beta <- (X~^T N Cov^{-1} N X~)^{-1} X~^T N Cov^{-1} N z with
/// z = X~ beta + N^{-1}(y - mu), X~ = A^{-1} X, until max |delta| <= eps_beta.
/// With v frozen the update is a Gauss-Newton step on the working residual,
/// so a step that increases it is halved.
inline BetaUpdate update_beta(const SpatialOperator& op, const Eigen::VectorXd& beta0,
                              const Observations& y, const Eigen::MatrixXd& x,
                              const FamilySpec& spec, const FitConfig& cfg) {
  const Eigen::MatrixXd x_tilde = op.solve_A(x);
  BetaUpdate out;
  out.beta = beta0;
  for (int it = 1; it <= cfg.max_inner; ++it) {
    const auto sys = detail::whiten(op, x_tilde, out.beta, y, spec);
    const Eigen::VectorXd next = detail::least_squares(sys.g, sys.r);
    if (!next.allFinite()) throw NumericalError("GEE update produced nonfinite coefficients");
    const Eigen::VectorXd v = variance_weights(spec, y, inv_link(spec, Eigen::VectorXd(x_tilde * out.beta)));
    const double q0 = detail::working_residual(op, x_tilde, out.beta, y, spec, v);
    Eigen::VectorXd delta = next - out.beta;
    for (int half = 0; half < 30; ++half) {
      const double q = detail::working_residual(op, x_tilde, out.beta + delta, y, spec, v);
      if (q <= q0 * (1.0 + 1e-10) + 1e-300) break;
      delta *= 0.5;
    }
    const double step = delta.cwiseAbs().maxCoeff();
    out.beta += delta;
    out.iterations = it;
    if (step <= cfg.eps_beta) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline BetaUpdate update_beta(double rho, const Eigen::VectorXd& beta0, const Observations& y,
                              const Eigen::MatrixXd& x, const SpatialWeights& w,
                              const FamilySpec& spec, const FitConfig& cfg) {
  return update_beta(SpatialOperator(w, rho), beta0, y, x, spec, cfg);
}

// ---------------------------------------------------------------------------
// Dispersion and variance estimators.

/// phi_hat = (n - p - 1)^{-1} sum (y_i - mu_i)^2 / [(A^T A)^{-1}_ii v_i].
inline double dispersion(const Observations& y, const Eigen::VectorXd& mu_hat, double rho_hat,
                         const SpatialWeights& w, const FamilySpec& spec, Eigen::Index p) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (mu_hat.size() != n) throw DimensionError("mu_hat does not match the response");
  if (n <= p + 1) throw DimensionError("dispersion needs n > p + 1");
  const Eigen::VectorXd diag = SpatialOperator(w, rho_hat).ata_inv_diag();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& obs = y[static_cast<std::size_t>(i)];
    const double r = obs.y - mu_hat[i];
    sum += r * r / (diag[i] * variance(spec, mu_hat[i]) / obs.trials);
  }
  return sum / static_cast<double>(n - p - 1);
}

/// Everything the variance estimators need at a converged (beta, rho).
struct FitState {
  FitState(Observations y_, Eigen::MatrixXd x_, const SpatialWeights& w, FamilySpec spec_,
           Eigen::VectorXd beta_, double rho_,
           std::pair<double, double> bounds_ = FitConfig{}.rho_bounds)
      : y(std::move(y_)),
        x(std::move(x_)),
        spec(spec_),
        beta(std::move(beta_)),
        rho(rho_),
        bounds(bounds_),
        op(w, rho_) {
    if (static_cast<Eigen::Index>(y.size()) != x.rows() || x.cols() != beta.size())
      throw DimensionError("fit state dimensions do not conform");
    x_tilde = op.solve_A(x);
    eta = x_tilde * beta;
    const Eigen::Index n = x.rows();
    mu.resize(n);
    dmu_deta.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = inv_link(spec, eta[i]);
      dmu_deta[i] = d_inv_link(spec, eta[i]);
    }
    var_w = variance_weights(spec, y, mu);
  }

  Eigen::VectorXd residuals() const {
    Eigen::VectorXd r(mu.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = y[static_cast<std::size_t>(i)].y - mu[i];
    return r;
  }

  Observations y;
  Eigen::MatrixXd x;
  FamilySpec spec;
  Eigen::VectorXd beta;
  double rho;
  std::pair<double, double> bounds;
  SpatialOperator op;
  Eigen::MatrixXd x_tilde;
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
  Eigen::VectorXd dmu_deta;
  /// V(mu_i) / M_i.
  Eigen::VectorXd var_w;
};

/// Bread of the sandwich: J = X~^T D[v]^{1/2} (A^T A)^{-1} D[v]^{1/2} X~.
inline Eigen::MatrixXd sandwich_bread(const FitState& s) {
  const Eigen::MatrixXd t = s.var_w.cwiseSqrt().asDiagonal() * s.x_tilde;
  Eigen::MatrixXd j = t.transpose() * s.op.solve_AtA(t);
  return 0.5 * (j + j.transpose());
}

/// J^{-1} B J^{-1} with B = u u^T, u = X~^T N D[v]^{-1/2} (y - mu).
inline Eigen::MatrixXd sandwich_vcov(const FitState& s) {
  const Eigen::MatrixXd j = sandwich_bread(s);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
  if (!lu.isInvertible()) throw NumericalError("sandwich bread J is singular");
  const Eigen::MatrixXd j_inv = lu.inverse();
  const Eigen::VectorXd scaled =
      s.dmu_deta.cwiseProduct(s.residuals()).cwiseQuotient(s.var_w.cwiseSqrt());
  const Eigen::VectorXd u = s.x_tilde.transpose() * scaled;
  const Eigen::MatrixXd v = j_inv * (u * u.transpose()) * j_inv;
  return 0.5 * (v + v.transpose());
}

/// phi (X~^T N Cov^{-1} N X~)^{-1}.
inline Eigen::MatrixXd model_vcov(const FitState& s, double phi) {
  const auto sys = detail::whiten(s.op, s.x_tilde, s.beta, s.y, s.spec);
  const Eigen::MatrixXd info = sys.g.transpose() * sys.g;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  if (!lu.isInvertible()) throw NumericalError("GEE information matrix is singular");
  const Eigen::MatrixXd v = phi * lu.inverse();
  return 0.5 * (v + v.transpose());
}

enum class VarRhoMethod { Auto, ClosedForm, Numeric };

inline double var_rho_step(double rho_hat) { return 1e-4 * std::max(1.0, std::abs(rho_hat)); }

/// -1 / (second difference of the profile at rho_hat), profile at phi = 1.
inline double var_rho_numeric(const FitState& s) {
  const double h = var_rho_step(s.rho);
  const SpatialWeights& w = s.op.weights();
  return curvature_variance(
      [&](double r) { return profile_ql(r, s.beta, s.y, s.x, w, s.spec, 1.0); }, s.rho, h);
}

/// Normal closed form: 1 / [tr(G)^2 + tr(G^T G) + |G X beta|^2], G = W A^{-1}.
inline double var_rho_normal_closed(const FitState& s) {
  const Eigen::Index n = s.op.n();
  constexpr Eigen::Index block = 256;
  double trace = 0.0;
  double frob = 0.0;
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index width = std::min(block, n - start);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, width);
    for (Eigen::Index k = 0; k < width; ++k) e(start + k, k) = 1.0;
    const Eigen::MatrixXd g = s.op.apply_W(s.op.solve_A(e));
    for (Eigen::Index k = 0; k < width; ++k) trace += g(start + k, k);
    frob += g.squaredNorm();
  }
  const Eigen::VectorXd gxb = s.op.apply_W(Eigen::MatrixXd(s.eta)).col(0);
  const double info = trace * trace + frob + gxb.squaredNorm();
  if (!(info > 0.0)) throw NumericalError("nonpositive information for rho");
  return 1.0 / info;
}

/// Poisson closed form of the observed information in rho, assembled from
/// eta' = A^{-1} W A^{-1} X beta, eta'' = 2 A^{-1} W A^{-1} W A^{-1} X beta,
/// mu' = g^{-1}'(eta) eta', mu'' = g^{-1}''(eta) eta'^2 + g^{-1}'(eta) eta''
/// and ql = y ln mu - mu:
///   info = sum_i [ y_i mu_i'^2 / mu_i^2 - (y_i / mu_i - 1) mu_i'' ].
inline double var_rho_poisson_closed(const FitState& s) {
  const Eigen::VectorXd d1 = s.op.deta_drho(s.x, s.beta);
  const Eigen::VectorXd d2 = s.op.d2eta_drho2(s.x, s.beta);
  double info = 0.0;
  for (Eigen::Index i = 0; i < d1.size(); ++i) {
    const double y = s.y[static_cast<std::size_t>(i)].y;
    const double mu = s.mu[i];
    const double g1 = d_inv_link(s.spec, s.eta[i]);
    const double g2 = d2_inv_link(s.spec, s.eta[i]);
    const double mu1 = g1 * d1[i];
    const double mu2 = g2 * d1[i] * d1[i] + g1 * d2[i];
    info += y * mu1 * mu1 / (mu * mu) - (y / mu - 1.0) * mu2;
  }
  if (!std::isfinite(info) || !(info > 0.0))
    throw NumericalError("nonpositive information for rho");
  return 1.0 / info;
}

inline double var_rho(const FitState& s, VarRhoMethod method = VarRhoMethod::Auto) {
  const double h = var_rho_step(s.rho);
  if (s.rho - h <= s.bounds.first || s.rho + h >= s.bounds.second)
    throw NumericalError("rho_hat = " + std::to_string(s.rho) +
                         " sits on the search boundary; inspect the profile with rho_fixed");
  const Family f = s.spec.family();
  if (method == VarRhoMethod::Auto)
    method = f == Family::Normal ? VarRhoMethod::ClosedForm : VarRhoMethod::Numeric;
  if (method == VarRhoMethod::Numeric) return var_rho_numeric(s);
  if (f == Family::Normal) return var_rho_normal_closed(s);
  if (f == Family::Poisson) return var_rho_poisson_closed(s);
  throw ValidationError("no closed form for Var(rho_hat) in the " +
                        std::string(to_string(f)) + " family");
}

// ---------------------------------------------------------------------------
// The alternating fit.

namespace detail {

/// Next rho for the fixed-point equation F(rho) = rho, where F is the rho
/// search at the beta estimated for rho. Plain alternation sets rho <- F(rho);
/// along the rho/intercept ridge that moves by tiny steps, so once two
/// residuals are known a secant step is taken, kept inside any sign-change
/// bracket and inside the search bounds.
inline double next_rho(const std::vector<OuterStep>& steps, std::pair<double, double> bounds) {
  const OuterStep& last = steps.back();
  const double g_last = last.rho_search - last.rho;
  if (steps.size() < 2) return last.rho_search;
  const OuterStep& prev = steps[steps.size() - 2];
  const double g_prev = prev.rho_search - prev.rho;

  std::optional<std::pair<double, double>> bracket;
  {
    std::vector<std::pair<double, double>> pts;
    for (const auto& s : steps) pts.emplace_back(s.rho, s.rho_search - s.rho);
    std::sort(pts.begin(), pts.end());
    for (std::size_t k = 0; k + 1 < pts.size(); ++k)
      if ((pts[k].second > 0.0) != (pts[k + 1].second > 0.0)) {
        const double ga = pts[k].second;
        const double gb = pts[k + 1].second;
        const double a = pts[k].first;
        const double b = pts[k + 1].first;
        const double falsi = a - ga * (b - a) / (gb - ga);
        bracket = {a, b};
        const double denom = g_last - g_prev;
        double cand = denom != 0.0 ? last.rho - g_last * (last.rho - prev.rho) / denom : falsi;
        const double margin = 1e-3 * (b - a);
        if (!(cand > a + margin && cand < b - margin)) cand = falsi;
        if (!(cand > a + margin && cand < b - margin)) cand = 0.5 * (a + b);
        return cand;
      }
  }

  // No bracket yet: follow the sign of the residual. Use the secant when it
  // points that way, otherwise widen the previous step.
  const double dir = g_last > 0.0 ? 1.0 : -1.0;
  const double denom = g_last - g_prev;
  double cand = std::numeric_limits<double>::quiet_NaN();
  if (denom != 0.0) cand = last.rho - g_last * (last.rho - prev.rho) / denom;
  constexpr double max_step = 0.5;
  if (!std::isfinite(cand) || (cand - last.rho) * dir <= 0.0) {
    const double widened = std::max(2.0 * std::abs(last.rho - prev.rho), 0.05);
    cand = last.rho + dir * std::min(widened, max_step);
  }
  cand = std::clamp(cand, last.rho - max_step, last.rho + max_step);
  if (cand <= bounds.first) cand = 0.5 * (last.rho + bounds.first);
  if (cand >= bounds.second) cand = 0.5 * (last.rho + bounds.second);
  return cand;
}

}  // namespace detail

inline FitResult fit(const Observations& y, const Eigen::MatrixXd& x, const SpatialWeights& w,
                     const FamilySpec& spec, const FitConfig& cfg = {}) {
  cfg.validate();
  validate_inputs(y, x, spec);
  if (w.n() != x.rows())
    throw DimensionError("weights have n = " + std::to_string(w.n()) + " but data have " +
                         std::to_string(x.rows()) + " rows");
  constexpr double phi_working = 1.0;

  FitResult res;
  std::vector<Eigen::VectorXd> betas;

  // beta at rho (independence GLM on X~, then GEE unless the rho search runs
  // at the GLM beta), followed by the rho search at that beta.
  auto evaluate = [&](double rho, const Eigen::VectorXd& warm) {
    const SpatialOperator op(w, rho);
    GlmOptions glm_opt;
    glm_opt.max_iter = std::max(cfg.max_inner, 100);
    Eigen::VectorXd beta = warm;
    bool glm_converged = false;
    int inner = 0;
    try {
      const GlmFit g = fit_glm(y, op.solve_A(x), spec, glm_opt, warm);
      inner = g.iterations;
      if (g.converged && g.beta.allFinite()) {
        beta = g.beta;
        glm_converged = true;
      }
    } catch (const NumericalError&) {
      if (cfg.rho_step_beta == RhoStepBeta::Glm) throw;
    }
    OuterStep step;
    step.rho = rho;
    if (cfg.rho_step_beta == RhoStepBeta::Glm) {
      if (!glm_converged) throw NumericalError("independence fit on A^{-1} X did not converge");
      step.inner_iterations = inner;
      step.inner_converged = true;
    } else {
      const BetaUpdate upd = update_beta(op, beta, y, x, spec, cfg);
      beta = upd.beta;
      step.inner_iterations = upd.iterations;
      step.inner_converged = upd.converged;
    }
    step.ql_before = profile_ql(op, beta, y, x, spec, phi_working);
    step.rho_search = maximize_rho(beta, y, x, w, spec, phi_working, cfg, rho);
    step.ql_after = profile_ql(step.rho_search, beta, y, x, w, spec, phi_working);
    res.n_inner_total += step.inner_iterations;
    res.trace.push_back(step);
    betas.push_back(beta);
  };

  const Eigen::VectorXd beta_glm = fit_glm(y, x, spec).beta;
  evaluate(0.0, beta_glm);
  bool outer_converged = false;
  for (int outer = 1;; ++outer) {
    res.n_outer = outer;
    const OuterStep& last = res.trace.back();
    if (std::abs(last.rho_search - last.rho) <= cfg.eps_rho) {
      outer_converged = true;
      break;
    }
    if (outer >= cfg.max_outer) break;
    double cand = detail::next_rho(res.trace, cfg.rho_bounds);
    const double anchor = last.rho;
    for (int attempt = 0;; ++attempt) {
      // Warm start from the closest rho already visited.
      std::size_t near = 0;
      for (std::size_t k = 1; k < res.trace.size(); ++k)
        if (std::abs(res.trace[k].rho - cand) < std::abs(res.trace[near].rho - cand)) near = k;
      try {
        evaluate(cand, betas[near]);
        break;
      } catch (const NumericalError&) {
        if (attempt >= 5) throw;
        cand = 0.5 * (cand + anchor);
      }
    }
  }

  // Final step: rho from the last search, beta re-estimated at it by the
  // independence fit followed by the GEE update.
  const double rho = res.trace.back().rho_search;
  const SpatialOperator final_op(w, rho);
  Eigen::VectorXd final_start = betas.back();
  try {
    GlmOptions glm_opt;
    glm_opt.max_iter = std::max(cfg.max_inner, 100);
    const GlmFit g = fit_glm(y, final_op.solve_A(x), spec, glm_opt, final_start);
    if (g.converged && g.beta.allFinite()) final_start = g.beta;
  } catch (const NumericalError&) {
  }
  const BetaUpdate final_beta = update_beta(final_op, final_start, y, x, spec, cfg);
  res.n_inner_total += final_beta.iterations;
  const Eigen::VectorXd& beta = final_beta.beta;

  res.beta_hat = beta;
  res.rho_hat = rho;
  res.beta_profile = betas.back();
  res.converged = outer_converged && final_beta.converged;

  const FitState state(y, x, w, spec, beta, rho, cfg.rho_bounds);
  res.eta_hat = state.eta;
  res.mu_hat = state.mu;
  res.phi_hat = x.rows() > x.cols() + 1 ? dispersion(y, state.mu, rho, w, spec, x.cols())
                                         : std::numeric_limits<double>::quiet_NaN();
  const Eigen::VectorXd diag = state.op.ata_inv_diag();
  res.pearson_residuals =
      state.residuals().cwiseQuotient(diag.cwiseProduct(state.var_w).cwiseSqrt());
  const Eigen::Index p = x.cols();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    res.vcov_beta = sandwich_vcov(state);
  } catch (const NumericalError& e) {
    res.vcov_beta = Eigen::MatrixXd::Constant(p, p, nan);
    res.vcov_error = e.what();
  }
  try {
    res.vcov_beta_model = model_vcov(state, res.phi_hat);
  } catch (const NumericalError& e) {
    res.vcov_beta_model = Eigen::MatrixXd::Constant(p, p, nan);
    if (res.vcov_error.empty()) res.vcov_error = e.what();
  }
  res.ql_at_optimum = profile_ql(state.op, beta, y, x, spec, phi_working);
  try {
    res.var_rho = var_rho(state, spec.family() == Family::Poisson && cfg.poisson_closed_form_var_rho
                                     ? VarRhoMethod::ClosedForm
                                     : VarRhoMethod::Auto);
  } catch (const Error& e) {
    res.var_rho_error = e.what();
  }
  return res;
}

/// Standard errors from the diagonal of a covariance matrix.
inline Eigen::VectorXd standard_errors(const Eigen::MatrixXd& vcov) {
  return vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

}  // namespace gsar
