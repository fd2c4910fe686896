#pragma once

// Independence-model IRLS fit, used for the starting values of the spatial
// fit and as the reference it must reproduce at rho = 0.

#include <gsar/error.hpp>
#include <gsar/family.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gsar {

using Observations = std::vector<Observation>;

struct GlmOptions {
  double tol = 1e-10;
  int max_iter = 100;
};

struct GlmFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
  int iterations = 0;
  bool converged = false;
};

inline void validate_inputs(const Observations& y, const Eigen::MatrixXd& x, const FamilySpec& spec) {
  if (static_cast<Eigen::Index>(y.size()) != x.rows())
    throw DimensionError("response has " + std::to_string(y.size()) + " rows but design has " +
                         std::to_string(x.rows()));
  if (x.rows() <= x.cols())
    throw DimensionError("need more observations than coefficients (n = " +
                         std::to_string(x.rows()) + ", p = " + std::to_string(x.cols()) + ")");
  if (!x.allFinite()) throw ValidationError("design matrix has nonfinite entries");
  for (std::size_t i = 0; i < y.size(); ++i) validate_observation(spec, y[i], i);
}

inline void require_full_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols())
    throw NumericalError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                         " < " + std::to_string(x.cols()) + ")");
}

inline Eigen::VectorXd inv_link(const FamilySpec& spec, const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = inv_link(spec, eta[i]);
  return mu;
}

/// Per-observation variance weights V(mu_i) / M_i.
inline Eigen::VectorXd variance_weights(const FamilySpec& spec, const Observations& y,
                                        const Eigen::VectorXd& mu) {
  Eigen::VectorXd v(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    v[i] = variance(spec, mu[i]) / y[static_cast<std::size_t>(i)].trials;
  return v;
}

/// sum_i ql(y_i, g^{-1}(eta_i)); -inf when any term is nonfinite.
inline double total_ql(const FamilySpec& spec, const Observations& y, const Eigen::VectorXd& eta) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    total += ql_kernel(spec, y[idx], inv_link(spec, eta[i]), idx);
  }
  return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
}

/// Antiderivative in mu of the score (y - mu) / V(mu), summed. Equal to
/// total_ql except for the negative binomial, whose tabulated kernel is not
/// the integral of its score: y ln mu - (y + k) ln(1 + mu / k) there.
inline double score_potential(const FamilySpec& spec, const Observations& y,
                              const Eigen::VectorXd& eta) {
  if (spec.family() != Family::NegativeBinomial) return total_ql(spec, y, eta);
  const double k = spec.aux();
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const auto& obs = y[static_cast<std::size_t>(i)];
    const double mu = inv_link(spec, eta[i]);
    total += (obs.y > 0.0 ? obs.y * std::log(mu) : 0.0) - (obs.y + k) * std::log1p(mu / k);
  }
  return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
}

/// Iteratively reweighted least squares for the quasi-likelihood score
/// X^T N V^{-1} (y - mu) = 0 with prior weights from binomial trials. Steps
/// that lower the score potential are halved.
inline GlmFit fit_glm(const Observations& y, const Eigen::MatrixXd& x, const FamilySpec& spec,
                      const GlmOptions& opt = {},
                      std::optional<Eigen::VectorXd> start = std::nullopt) {
  validate_inputs(y, x, spec);
  require_full_rank(x);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  GlmFit fit;
  Eigen::VectorXd eta(n);
  Eigen::VectorXd mu(n);
  if (start) {
    if (start->size() != p) throw DimensionError("starting beta has the wrong length");
    fit.beta = *start;
    eta = x * fit.beta;
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = inv_link(spec, eta[i]);
  } else {
    fit.beta = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = initial_mean(spec, y[static_cast<std::size_t>(i)]);
      eta[i] = link(spec, mu[i]);
      mu[i] = inv_link(spec, eta[i]);
    }
  }

  std::vector<double> trace;
  Eigen::VectorXd z(n);
  Eigen::VectorXd sw(n);
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& obs = y[static_cast<std::size_t>(i)];
      const double d = d_inv_link(spec, eta[i]);
      const double v = variance(spec, mu[i]) / obs.trials;
      z[i] = eta[i] + (obs.y - mu[i]) / d;
      sw[i] = d / std::sqrt(v);
    }
    const Eigen::MatrixXd wx = sw.asDiagonal() * x;
    const Eigen::VectorXd wz = sw.cwiseProduct(z);
    Eigen::VectorXd beta = wx.colPivHouseholderQr().solve(wz);
    if (!beta.allFinite()) {
      std::ostringstream msg;
      msg << "IRLS diverged at iteration " << it << "; max |step| trace:";
      for (double t : trace) msg << ' ' << t;
      throw NumericalError(msg.str());
    }
    if (fit.beta.allFinite()) {
      const double q0 = score_potential(spec, y, eta);
      const Eigen::VectorXd delta = beta - fit.beta;
      double t = 1.0;
      for (int half = 0; half < 30; ++half, t *= 0.5) {
        beta = fit.beta + t * delta;
        if (score_potential(spec, y, x * beta) >= q0 - 1e-10 * std::abs(q0)) break;
      }
    }
    const double step = fit.beta.allFinite() ? (beta - fit.beta).cwiseAbs().maxCoeff()
                                             : std::numeric_limits<double>::infinity();
    trace.push_back(step);
    fit.beta = beta;
    fit.iterations = it;
    eta = x * fit.beta;
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = inv_link(spec, eta[i]);
    if (step <= opt.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.eta = eta;
  fit.mu = mu;
  return fit;
}

}  // namespace gsar
