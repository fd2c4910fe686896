#pragma once

// Average direct, indirect and total impacts from S_k = beta_k (I - rho W)^{-1}.

#include <gsar/error.hpp>
#include <gsar/estimator.hpp>
#include <gsar/spalg.hpp>
#include <gsar/weights.hpp>

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace gsar {

inline constexpr Eigen::Index kDenseImpactLimit = 4096;

struct CovariateEffect {
  std::string name;
  double direct = 0.0;
  double indirect = 0.0;
  double total = 0.0;
};

using EffectsSummary = std::vector<CovariateEffect>;

/// Dense S_k. Refuses n > 4096; use summarize_effects there.
inline Eigen::MatrixXd impact_matrix(double beta_k, double rho, const SpatialWeights& w) {
  if (w.n() > kDenseImpactLimit)
    throw DimensionError("impact_matrix is dense-only up to n = 4096; use summarize_effects");
  const SpatialOperator op(w, rho);
  return beta_k * op.solve_A(Eigen::MatrixXd(Eigen::MatrixXd::Identity(w.n(), w.n())));
}

/// n^{-1} tr(A^{-1}) and n^{-1} 1^T A^{-1} 1, shared by every covariate.
struct ImpactAverages {
  double mean_diagonal = 0.0;
  double mean_off_diagonal_row_sum = 0.0;
};

inline ImpactAverages impact_averages(const SpatialOperator& op) {
  const Eigen::Index n = op.n();
  constexpr Eigen::Index block = 256;
  double trace = 0.0;
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index width = std::min(block, n - start);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, width);
    for (Eigen::Index k = 0; k < width; ++k) e(start + k, k) = 1.0;
    const Eigen::MatrixXd cols = op.solve_A(e);
    for (Eigen::Index k = 0; k < width; ++k) trace += cols(start + k, k);
  }
  const double grand = op.solve_A(Eigen::VectorXd(Eigen::VectorXd::Ones(n))).sum();
  const double dn = static_cast<double>(n);
  return {trace / dn, (grand - trace) / dn};
}

/// Effects for every coefficient except `skip` (normally the intercept).
inline EffectsSummary summarize_effects(const Eigen::VectorXd& beta, double rho,
                                        const SpatialWeights& w,
                                        const std::vector<std::string>& names = {},
                                        std::optional<Eigen::Index> skip = std::nullopt) {
  if (!names.empty() && static_cast<Eigen::Index>(names.size()) != beta.size())
    throw DimensionError("coefficient names do not match beta");
  const ImpactAverages avg = impact_averages(SpatialOperator(w, rho));
  EffectsSummary out;
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    if (skip && *skip == k) continue;
    CovariateEffect e;
    e.name = names.empty() ? "x" + std::to_string(k) : names[static_cast<std::size_t>(k)];
    e.direct = beta[k] * avg.mean_diagonal;
    e.indirect = beta[k] * avg.mean_off_diagonal_row_sum;
    e.total = e.direct + e.indirect;
    out.push_back(std::move(e));
  }
  return out;
}

/// Index of the first all-ones column, if any.
inline std::optional<Eigen::Index> intercept_column(const Eigen::MatrixXd& x) {
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    if ((x.col(k).array() == 1.0).all()) return k;
  return std::nullopt;
}

inline EffectsSummary summarize_effects(const FitResult& fit, const SpatialWeights& w,
                                        const Eigen::MatrixXd& x,
                                        const std::vector<std::string>& names = {}) {
  return summarize_effects(fit.beta_hat, fit.rho_hat, w, names, intercept_column(x));
}

}  // namespace gsar
