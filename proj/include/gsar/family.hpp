#pragma once

// Exponential-family members, their links and the per-observation
// quasi-likelihood kernels maximized over the spatial parameter.

#include <gsar/error.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace gsar {

enum class Family { Normal, Binomial, Poisson, Gamma, NegativeBinomial };
enum class Link { Identity, Log, Logit };

inline constexpr double kLogitClamp = 1e-12;
inline constexpr double kLogMeanFloor = 1e-300;
// exp(700) is finite with room to square a few derivative factors.
inline constexpr double kLogEtaCeiling = 700.0;

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::Normal: return "normal";
    case Family::Binomial: return "binomial";
    case Family::Poisson: return "poisson";
    case Family::Gamma: return "gamma";
    case Family::NegativeBinomial: return "negative_binomial";
  }
  return "?";
}

inline std::string_view to_string(Link l) {
  switch (l) {
    case Link::Identity: return "identity";
    case Link::Log: return "log";
    case Link::Logit: return "logit";
  }
  return "?";
}

inline Family parse_family(std::string_view name) {
  if (name == "normal" || name == "gaussian") return Family::Normal;
  if (name == "binomial") return Family::Binomial;
  if (name == "poisson") return Family::Poisson;
  if (name == "gamma") return Family::Gamma;
  if (name == "negative_binomial" || name == "negbin" || name == "nb")
    return Family::NegativeBinomial;
  throw ValidationError("unknown family '" + std::string(name) + "'");
}

inline Link parse_link(std::string_view name) {
  if (name == "identity") return Link::Identity;
  if (name == "log") return Link::Log;
  if (name == "logit") return Link::Logit;
  throw ValidationError("unknown link '" + std::string(name) + "'");
}

inline Link default_link(Family f) {
  switch (f) {
    case Family::Normal: return Link::Identity;
    case Family::Binomial: return Link::Logit;
    default: return Link::Log;
  }
}

/// A family/link pair plus the negative-binomial shape. Only the canonical
/// pairings listed in `make` are accepted.
class FamilySpec {
 public:
  static FamilySpec make(Family family, std::optional<Link> link = std::nullopt,
                         std::optional<double> aux = std::nullopt) {
    const Link l = link.value_or(default_link(family));
    if (l != default_link(family))
      throw ValidationError("unsupported family/link pair " + std::string(to_string(family)) +
                            "/" + std::string(to_string(l)));
    if (family == Family::NegativeBinomial) {
      if (!aux || !(*aux > 0.0) || !std::isfinite(*aux))
        throw ValidationError("negative_binomial needs a positive shape");
    } else if (aux) {
      throw ValidationError("shape parameter only applies to negative_binomial");
    }
    return FamilySpec(family, l, aux.value_or(0.0));
  }

  Family family() const noexcept { return family_; }
  Link link() const noexcept { return link_; }
  double aux() const noexcept { return aux_; }

 private:
  FamilySpec(Family f, Link l, double aux) : family_(f), link_(l), aux_(aux) {}
  Family family_;
  Link link_;
  double aux_;
};

/// One response value. Binomial responses are success proportions with
/// their trial count; every other family uses trials = 1.
struct Observation {
  double y = 0.0;
  int trials = 1;
};

inline void validate_observation(const FamilySpec& spec, const Observation& obs,
                                 std::size_t index) {
  const auto fail = [&](const std::string& what) { throw ValidationError("observation " + std::to_string(index) + ": " + what); };
  if (!std::isfinite(obs.y)) fail("nonfinite response");
  if (obs.trials < 1) fail("trials must be a positive integer");
  switch (spec.family()) {
    case Family::Normal:
      break;
    case Family::Poisson:
    case Family::NegativeBinomial:
      if (obs.y < 0.0) fail("count response must be nonnegative");
      break;
    case Family::Gamma:
      if (obs.y <= 0.0) fail("gamma response must be positive");
      break;
    case Family::Binomial: {
      if (obs.y < 0.0 || obs.y > 1.0) fail("binomial proportion outside [0, 1]");
      const double successes = obs.y * obs.trials;
      if (std::abs(successes - std::round(successes)) > 1e-9)
        fail("proportion times trials is not an integer");
      break;
    }
  }
}

inline double link(const FamilySpec& spec, double mu) {
  switch (spec.link()) {
    case Link::Identity: return mu;
    case Link::Log: return std::log(std::max(mu, kLogMeanFloor));
    case Link::Logit: {
      const double m = std::clamp(mu, kLogitClamp, 1.0 - kLogitClamp);
      return std::log(m / (1.0 - m));
    }
  }
  return mu;
}

inline double inv_link(const FamilySpec& spec, double eta) {
  switch (spec.link()) {
    case Link::Identity: return eta;
    case Link::Log: return std::max(std::exp(std::min(eta, kLogEtaCeiling)), kLogMeanFloor);
    case Link::Logit: {
      const double mu = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta))
                                   : std::exp(eta) / (1.0 + std::exp(eta));
      return std::clamp(mu, kLogitClamp, 1.0 - kLogitClamp);
    }
  }
  return eta;
}

/// dmu/deta.
inline double d_inv_link(const FamilySpec& spec, double eta) {
  switch (spec.link()) {
    case Link::Identity: return 1.0;
    case Link::Log: return inv_link(spec, eta);
    case Link::Logit: {
      const double mu = inv_link(spec, eta);
      return mu * (1.0 - mu);
    }
  }
  return 1.0;
}

/// d2mu/deta2.
inline double d2_inv_link(const FamilySpec& spec, double eta) {
  switch (spec.link()) {
    case Link::Identity: return 0.0;
    case Link::Log: return inv_link(spec, eta);
    case Link::Logit: {
      const double mu = inv_link(spec, eta);
      return mu * (1.0 - mu) * (1.0 - 2.0 * mu);
    }
  }
  return 0.0;
}

inline bool in_mean_domain(const FamilySpec& spec, double mu) {
  if (!std::isfinite(mu)) return false;
  switch (spec.family()) {
    case Family::Normal: return true;
    case Family::Binomial: return mu > 0.0 && mu < 1.0;
    default: return mu > 0.0;
  }
}

/// Variance function V(mu).
inline double variance(const FamilySpec& spec, double mu) {
  if (!in_mean_domain(spec, mu))
    throw ValidationError("mean " + std::to_string(mu) + " outside the domain of " +
                          std::string(to_string(spec.family())));
  switch (spec.family()) {
    case Family::Normal: return 1.0;
    case Family::Poisson: return mu;
    case Family::Binomial: return mu * (1.0 - mu);
    case Family::Gamma: return mu * mu;
    case Family::NegativeBinomial: return mu + mu * mu / spec.aux();
  }
  return 1.0;
}

/// Quasi-likelihood contribution of one observation at mean mu. The normal
/// kernel is unscaled; callers divide by the unit's dispersion. Binomial
/// contributions are weighted by the trial count.
inline double ql_kernel(const FamilySpec& spec, const Observation& obs, double mu,
                        std::size_t index = 0) {
  if (!in_mean_domain(spec, mu)) throw ObservationError("mean outside the family domain", index);
  const double y = obs.y;
  double q = 0.0;
  switch (spec.family()) {
    case Family::Normal:
      q = -0.5 * (y - mu) * (y - mu);
      break;
    case Family::Binomial: {
      double s = 0.0;
      if (y > 0.0) s += y * std::log(mu);
      if (y < 1.0) s += (1.0 - y) * std::log1p(-mu);
      q = obs.trials * s;
      break;
    }
    case Family::Poisson:
      q = (y > 0.0 ? y * std::log(mu) : 0.0) - mu;
      break;
    case Family::Gamma:
      q = -y / mu - std::log(mu);
      break;
    case Family::NegativeBinomial: {
      const double v = mu + mu * mu / spec.aux();
      q = y * mu / (mu + v) + v * std::log(v / (v + mu));
      break;
    }
  }
  if (!std::isfinite(q)) throw ObservationError("nonfinite quasi-likelihood", index);
  return q;
}

/// Starting mean for IRLS, pulled inside the family domain.
inline double initial_mean(const FamilySpec& spec, const Observation& obs) {
  switch (spec.family()) {
    case Family::Normal: return obs.y;
    case Family::Binomial: return (obs.trials * obs.y + 0.5) / (obs.trials + 1.0);
    case Family::Poisson:
    case Family::NegativeBinomial: return obs.y + 0.1;
    case Family::Gamma: return obs.y;
  }
  return obs.y;
}

}  // namespace gsar
