#include "oracle.hpp"

#include <gsar/family.hpp>

#include <gtest/gtest.h>

#include <cmath>

using gsar::Family;
using gsar::FamilySpec;
using gsar::Link;
using gsar::Observation;

namespace {

const FamilySpec kNormal = FamilySpec::make(Family::Normal);
const FamilySpec kPoisson = FamilySpec::make(Family::Poisson);
const FamilySpec kBinomial = FamilySpec::make(Family::Binomial);
const FamilySpec kGamma = FamilySpec::make(Family::Gamma);
const FamilySpec kNegBin = FamilySpec::make(Family::NegativeBinomial, std::nullopt, 5.0);

std::vector<FamilySpec> all_specs() { return {kNormal, kPoisson, kBinomial, kGamma, kNegBin}; }

}  // namespace

TEST(FamilySpec, CanonicalPairsOnly) {
  EXPECT_NO_THROW(FamilySpec::make(Family::Poisson, Link::Log));
  EXPECT_NO_THROW(FamilySpec::make(Family::Binomial, Link::Logit));
  EXPECT_THROW(FamilySpec::make(Family::Poisson, Link::Identity), gsar::ValidationError);
  EXPECT_THROW(FamilySpec::make(Family::Gamma, Link::Logit), gsar::ValidationError);
  EXPECT_THROW(FamilySpec::make(Family::Normal, Link::Log), gsar::ValidationError);
}

TEST(FamilySpec, NegativeBinomialNeedsPositiveShape) {
  EXPECT_THROW(FamilySpec::make(Family::NegativeBinomial), gsar::ValidationError);
  EXPECT_THROW(FamilySpec::make(Family::NegativeBinomial, std::nullopt, 0.0), gsar::ValidationError);
  EXPECT_THROW(FamilySpec::make(Family::Poisson, std::nullopt, 2.0), gsar::ValidationError);
  EXPECT_DOUBLE_EQ(kNegBin.aux(), 5.0);
}

TEST(FamilySpec, NamesRoundTrip) {
  for (auto f : {Family::Normal, Family::Binomial, Family::Poisson, Family::Gamma,
                 Family::NegativeBinomial})
    EXPECT_EQ(gsar::parse_family(gsar::to_string(f)), f);
  for (auto l : {Link::Identity, Link::Log, Link::Logit})
    EXPECT_EQ(gsar::parse_link(gsar::to_string(l)), l);
  EXPECT_THROW(gsar::parse_family("tweedie"), gsar::ValidationError);
  EXPECT_THROW(gsar::parse_link("probit"), gsar::ValidationError);
}

TEST(InvLink, Examples) {
  EXPECT_DOUBLE_EQ(gsar::inv_link(kBinomial, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(gsar::inv_link(kPoisson, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(gsar::inv_link(kNormal, 2.5), 2.5);
}

TEST(InvLink, Clamps) {
  EXPECT_DOUBLE_EQ(gsar::inv_link(kBinomial, 100.0), 1.0 - gsar::kLogitClamp);
  EXPECT_DOUBLE_EQ(gsar::inv_link(kBinomial, -100.0), gsar::kLogitClamp);
  EXPECT_DOUBLE_EQ(gsar::inv_link(kPoisson, -1000.0), gsar::kLogMeanFloor);
  EXPECT_TRUE(std::isfinite(gsar::inv_link(kPoisson, 5000.0)));
}

TEST(InvLink, LinkInverts) {
  for (const auto& s : all_specs())
    for (double eta : {-3.0, -0.7, 0.0, 0.4, 2.9}) EXPECT_NEAR(gsar::link(s, gsar::inv_link(s, eta)), eta, 1e-12);
}

TEST(DInvLink, Examples) {
  EXPECT_DOUBLE_EQ(gsar::d_inv_link(kPoisson, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(gsar::d2_inv_link(kPoisson, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(gsar::d_inv_link(kBinomial, 0.0), 0.25);
  EXPECT_DOUBLE_EQ(gsar::d2_inv_link(kBinomial, 0.0), 0.0);
  for (double eta : {-4.0, 0.0, 7.5}) {
    EXPECT_DOUBLE_EQ(gsar::d_inv_link(kNormal, eta), 1.0);
    EXPECT_DOUBLE_EQ(gsar::d2_inv_link(kNormal, eta), 0.0);
  }
}

TEST(DInvLink, MatchesFiniteDifferences) {
  for (const auto& s : all_specs())
    for (double eta = -3.0; eta <= 3.0; eta += 0.25) {
      const auto f = [&](double e) { return gsar::inv_link(s, e); };
      const auto df = [&](double e) { return gsar::d_inv_link(s, e); };
      const double d = gsar::d_inv_link(s, eta);
      EXPECT_NEAR(oracle::central_diff(f, eta, 1e-6), d, 1e-6 * std::max(1.0, std::abs(d)))
          << gsar::to_string(s.family()) << " eta " << eta;
      const double d2 = gsar::d2_inv_link(s, eta);
      EXPECT_NEAR(oracle::central_diff(df, eta, 1e-6), d2, 1e-6 * std::max(1.0, std::abs(d2)));
    }
}

TEST(DInvLink, CanonicalEqualsVariance) {
  for (const auto& s : {kPoisson, kBinomial})
    for (double eta = -5.0; eta <= 5.0; eta += 0.1)
      EXPECT_NEAR(gsar::d_inv_link(s, eta), gsar::variance(s, gsar::inv_link(s, eta)), 1e-12);
}

TEST(Variance, Examples) {
  EXPECT_DOUBLE_EQ(gsar::variance(kPoisson, 3.0), 3.0);
  EXPECT_DOUBLE_EQ(gsar::variance(kBinomial, 0.5), 0.25);
  EXPECT_DOUBLE_EQ(gsar::variance(kGamma, 2.0), 4.0);
  EXPECT_DOUBLE_EQ(gsar::variance(kNormal, -7.0), 1.0);
  EXPECT_DOUBLE_EQ(gsar::variance(kNegBin, 5.0), 10.0);
}

TEST(Variance, DomainViolation) {
  EXPECT_THROW(gsar::variance(kPoisson, 0.0), gsar::ValidationError);
  EXPECT_THROW(gsar::variance(kBinomial, 1.0), gsar::ValidationError);
  EXPECT_THROW(gsar::variance(kGamma, -1.0), gsar::ValidationError);
}

TEST(QlKernel, Examples) {
  EXPECT_DOUBLE_EQ(gsar::ql_kernel(kPoisson, {1.0, 1}, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(gsar::ql_kernel(kGamma, {1.0, 1}, 1.0), -1.0);
  EXPECT_NEAR(gsar::ql_kernel(kBinomial, {0.5, 1}, 0.5), -0.693147, 1e-6);
  EXPECT_DOUBLE_EQ(gsar::ql_kernel(kNormal, {3.0, 1}, 1.0), -2.0);
}

TEST(QlKernel, BinomialWeightedByTrials) {
  const double one = gsar::ql_kernel(kBinomial, {0.3, 10}, 0.4);
  const double expected = 10.0 * (0.3 * std::log(0.4) + 0.7 * std::log(0.6));
  EXPECT_NEAR(one, expected, 1e-12);
}

TEST(QlKernel, NegativeBinomialVerbatim) {
  const double mu = 2.0;
  const double v = mu + mu * mu / 5.0;
  EXPECT_NEAR(gsar::ql_kernel(kNegBin, {3.0, 1}, mu), 3.0 * mu / (mu + v) + v * std::log(v / (v + mu)),
              1e-12);
}

TEST(QlKernel, MaximizedAtObservation) {
  for (const auto& s : {kNormal, kPoisson, kBinomial, kGamma})
    for (double y : {0.2, 0.5, 0.8}) {
      const Observation obs{s.family() == Family::Binomial ? y : 4.0 * y, s.family() == Family::Binomial ? 5 : 1};
      const double target = obs.y;
      const double lo = s.family() == Family::Binomial ? 0.01 : 0.05;
      const double hi = s.family() == Family::Binomial ? 0.99 : 4.0;
      const double best = oracle::grid_argmax(
          [&](double mu) { return gsar::ql_kernel(s, obs, mu); }, lo, hi, 9801);
      EXPECT_NEAR(best, target, (hi - lo) / 9800.0) << gsar::to_string(s.family());
    }
}

TEST(QlKernel, NegativeBinomialMonotoneNearObservation) {
  for (double shape : {1.0, 5.0, 20.0}) {
    const auto s = FamilySpec::make(Family::NegativeBinomial, std::nullopt, shape);
    for (double y : {0.5, 2.0, 7.0, 30.0}) {
      double prev = gsar::ql_kernel(s, {y, 1}, 0.8 * y);
      for (double mu = 0.825 * y; mu <= 1.2 * y; mu += 0.025 * y) {
        const double q = gsar::ql_kernel(s, {y, 1}, mu);
        EXPECT_LT(q, prev) << "shape " << shape << " y " << y << " mu " << mu;
        prev = q;
      }
    }
  }
}

TEST(QlKernel, ZeroCountsAndEdgeProportions) {
  EXPECT_DOUBLE_EQ(gsar::ql_kernel(kPoisson, {0.0, 1}, 2.0), -2.0);
  EXPECT_NEAR(gsar::ql_kernel(kBinomial, {0.0, 4}, 0.25), 4.0 * std::log(0.75), 1e-12);
  EXPECT_NEAR(gsar::ql_kernel(kBinomial, {1.0, 4}, 0.25), 4.0 * std::log(0.25), 1e-12);
}

TEST(QlKernel, OutOfDomainCarriesIndex) {
  try {
    gsar::ql_kernel(kPoisson, {1.0, 1}, -1.0, 17);
    FAIL() << "expected an observation error";
  } catch (const gsar::ObservationError& e) {
    EXPECT_EQ(e.index(), 17u);
  }
}

TEST(Observation, Validation) {
  EXPECT_THROW(gsar::validate_observation(kPoisson, {-1.0, 1}, 0), gsar::ValidationError);
  EXPECT_THROW(gsar::validate_observation(kGamma, {0.0, 1}, 0), gsar::ValidationError);
  EXPECT_THROW(gsar::validate_observation(kBinomial, {1.2, 3}, 0), gsar::ValidationError);
  EXPECT_THROW(gsar::validate_observation(kBinomial, {0.5, 3}, 0), gsar::ValidationError);
  EXPECT_THROW(gsar::validate_observation(kBinomial, {0.5, 0}, 0), gsar::ValidationError);
  EXPECT_NO_THROW(gsar::validate_observation(kBinomial, {2.0 / 3.0, 3}, 0));
  EXPECT_NO_THROW(gsar::validate_observation(kNormal, {-5.0, 1}, 0));
}
