#include <gtest/gtest.h>

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <random>

#include "lir/energy.hpp"
#include "lir/error.hpp"

namespace lir {
namespace {

using Big = boost::multiprecision::cpp_bin_float_50;

// Direct evaluation at 50 digits, no shift.
double direct_free_energy(const std::vector<double>& v, double t) {
  Big sum = 0;
  for (double x : v) sum += boost::multiprecision::exp(Big(x) / Big(t));
  return static_cast<double>(-Big(t) * boost::multiprecision::log(sum));
}

TEST(FreeEnergy, SymmetricPair) { EXPECT_NEAR(free_energy(std::vector{0.0, 0.0}), -std::log(2.0), 1e-15); }

TEST(FreeEnergy, SingleUnitIsNegatedValue) {
  for (double a : {-3.5, 0.0, 2.25, 1e5}) EXPECT_DOUBLE_EQ(free_energy(std::vector{a}), -a);
}

TEST(FreeEnergy, ThreeLogits) {
  // -ln(e + e^2 + e^3), evaluated at 50 digits.
  EXPECT_NEAR(direct_free_energy({1, 2, 3}, 1.0), -3.40760596444438, 1e-13);
  EXPECT_NEAR(free_energy(std::vector{1.0, 2.0, 3.0}), -3.407606, 1e-6);
}

TEST(FreeEnergy, LargeEqualLogitsStayFinite) {
  const double e = free_energy(std::vector{1000.0, 1000.0});
  EXPECT_TRUE(std::isfinite(e));
  EXPECT_DOUBLE_EQ(e, -(1000.0 + std::log(2.0)));
  for (double m : {1e3, 1e4, 1e5, 1e6}) EXPECT_EQ(free_energy(std::vector{m, m}), -(m + std::log(2.0)));
}

TEST(FreeEnergy, RejectsBadInput) {
  EXPECT_THROW(free_energy(std::vector<double>{}), DomainError);
  EXPECT_THROW(free_energy(std::vector<double>{0.0, NAN}), DomainError);
  EXPECT_THROW(free_energy(std::vector<double>{INFINITY}), DomainError);
  EXPECT_THROW(Temperature(0.0), DomainError);
  EXPECT_THROW(Temperature(-1.0), DomainError);
}

TEST(FreeEnergy, MatchesHighPrecisionWithTemperature) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> val(-20.0, 20.0), temp(0.2, 5.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (double& x : v) x = val(rng);
    const double t = temp(rng);
    const double want = direct_free_energy(v, t);
    EXPECT_LE(std::abs(free_energy(v, Temperature(t)) - want), 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(FreeEnergyProperty, TemperatureIdentityAndShiftRule) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-50.0, 50.0), temp(0.1, 10.0), shift(-100.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + trial % 17);
    for (double& x : v) x = val(rng);
    const double t = temp(rng);
    std::vector<double> scaled = v;
    for (double& x : scaled) x /= t;
    const double lhs = free_energy(v, Temperature(t));
    EXPECT_NEAR(lhs, t * free_energy(scaled), 1e-9 * std::max(1.0, std::abs(lhs)));

    const double c = shift(rng);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    EXPECT_NEAR(free_energy(shifted), free_energy(v) - c, 1e-9 * std::max(1.0, std::abs(c)));
  }
}

TEST(FreeEnergyProperty, PermutationInvariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> val(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(2 + trial % 9);
    for (double& x : v) x = val(rng);
    auto p = v;
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_NEAR(free_energy(p), free_energy(v), 1e-12 * std::max(1.0, std::abs(free_energy(v))));
    EXPECT_NEAR(msp_score(p), msp_score(v), 1e-14);
  }
}

TEST(Msp, UniformAndThreeLogits) {
  EXPECT_DOUBLE_EQ(msp_score(std::vector{0.0, 0.0}), 0.5);
  EXPECT_DOUBLE_EQ(msp_score(std::vector{0.0, 0.0, 0.0, 0.0}), 0.25);
  // e^3 / (e + e^2 + e^3)
  const double want = std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(want, 0.665241, 1e-6);
  EXPECT_NEAR(msp_score(std::vector{1.0, 2.0, 3.0}), want, 1e-15);
}

TEST(MspProperty, Bounds) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> val(0.0, 30.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + trial % 12);
    for (double& x : v) x = val(rng);
    const double s = msp_score(v, Temperature(0.5 + trial % 4));
    EXPECT_GE(s, 1.0 / static_cast<double>(v.size()) - 1e-15);
    EXPECT_LE(s, 1.0);
  }
}

TEST(EnergyVector, ComponentwiseFreeEnergy) {
  const std::vector<ActivationVector> one{{{0.0, 0.0}, 0}};
  ASSERT_EQ(energy_vector(one).size(), 1u);
  EXPECT_NEAR(energy_vector(one)[0], -std::log(2.0), 1e-15);

  const std::vector<ActivationVector> two{{{0.0, 0.0}, 0}, {{1.0, 2.0, 3.0}, ActivationVector::kLogits}};
  const auto e = energy_vector(two);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_NEAR(e[0], -0.693147, 1e-6);
  EXPECT_NEAR(e[1], -3.407606, 1e-6);

  const std::vector<ActivationVector> permuted{{{0.0, 0.0}, 0}, {{3.0, 1.0, 2.0}, ActivationVector::kLogits}};
  EXPECT_EQ(energy_vector(permuted)[0], e[0]);
  EXPECT_NEAR(energy_vector(permuted)[1], e[1], 1e-15);
}

TEST(EnergyVector, RejectsMissingDuplicateOrMisplacedLayers) {
  const std::vector<ActivationVector> missing{{{1.0}, 0}, {{1.0}, 2}};
  const std::vector<ActivationVector> duplicate{{{1.0}, 0}, {{1.0}, 0}};
  const std::vector<ActivationVector> logits_first{{{1.0}, ActivationVector::kLogits}, {{1.0}, 0}};
  EXPECT_THROW(energy_vector(missing), StructuralError);
  EXPECT_THROW(energy_vector(duplicate), StructuralError);
  EXPECT_THROW(energy_vector(logits_first), StructuralError);
  EXPECT_THROW(energy_vector(std::vector<ActivationVector>{}), StructuralError);
}

}  // namespace
}  // namespace lir
