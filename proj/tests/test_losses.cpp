#include <gtest/gtest.h>

#include <random>

#include "empeval/losses.hpp"

using namespace empeval;

namespace {

// Central differences of `f` around `z`.
template <typename F>
std::vector<double> numeric_grad(F f, std::vector<double> z) {
  std::vector<double> g(z.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + h;
    const double up = f(z);
    z[i] = keep - h;
    const double down = f(z);
    z[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST(Losses, CrossEntropyUniformIsLogK) {
  const std::vector<double> z = {0.0, 0.0};
  EXPECT_NEAR(cross_entropy(z, 0).value, 0.6931471805599453, 1e-12);
  const std::vector<double> z3 = {1.0, 1.0, 1.0};
  EXPECT_NEAR(cross_entropy(z3, 2).value, std::log(3.0), 1e-12);
}

TEST(Losses, FocalAtHalfProbability) {
  // p_t = 0.5, gamma = 2 -> 0.25 * ln 2
  const std::vector<double> z = {0.0, 0.0};
  EXPECT_NEAR(focal_loss(z, 1, {2.0}).value, 0.17328679513998632, 1e-12);
}

TEST(Losses, FocalWithZeroGammaIsCrossEntropy) {
  const std::vector<double> z = {0.3, -1.2, 2.0};
  for (std::size_t g = 0; g < 3; ++g) {
    const auto a = focal_loss(z, g, {0.0});
    const auto b = cross_entropy(z, g);
    EXPECT_DOUBLE_EQ(a.value, b.value);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(a.gradient[k], b.gradient[k]);
  }
}

TEST(Losses, LdamMarginsFollowQuarterPower) {
  const auto m = ldam_margins({{100, 10}, 0.5, 30.0});
  EXPECT_NEAR(m[0], 0.28117066259517454, 1e-12);
  EXPECT_NEAR(m[1], 0.5, 1e-12);
  EXPECT_THROW(ldam_margins({{5, 0}, 0.5, 30.0}), InputError);
}

TEST(Losses, LdamWithZeroMarginsIsCrossEntropy) {
  const std::vector<double> z = {0.7, -0.4, 1.1};
  const std::vector<double> zero(3, 0.0);
  for (std::size_t g = 0; g < 3; ++g) EXPECT_DOUBLE_EQ(ldam_loss(z, g, zero, 30.0).value, cross_entropy(z, g).value);
  EXPECT_DOUBLE_EQ(ldam_loss(z, 0, LdamConfig{{10, 10, 10}, 0.0, 30.0}).value, cross_entropy(z, 0).value);
}

TEST(Losses, InvalidInputsRejected) {
  const std::vector<double> empty;
  EXPECT_THROW(cross_entropy(empty, 0), InputError);
  const std::vector<double> z = {0.0, 1.0};
  EXPECT_THROW(cross_entropy(z, 2), InputError);
  const std::vector<double> bad = {0.0, std::nan("")};
  EXPECT_THROW(focal_loss(bad, 0, {}), InputError);
  EXPECT_THROW(focal_loss(z, 0, {-1.0}), InputError);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N(0.0, 2.0);
  const std::vector<double> margins = {0.5, 0.3, 0.2};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> z(3);
    for (auto& v : z) v = N(rng);
    const std::size_t g = static_cast<std::size_t>(trial % 3);
    const double gamma = 0.5 + (trial % 4);

    const auto ce = cross_entropy(z, g);
    const auto fl = focal_loss(z, g, {gamma});
    const auto ld = ldam_loss(z, g, margins, 2.0);
    const auto n_ce = numeric_grad([&](const std::vector<double>& x) { return cross_entropy(x, g).value; }, z);
    const auto n_fl = numeric_grad([&](const std::vector<double>& x) { return focal_loss(x, g, {gamma}).value; }, z);
    const auto n_ld = numeric_grad([&](const std::vector<double>& x) { return ldam_loss(x, g, margins, 2.0).value; }, z);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(ce.gradient[k], n_ce[k], kGradTol);
      EXPECT_NEAR(fl.gradient[k], n_fl[k], kGradTol);
      EXPECT_NEAR(ld.gradient[k], n_ld[k], kGradTol);
    }
  }
}

TEST(Losses, FocalNeverExceedsCrossEntropy) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-5.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> z = {U(rng), U(rng)};
    EXPECT_LE(focal_loss(z, 0, {2.0}).value, cross_entropy(z, 0).value + 1e-15);
  }
}
