// Copyright 2026 The bnshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "bnshift/mestimator.hpp"
#include "bnshift/rng.hpp"
#include "bnshift/stats_core.hpp"
#include "oracles.hpp"

namespace bnshift::mest {
namespace {

using stats::Gaussian;
using stats::ShiftedGamma;

std::vector<double> gamma_sample(std::size_t m, Seed seed) {
  const auto s = stats::generate(ShiftedGamma{2.0, 1.0, 0.0}, m, seed);
  return {s.values().begin(), s.values().end()};
}

TEST(OneStepUpdate, LinearReturnsTestMean) {
  const std::vector<double> test{1.0, 2.0, 3.0};
  const auto r = one_step_update(ScoreFunction::linear(), test, 10.0);
  EXPECT_DOUBLE_EQ(r.mu_onestep, 2.0);
  EXPECT_DOUBLE_EQ(r.score_sum, -24.0);
  EXPECT_DOUBLE_EQ(r.dscore_sum, -3.0);
  EXPECT_EQ(r.mu_init, 10.0);
}

TEST(OneStepUpdate, LinearFixedPoint) {
  const std::vector<double> test{0.5, 1.5, 4.0};
  EXPECT_DOUBLE_EQ(one_step_update(ScoreFunction::linear(), test, 2.0).mu_onestep, 2.0);
}

TEST(OneStepUpdate, LinearAnyInitializer) {
  Engine eng(99);
  std::normal_distribution<double> z(0.0, 3.0);
  std::uniform_int_distribution<int> size(1, 300);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> test(static_cast<std::size_t>(size(eng)));
    for (double& y : test) y = 5.0 + z(eng);
    const double mean = stats::summarize(test).mean;
    const double out = one_step_update(ScoreFunction::linear(), test, 10.0 * z(eng)).mu_onestep;
    EXPECT_LE(std::abs(out - mean), 1e-12 * std::abs(mean));
  }
}

TEST(OneStepUpdate, FlatScoreIsDegenerate) {
  const std::vector<double> test{10.0, 20.0};
  EXPECT_THROW(one_step_update(ScoreFunction::huber(1.0), test, 0.0), DomainError);
  EXPECT_THROW(one_step_update(ScoreFunction::linear(), std::vector<double>{}, 0.0), InvalidInput);
}

TEST(OneStepUpdate, SkewCorrectedContractsQuadratically) {
  const auto test = gamma_sample(200, 4);
  const auto score = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  const double ybar = stats::summarize(test).mean;
  const auto sum_psi = [&](double mu) {
    double s = 0.0;
    for (double y : test) s += score.psi(y, mu);
    return s;
  };
  const double root = oracle::bisect(sum_psi, ybar - 2.0, ybar);
  std::vector<double> ratios;
  for (double e0 : {0.4, 0.2, 0.1, 0.05, -0.05, -0.1, -0.2}) {
    const double err = std::abs(one_step_update(score, test, root + e0).mu_onestep - root);
    ratios.push_back(err / (e0 * e0));
  }
  const double c_hat = *std::max_element(ratios.begin(), ratios.end());
  EXPECT_LT(c_hat, 1.0);
  for (double r : ratios) {
    EXPECT_GT(r, 0.4 * c_hat);  // genuinely second order, not faster
  }
}

TEST(ScoreFunction, DerivativesMatchFiniteDifferences) {
  Engine eng(7);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const std::array<ScoreFunction, 3> scores{ScoreFunction::linear(), ScoreFunction::skew_corrected(1.3, 0.8),
                                            ScoreFunction::huber(1.345)};
  for (const auto& s : scores) {
    int checked = 0;
    while (checked < 100) {
      const double y = u(eng);
      const double mu = u(eng);
      if (s.family() == ScoreFamily::huber && std::abs(std::abs(y - mu) - s.threshold()) < 1e-3) continue;
      ++checked;
      const double h = 1e-6;
      const double fd1 = oracle::central_difference([&](double m) { return s.psi(y, m); }, mu, h);
      const double fd2 = oracle::central_difference([&](double m) { return s.dpsi(y, m); }, mu, h);
      EXPECT_NEAR(s.dpsi(y, mu), fd1, 1e-5 * std::max(1.0, std::abs(fd1))) << to_string(s.family());
      EXPECT_NEAR(s.d2psi(y, mu), fd2, 1e-5 * std::max(1.0, std::abs(fd2))) << to_string(s.family());
    }
  }
}

TEST(ScoreFunction, PopulationBiasOfSkewCorrectedScore) {
  const stats::PopulationMoments q{0.0, 2.0, 4.0};
  const auto s = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  EXPECT_NEAR(population_score_mean(s, q, 0.0), -4.0 / (6.0 * std::sqrt(2.0)), 1e-15);
  EXPECT_EQ(population_score_mean(ScoreFunction::linear(), q, 0.0), 0.0);
  const double root = population_root(s, q);
  EXPECT_NEAR(population_score_mean(s, q, root), 0.0, 1e-15);
}

TEST(ScoreFunction, RejectsBadParameters) {
  EXPECT_THROW(ScoreFunction::huber(0.0), InvalidInput);
  EXPECT_THROW(ScoreFunction::skew_corrected(1.0, 0.0), InvalidInput);
}

TEST(ScoreExpansion, LinearIsExact) {
  const auto test = gamma_sample(50, 11);
  for (double mu : {-3.0, 0.1, 2.5}) {
    const auto c = score_expansion_check(ScoreFunction::linear(), test, 0.3, mu);
    EXPECT_NEAR(c.remainder, 0.0, 1e-14);
    EXPECT_EQ(c.psi_prime0, 1.0);
    EXPECT_EQ(c.psi_second0, 0.0);
  }
}

TEST(ScoreExpansion, SkewCorrectedRemainderIsRoundoff) {
  // psi is quadratic in mu, so the second-order expansion has no cubic term.
  const auto test = gamma_sample(500, 12);
  const auto score = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  for (double step : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const auto c = score_expansion_check(score, test, -0.5, -0.5 + step);
    EXPECT_LE(std::abs(c.remainder), 1e-13) << step;
  }
  EXPECT_EQ(score_expansion_check(score, test, -0.5, -0.5).remainder, 0.0);
}

TEST(ScoreExpansion, HuberExcluded) {
  const auto test = gamma_sample(10, 1);
  EXPECT_THROW(score_expansion_check(ScoreFunction::huber(1.0), test, 0.0, 0.1), InvalidInput);
  EXPECT_THROW(lan_terms(ScoreFunction::huber(1.0), test, 0.0, 0.1), InvalidInput);
}

TEST(LanTerms, ZeroStepAndLinearForm) {
  const auto test = gamma_sample(100, 21);
  EXPECT_EQ(lan_terms(ScoreFunction::linear(), test, 0.0, 0.0).lambda_m, 0.0);
  const auto t = lan_terms(ScoreFunction::linear(), test, 0.0, 1.7);
  EXPECT_EQ(t.psi_second0, 0.0);
  EXPECT_NEAR(t.lambda_m, 1.7 * t.z_m_star - 0.5 * 1.7 * 1.7, 1e-14);
  EXPECT_THROW(lan_terms(ScoreFunction::linear(), std::vector<double>{1.0}, 0.0, 1.0), InvalidInput);
}

TEST(LanTerms, RecoversCubicCoefficients) {
  const auto test = gamma_sample(300, 22);
  const auto score = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  const double mu0 = -0.4;
  const std::array<double, 4> hs{-1.0, 0.5, 1.0, 2.0};
  // Solve the Vandermonde system for c0 + c1 h + c2 h^2 + c3 h^3.
  std::array<std::array<double, 5>, 4> a{};
  for (int i = 0; i < 4; ++i) {
    double p = 1.0;
    for (int j = 0; j < 4; ++j, p *= hs[i]) a[i][j] = p;
    a[i][4] = lan_terms(score, test, mu0, hs[i]).lambda_m;
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int j = col; j < 5; ++j) a[r][j] -= f * a[col][j];
    }
  }
  std::array<double, 4> coef{};
  for (int i = 0; i < 4; ++i) coef[i] = a[i][4] / a[i][i];
  const auto t = lan_terms(score, test, mu0, 1.0);
  EXPECT_NEAR(coef[0], 0.0, 1e-10);
  EXPECT_NEAR(coef[1], t.psi_prime0 * t.z_m, 1e-10);
  EXPECT_NEAR(coef[2], -0.5 * t.psi_prime0, 1e-10);
  EXPECT_NEAR(coef[3], t.psi_second0 / 6.0, 1e-10);
}

TEST(LanTerms, MonteCarloMoments) {
  const std::size_t reps = 10000, m = 500;
  const ShiftedGamma q{2.0, 1.0, 0.0};
  std::vector<double> z(reps);
  parallel_reps(reps, 5, 0, [&](Engine& eng, std::size_t r) {
    std::vector<double> ys(m);
    stats::draw(q, eng, ys);
    z[r] = lan_terms(ScoreFunction::linear(), ys, 0.0, 1.0).z_m;
  });
  const double eta = 2.0;  // Var(psi) / psi'_0^2 with psi'_0 = 1
  const auto s = stats::summarize(z);
  EXPECT_LE(std::abs(s.mean), 4.0 * std::sqrt(eta / reps));
  EXPECT_NEAR(s.var_biased * reps / (reps - 1.0), eta, 0.05 * eta);
}

TEST(OneStepExpansion, LinearWithExactInitializerIsExact) {
  const McOptions mc{200, 3, 0};
  const auto check = onestep_expansion_check(ScoreFunction::linear(), Gaussian{0.0, 1.0}, ShiftedGamma{2.0, 1.0, 0.0},
                                             100, 64, mc, {CheckTarget::test_mean, true});
  for (const auto& row : check.rows) EXPECT_NEAR(row.difference, 0.0, 1e-12);
  EXPECT_NEAR(check.median_abs_difference, 0.0, 1e-12);
}

TEST(OneStepExpansion, FirstOrderDifferenceShrinks) {
  const ShiftedGamma test{2.0, 1.0, 0.0};
  const auto score = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  const double mu0 = population_root(score, stats::population_moments(test));
  std::vector<double> medians;
  for (std::size_t m : {50, 200, 800}) {
    const auto check = onestep_expansion_check(score, Gaussian{mu0, 1.0}, test, default_train_size(m), m,
                                               McOptions{400, 17, 0});
    EXPECT_EQ(check.mu0, mu0);
    medians.push_back(check.median_abs_first_order_difference);
  }
  EXPECT_LT(medians[1], medians[0]);
  EXPECT_LT(medians[2], medians[1]);
}

TEST(OneStepExpansion, Deterministic) {
  const auto score = ScoreFunction::skew_corrected(4.0, std::sqrt(2.0));
  const auto a = onestep_expansion_check(score, Gaussian{-0.5, 1.0}, ShiftedGamma{2.0, 1.0, 0.0}, 400, 50,
                                         McOptions{300, 8, 1});
  const auto b = onestep_expansion_check(score, Gaussian{-0.5, 1.0}, ShiftedGamma{2.0, 1.0, 0.0}, 400, 50,
                                         McOptions{300, 8, 3});
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].scaled_error, b.rows[i].scaled_error);
    EXPECT_EQ(a.rows[i].difference, b.rows[i].difference);
  }
  EXPECT_THROW(onestep_expansion_check(score, Gaussian{0.0, 1.0}, ShiftedGamma{2.0, 1.0, 0.0}, 10, 10,
                                       McOptions{50, 1, 1}),
               InvalidInput);
}

TEST(MedianAbs, Basic) {
  EXPECT_EQ(median_abs({-3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median_abs({-4.0, 1.0, 2.0, -3.0}), 2.5);
  EXPECT_EQ(default_train_size(100), 1000u);
}

}  // namespace
}  // namespace bnshift::mest
