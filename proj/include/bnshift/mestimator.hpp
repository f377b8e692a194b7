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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "bnshift/error.hpp"
#include "bnshift/parallel.hpp"
#include "bnshift/stats_core.hpp"

namespace bnshift::mest {

enum class ScoreFamily { linear, skew_corrected, huber };

inline std::string to_string(ScoreFamily f) {
  switch (f) {
    case ScoreFamily::linear: return "linear";
    case ScoreFamily::skew_corrected: return "skew_corrected";
    case ScoreFamily::huber: return "huber";
  }
  return "unknown";
}

/// Location score psi(y, mu) with analytic mu-derivatives.
///
///   linear:          y - mu
///   skew_corrected:  (y - mu) [1 - c (y - mu)],  c = kappa3_q / (6 sigma_q^3)
///   huber:           clamp(y - mu, -k, k)
class ScoreFunction {
 public:
  static ScoreFunction linear() { return ScoreFunction(ScoreFamily::linear, 0.0, 0.0); }

  static ScoreFunction skew_corrected(double kappa3_q, double sigma_q) {
    bnshift::detail::require(sigma_q > 0.0 && std::isfinite(sigma_q), "skew-corrected score needs sigma_q > 0");
    bnshift::detail::require(std::isfinite(kappa3_q), "skew-corrected score needs a finite kappa3_q");
    return ScoreFunction(ScoreFamily::skew_corrected, kappa3_q / (6.0 * sigma_q * sigma_q * sigma_q), 0.0);
  }

  /// Skew-corrected score with parameters estimated from the test sample.
  static ScoreFunction skew_corrected(const stats::MomentSummary& test) {
    return skew_corrected(test.third_central, std::sqrt(test.var_biased));
  }

  static ScoreFunction huber(double threshold) {
    bnshift::detail::require(threshold > 0.0 && std::isfinite(threshold), "huber threshold must be positive");
    return ScoreFunction(ScoreFamily::huber, 0.0, threshold);
  }

  ScoreFamily family() const { return family_; }
  /// c = kappa3 / (6 sigma^3) for the skew-corrected family, 0 otherwise.
  double skew_coefficient() const { return skew_c_; }
  double threshold() const { return threshold_; }
  bool twice_differentiable() const { return family_ != ScoreFamily::huber; }

  double psi(double y, double mu) const {
    const double d = y - mu;
    switch (family_) {
      case ScoreFamily::linear: return d;
      case ScoreFamily::skew_corrected: return d * (1.0 - skew_c_ * d);
      case ScoreFamily::huber: return std::clamp(d, -threshold_, threshold_);
    }
    return 0.0;
  }

  /// d psi / d mu
  double dpsi(double y, double mu) const {
    const double d = y - mu;
    switch (family_) {
      case ScoreFamily::linear: return -1.0;
      case ScoreFamily::skew_corrected: return -1.0 + 2.0 * skew_c_ * d;
      case ScoreFamily::huber: return std::abs(d) < threshold_ ? -1.0 : 0.0;
    }
    return 0.0;
  }

  /// d^2 psi / d mu^2 (huber: 0, its a.e. value)
  double d2psi(double /*y*/, double /*mu*/) const {
    return family_ == ScoreFamily::skew_corrected ? -2.0 * skew_c_ : 0.0;
  }

 private:
  ScoreFunction(ScoreFamily f, double c, double k) : family_(f), skew_c_(c), threshold_(k) {}

  ScoreFamily family_;
  double skew_c_;
  double threshold_;
};

struct OneStepResult {
  double mu_init = 0.0;
  double score_sum = 0.0;   // sum psi(Y_j, mu_init)
  double dscore_sum = 0.0;  // sum d psi / d mu (Y_j, mu_init)
  double mu_onestep = 0.0;
};

/// One Newton step on sum psi(Y_j, mu) = 0 from mu_init.
inline OneStepResult one_step_update(const ScoreFunction& score, std::span<const double> test, double mu_init) {
  bnshift::detail::require(!test.empty(), "test sample must be nonempty");
  bnshift::detail::require(std::isfinite(mu_init), "initializer must be finite");
  // Extended-precision sums: when mu_init is far from the root the step
  // nearly cancels mu_init, and double sums would lose the low digits.
  long double s = 0.0L;
  long double ds = 0.0L;
  for (double y : test) {
    s += score.psi(y, mu_init);
    ds += score.dpsi(y, mu_init);
  }
  OneStepResult r;
  r.mu_init = mu_init;
  r.score_sum = static_cast<double>(s);
  r.dscore_sum = static_cast<double>(ds);
  if (std::abs(r.dscore_sum) < 1e-12 * static_cast<double>(test.size())) {
    throw DomainError("one-step update: score derivative sum vanishes at the initializer");
  }
  r.mu_onestep = static_cast<double>(static_cast<long double>(mu_init) - s / ds);
  return r;
}

inline OneStepResult one_step_update(const ScoreFunction& score, const stats::Sample& test, double mu_init) {
  return one_step_update(score, test.values(), mu_init);
}

/// Empirical plug-ins at mu0, with psi'_0 = -mean(d psi/d mu) and
/// psi''_0 = mean(d^2 psi / d mu^2).
struct ScoreMoments {
  double psi_mean = 0.0;
  double psi_var = 0.0;  // 1/m normalized
  double psi_prime0 = 0.0;
  double psi_second0 = 0.0;
};

inline ScoreMoments score_moments(const ScoreFunction& score, std::span<const double> test, double mu0) {
  bnshift::detail::require(!test.empty(), "test sample must be nonempty");
  const double m = static_cast<double>(test.size());
  ScoreMoments s;
  double d1 = 0.0;
  double d2 = 0.0;
  for (double y : test) {
    s.psi_mean += score.psi(y, mu0);
    d1 += score.dpsi(y, mu0);
    d2 += score.d2psi(y, mu0);
  }
  s.psi_mean /= m;
  for (double y : test) {
    const double e = score.psi(y, mu0) - s.psi_mean;
    s.psi_var += e * e;
  }
  s.psi_var /= m;
  s.psi_prime0 = -d1 / m;
  s.psi_second0 = d2 / m;
  return s;
}

/// Second-order Taylor expansion of the mean score around mu0.
struct ExpansionCheck {
  double lhs = 0.0;        // mean psi(Y, mu)
  double rhs = 0.0;        // mean psi(Y, mu0) - (mu - mu0) psi'_0 + (mu - mu0)^2 psi''_0 / 2
  double remainder = 0.0;  // lhs - rhs
  double psi_prime0 = 0.0;
  double psi_second0 = 0.0;
};

inline ExpansionCheck score_expansion_check(const ScoreFunction& score, std::span<const double> test, double mu0,
                                            double mu) {
  bnshift::detail::require(score.twice_differentiable(), "expansion check needs a twice differentiable score");
  const auto sm = score_moments(score, test, mu0);
  double lhs = 0.0;
  for (double y : test) lhs += score.psi(y, mu);
  lhs /= static_cast<double>(test.size());
  const double step = mu - mu0;
  ExpansionCheck c;
  c.lhs = lhs;
  c.rhs = sm.psi_mean - step * sm.psi_prime0 + 0.5 * step * step * sm.psi_second0;
  c.remainder = c.lhs - c.rhs;
  c.psi_prime0 = sm.psi_prime0;
  c.psi_second0 = sm.psi_second0;
  return c;
}

/// Local asymptotic normality terms at mu0 + h / sqrt(m).
struct LanTerms {
  double lambda_m = 0.0;
  double z_m = 0.0;       // z_m_star / psi'_0
  double z_m_star = 0.0;  // sum psi(Y_j, mu0) / sqrt(m)
  double eta_hat = 0.0;   // Var(psi) / psi'_0^2
  double psi_prime0 = 0.0;
  double psi_second0 = 0.0;
};

/// h psi'_0 z_m - psi'_0 h^2 / 2 + psi''_0 h^3 / 6
inline double lan_lambda(double h, double psi_prime0, double psi_second0, double z_m) {
  return h * psi_prime0 * z_m - 0.5 * psi_prime0 * h * h + psi_second0 * h * h * h / 6.0;
}

inline LanTerms lan_terms(const ScoreFunction& score, std::span<const double> test, double mu0, double h) {
  bnshift::detail::require(score.twice_differentiable(), "LAN terms need a twice differentiable score");
  bnshift::detail::require(test.size() >= 2, "LAN terms need m >= 2");
  const auto sm = score_moments(score, test, mu0);
  if (std::abs(sm.psi_prime0) < 1e-12) throw DomainError("LAN terms: psi'_0 vanishes");
  const double m = static_cast<double>(test.size());
  LanTerms t;
  t.psi_prime0 = sm.psi_prime0;
  t.psi_second0 = sm.psi_second0;
  t.z_m_star = sm.psi_mean * std::sqrt(m);
  t.z_m = t.z_m_star / sm.psi_prime0;
  t.eta_hat = sm.psi_var / (sm.psi_prime0 * sm.psi_prime0);
  t.lambda_m = lan_lambda(h, t.psi_prime0, t.psi_second0, t.z_m);
  return t;
}

// ---------------------------------------------------------------------------
// Population quantities for the smooth families.

/// Root of E_Q[psi(Y, mu)] = 0. For the skew-corrected score this is
///   mu_q - d,  d = 2 c s2 / (1 + sqrt(1 - 4 c^2 s2)),
/// which differs from mu_q because E_Q[psi(Y, mu_q)] = -c s2 = -kappa3/(6 sigma).
inline double population_root(const ScoreFunction& score, const stats::PopulationMoments& q) {
  switch (score.family()) {
    case ScoreFamily::linear: return q.mean;
    case ScoreFamily::skew_corrected: {
      const double c = score.skew_coefficient();
      const double disc = 1.0 - 4.0 * c * c * q.variance;
      if (disc < 0.0) throw DomainError("skew-corrected score has no population root for these moments");
      return q.mean - 2.0 * c * q.variance / (1.0 + std::sqrt(disc));
    }
    case ScoreFamily::huber: break;
  }
  throw InvalidInput("population root is only available for the linear and skew-corrected scores");
}

/// E_Q[psi(Y, mu)] in closed form (smooth families).
inline double population_score_mean(const ScoreFunction& score, const stats::PopulationMoments& q, double mu) {
  bnshift::detail::require(score.twice_differentiable(), "closed-form score mean needs a smooth score");
  const double d = q.mean - mu;
  return d - score.skew_coefficient() * (q.variance + d * d);
}

/// Population psi'_0 = -E[d psi/d mu] and psi''_0 = E[d^2 psi/d mu^2] at mu0.
inline std::pair<double, double> population_derivatives(const ScoreFunction& score, const stats::PopulationMoments& q,
                                                        double mu0) {
  bnshift::detail::require(score.twice_differentiable(), "closed-form derivatives need a smooth score");
  const double c = score.skew_coefficient();
  return {1.0 - 2.0 * c * (q.mean - mu0), -2.0 * c};
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the sqrt(m) expansion of the one-step estimator.

enum class CheckTarget {
  score_root,  // mu0 solves E_Q[psi(Y, mu0)] = 0
  test_mean,   // mu0 = mu_Q
};

struct OneStepCheckOptions {
  CheckTarget target = CheckTarget::score_root;
  /// Start from mu0 itself instead of the training mean.
  bool exact_initializer = false;
};

struct OneStepCheckRow {
  std::size_t rep = 0;
  double scaled_error = 0.0;  // sqrt(m) (mu_onestep - mu0)
  double z_star = 0.0;        // sum psi(Y_j, mu0) / sqrt(m)
  double expansion = 0.0;     // z*/psi'_0 + psi''_0 z*^2 / (2 psi'_0^2)
  double difference = 0.0;    // scaled_error - expansion
  double first_order_difference = 0.0;  // scaled_error - z*/psi'_0
};

struct OneStepCheck {
  double mu0 = 0.0;
  double psi_prime0 = 0.0;
  double psi_second0 = 0.0;
  std::vector<OneStepCheckRow> rows;
  double median_abs_difference = 0.0;
  double median_abs_first_order_difference = 0.0;
};

inline double median_abs(std::vector<double> v) {
  bnshift::detail::require(!v.empty(), "median of an empty range");
  for (double& x : v) x = std::abs(x);
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

/// Default training size n = ceil(m^{3/2}), which makes sqrt(m) times the
/// initializer error vanish.
inline std::size_t default_train_size(std::size_t m) {
  return static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(m), 1.5)));
}

inline OneStepCheck onestep_expansion_check(const ScoreFunction& score, const stats::DistributionSpec& train,
                                            const stats::DistributionSpec& test, std::size_t n, std::size_t m,
                                            const McOptions& mc, const OneStepCheckOptions& options = {}) {
  bnshift::detail::require(score.twice_differentiable(), "expansion check needs a twice differentiable score");
  bnshift::detail::require(mc.reps >= 100, "expansion check needs at least 100 replications");
  bnshift::detail::require(n >= 1 && m >= 2, "need n >= 1 and m >= 2");
  stats::validate(train);
  stats::validate(test);
  const auto q = stats::population_moments(test);

  OneStepCheck out;
  out.mu0 = options.target == CheckTarget::score_root ? population_root(score, q) : q.mean;
  std::tie(out.psi_prime0, out.psi_second0) = population_derivatives(score, q, out.mu0);
  if (std::abs(out.psi_prime0) < 1e-12) throw DomainError("expansion check: psi'_0 vanishes");

  const double sqrt_m = std::sqrt(static_cast<double>(m));
  out.rows.resize(mc.reps);
  parallel_reps(mc.reps, mc.seed, mc.workers, [&](Engine& eng, std::size_t rep) {
    std::vector<double> ys(m);
    double init = out.mu0;
    if (!options.exact_initializer) {
      std::vector<double> xs(n);
      stats::draw(train, eng, xs);
      init = stats::summarize(xs).mean;
    }
    stats::draw(test, eng, ys);
    const auto step = one_step_update(score, ys, init);
    double zs = 0.0;
    for (double y : ys) zs += score.psi(y, out.mu0);
    zs /= sqrt_m;

    OneStepCheckRow row;
    row.rep = rep;
    row.scaled_error = sqrt_m * (step.mu_onestep - out.mu0);
    row.z_star = zs;
    const double first = zs / out.psi_prime0;
    row.expansion = first + out.psi_second0 * zs * zs / (2.0 * out.psi_prime0 * out.psi_prime0);
    row.difference = row.scaled_error - row.expansion;
    row.first_order_difference = row.scaled_error - first;
    out.rows[rep] = row;
  });

  std::vector<double> diffs(mc.reps);
  std::vector<double> firsts(mc.reps);
  for (std::size_t i = 0; i < mc.reps; ++i) {
    diffs[i] = out.rows[i].difference;
    firsts[i] = out.rows[i].first_order_difference;
  }
  out.median_abs_difference = median_abs(std::move(diffs));
  out.median_abs_first_order_difference = median_abs(std::move(firsts));
  return out;
}

}  // namespace bnshift::mest
