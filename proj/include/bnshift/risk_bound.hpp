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

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "bnshift/blending.hpp"
#include "bnshift/error.hpp"
#include "bnshift/parallel.hpp"
#include "bnshift/stats_core.hpp"

namespace bnshift::risk {

struct RiskBoundConfig {
  double bound_b = 1.0;      // almost-sure bound on |X| and |Y|
  double lipschitz_l = 1.0;  // Lipschitz constant of the loss in the BN output
  stats::BnAffine affine{};
  double delta = 0.1;      // failure probability
  double var_p_hat = 1.0;  // training variance estimate in the BN prefactor

  void validate() const {
    bnshift::detail::require(bound_b > 0.0 && std::isfinite(bound_b), "bound_b must be positive and finite");
    bnshift::detail::require(lipschitz_l > 0.0 && std::isfinite(lipschitz_l), "lipschitz_l must be positive");
    bnshift::detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    bnshift::detail::require(var_p_hat >= 0.0, "var_p_hat must be nonnegative");
  }
};

struct RiskBoundReport {
  double a_term = 0.0;
  double v_term = 0.0;
  double t_p = 0.0;
  double t_q = 0.0;
  double lambda_eff = 0.0;  // A / V, deliberately not clamped
  bool lambda_eff_in_range = true;
  double prefactor = 0.0;  // L |gamma| / sqrt(var_p_hat + eps)
  double term_bias_var = 0.0;
  double term_test_conc = 0.0;
  double term_skew = 0.0;
  double total_excess = 0.0;
};

/// Bernstein radius sqrt(2 s2 ln(4/delta)/count) + 2 B ln(4/delta) / (3 count).
inline double concentration_radius(double sigma2, std::size_t count, double bound_b, double delta) {
  bnshift::detail::require(count >= 1, "count must be at least 1");
  bnshift::detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  bnshift::detail::require(sigma2 >= 0.0, "variance must be nonnegative");
  const double log_term = std::log(4.0 / delta);
  const double c = static_cast<double>(count);
  return std::sqrt(2.0 * sigma2 * log_term / c) + 2.0 * bound_b * log_term / (3.0 * c);
}

/// Every term of the excess-risk bound of the blended BN mean, using the
/// scenario's population variances and cumulants in A, V and the radii.
inline RiskBoundReport bound_terms(const stats::ShiftScenario& s, std::size_t n, std::size_t m,
                                   const RiskBoundConfig& config) {
  config.validate();
  bnshift::detail::require(n >= 1 && m >= 1, "n and m must be at least 1");
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  const double n32 = dn * std::sqrt(dn);
  const double m32 = dm * std::sqrt(dm);

  RiskBoundReport r;
  r.a_term = s.var_q() / dm - 0.5 * (s.kappa3_p() / n32 + s.kappa3_q() / m32);
  r.v_term = s.delta_mu() * s.delta_mu() + s.var_p() / dn + s.var_q() / dm;
  if (!(r.v_term > 0.0)) throw DomainError("risk bound: V = 0");
  r.t_p = concentration_radius(s.var_p(), n, config.bound_b, config.delta);
  r.t_q = concentration_radius(s.var_q(), m, config.bound_b, config.delta);
  r.lambda_eff = r.a_term / r.v_term;
  r.lambda_eff_in_range = r.lambda_eff >= 0.0 && r.lambda_eff <= 1.0;

  r.term_bias_var = r.lambda_eff * (std::abs(s.delta_mu()) + r.t_p);
  r.term_test_conc = (1.0 - r.lambda_eff) * r.t_q;
  r.term_skew = (r.lambda_eff * std::abs(s.kappa3_p()) / n32 + (1.0 - r.lambda_eff) * std::abs(s.kappa3_q()) / m32) /
                (6.0 * r.v_term * std::sqrt(r.v_term));
  r.prefactor = config.lipschitz_l * std::abs(config.affine.gamma()) / std::sqrt(config.var_p_hat + config.affine.epsilon());
  r.total_excess = r.prefactor * (r.term_bias_var + r.term_test_conc + r.term_skew);
  return r;
}

// ---------------------------------------------------------------------------
// Empirical coverage of the bound.

struct CoverageOptions {
  /// Activations z at which the BN outputs are compared.
  std::vector<double> eval_grid = default_eval_grid();
  /// Use this weight instead of the plug-in optimum.
  std::optional<double> force_lambda;
  /// Replace the test sample mean by the true test mean.
  bool oracle_test_mean = false;

  static std::vector<double> default_eval_grid() {
    std::vector<double> g(41);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -4.0 + 0.2 * static_cast<double>(i);
    return g;
  }
};

struct CoverageRow {
  std::size_t rep = 0;
  double excess = 0.0;
  double bound = 0.0;
  bool covered = false;
};

struct CoverageResult {
  double fraction = 0.0;
  std::vector<CoverageRow> rows;
};

/// Risk proxy: L * mean_z |BN(z; mu_tta, var) - BN(z; mu_q, var)| over the
/// evaluation grid, a 1-Lipschitz readout scaled by L.
inline double realized_excess(double mu_tta, double mu_q, double var_p_hat, const RiskBoundConfig& config,
                              const std::vector<double>& grid) {
  double total = 0.0;
  for (double z : grid) {
    total += std::abs(stats::apply_bn(z, mu_tta, var_p_hat, config.affine) -
                      stats::apply_bn(z, mu_q, var_p_hat, config.affine));
  }
  return config.lipschitz_l * total / static_cast<double>(grid.size());
}

/// Simulates independent (train, test) pairs, blends the means with the
/// plug-in optimal weight, and records whether the realized excess stays
/// below the bound evaluated with that replication's training variance.
inline CoverageResult coverage_experiment(const stats::DistributionSpec& train, const stats::DistributionSpec& test,
                                          std::size_t n, std::size_t m, const RiskBoundConfig& config,
                                          const McOptions& mc, const CoverageOptions& options = {}) {
  config.validate();
  stats::validate(train);
  stats::validate(test);
  bnshift::detail::require(n >= 2 && m >= 2, "n and m must be at least 2");
  bnshift::detail::require(mc.reps >= 1, "reps must be at least 1");
  bnshift::detail::require(!options.eval_grid.empty(), "evaluation grid must be nonempty");
  if (options.force_lambda)
    bnshift::detail::require(*options.force_lambda >= 0.0 && *options.force_lambda <= 1.0, "forced lambda must lie in [0, 1]");
  const auto scenario = stats::scenario_from(train, test);

  CoverageResult result;
  result.rows.resize(mc.reps);
  parallel_reps(mc.reps, mc.seed, mc.workers, [&](Engine& eng, std::size_t rep) {
    std::vector<double> xs(n);
    std::vector<double> ys(m);
    stats::draw(train, eng, xs);
    stats::draw(test, eng, ys);
    const auto sp = stats::summarize(xs);
    const auto sq = stats::summarize(ys);
    const double mu_q_hat = options.oracle_test_mean ? scenario.mu_q() : sq.mean;

    double lambda = 0.0;
    if (options.force_lambda) {
      lambda = *options.force_lambda;
    } else {
      auto inputs = blending::plug_in(sp, sq);
      inputs.delta_mu = mu_q_hat - sp.mean;
      lambda = blending::optimal_lambda(inputs).lambda_star;
    }
    const double mu_tta = blending::blend_mean(lambda, sp.mean, mu_q_hat);

    RiskBoundConfig rep_config = config;
    rep_config.var_p_hat = sp.var_biased;
    const double excess = realized_excess(mu_tta, scenario.mu_q(), sp.var_biased, config, options.eval_grid);
    const double bound = bound_terms(scenario, n, m, rep_config).total_excess;
    result.rows[rep] = {rep, excess, bound, excess <= bound};
  });

  std::size_t covered = 0;
  for (const auto& row : result.rows) covered += row.covered ? 1 : 0;
  result.fraction = static_cast<double>(covered) / static_cast<double>(mc.reps);
  return result;
}

}  // namespace bnshift::risk
