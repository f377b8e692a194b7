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
#include <array>
#include <cmath>
#include <cstddef>

#include "bnshift/error.hpp"
#include "bnshift/stats_core.hpp"

namespace bnshift::blending {

/// Inputs of the blended-mean error model. Variances and third cumulants may be
/// population values (oracle studies) or plug-in estimates.
struct BlendInputs {
  double delta_mu = 0.0;
  double var_p_hat = 1.0;
  double var_q_hat = 1.0;
  double kappa3_p = 0.0;
  double kappa3_q = 0.0;
  std::size_t n = 1;
  std::size_t m = 1;

  void validate() const {
    bnshift::detail::require(n >= 1 && m >= 1, "n and m must be at least 1");
    bnshift::detail::require(var_p_hat >= 0.0 && var_q_hat >= 0.0, "variances must be nonnegative");
    bnshift::detail::require(std::isfinite(delta_mu) && std::isfinite(var_p_hat) && std::isfinite(var_q_hat) &&
                        std::isfinite(kappa3_p) && std::isfinite(kappa3_q),
                    "blend inputs must be finite");
  }
};

/// Plug-in inputs from two sample summaries (delta_mu = mean_q - mean_p).
inline BlendInputs plug_in(const stats::MomentSummary& train, const stats::MomentSummary& test) {
  return {test.mean - train.mean, train.var_biased, test.var_biased, train.third_central, test.third_central,
          train.n, test.n};
}

/// Population inputs from a scenario.
inline BlendInputs from_scenario(const stats::ShiftScenario& s, std::size_t n, std::size_t m) {
  return {s.delta_mu(), s.var_p(), s.var_q(), s.kappa3_p(), s.kappa3_q(), n, m};
}

/// Which training-variance term the objective carries.
///  - expectation: lambda^2 var_p/n, the squared-error expectation whose
///    stationarity condition is the closed-form optimal weight.
///  - as_displayed: var_p/n with no lambda^2 factor (constant in lambda).
enum class ObjectiveForm { expectation, as_displayed };

/// lambda * mu_p_hat + (1 - lambda) * mu_q_hat
inline double blend_mean(double lambda, double mu_p_hat, double mu_q_hat) {
  bnshift::detail::require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  return lambda * mu_p_hat + (1.0 - lambda) * mu_q_hat;
}

namespace detail {

struct Coefficients {
  double bias2;   // delta_mu^2
  double var_p;   // var_p / n
  double var_q;   // var_q / m
  double skew_p;  // kappa3_p / n^{3/2}
  double skew_q;  // kappa3_q / m^{3/2}
};

inline Coefficients coefficients(const BlendInputs& in) {
  const double dn = static_cast<double>(in.n);
  const double dm = static_cast<double>(in.m);
  return {in.delta_mu * in.delta_mu, in.var_p_hat / dn, in.var_q_hat / dm, in.kappa3_p / (dn * std::sqrt(dn)),
          in.kappa3_q / (dm * std::sqrt(dm))};
}

// Argument of the absolute value in the skewness term.
inline double skew_argument(double lambda, const Coefficients& c) {
  return lambda * c.skew_p - (1.0 - lambda) * c.skew_q;
}

inline double objective(double lambda, const Coefficients& c, ObjectiveForm form) {
  const double train_var = form == ObjectiveForm::expectation ? lambda * lambda * c.var_p : c.var_p;
  const double one_minus = 1.0 - lambda;
  return lambda * lambda * c.bias2 + train_var + one_minus * one_minus * c.var_q +
         std::abs(skew_argument(lambda, c));
}

}  // namespace detail

/// Approximate MSE E(lambda) of the blended mean, including the absolute
/// skewness term |lambda k3p/n^{3/2} - (1-lambda) k3q/m^{3/2}|.
inline double mse_objective(double lambda, const BlendInputs& inputs,
                            ObjectiveForm form = ObjectiveForm::expectation) {
  bnshift::detail::require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  inputs.validate();
  return detail::objective(lambda, detail::coefficients(inputs), form);
}

struct BlendResult {
  double lambda_raw = 0.0;   // unclamped closed form
  double lambda_star = 0.0;  // minimizer over [0, 1]
  double objective_at_star = 0.0;
  bool sign_condition_met = false;
};

/// Closed-form optimal weight
///   lambda = [var_q/m - (k3p/n^{3/2} + k3q/m^{3/2})/2] / [dmu^2 + var_p/n + var_q/m],
/// clamped to [0, 1]. That value is the minimizer whenever the skewness
/// argument is nonnegative there. Otherwise the convex piecewise-quadratic
/// objective is minimized exactly over its candidate set (two branch
/// stationary points, the kink, both endpoints) and sign_condition_met is
/// false.
inline BlendResult optimal_lambda(const BlendInputs& inputs) {
  inputs.validate();
  const auto c = detail::coefficients(inputs);
  const double denom = c.bias2 + c.var_p + c.var_q;
  if (!(denom > 0.0)) throw DomainError("optimal lambda: zero denominator (no bias and no variance)");

  BlendResult r;
  r.lambda_raw = (c.var_q - 0.5 * (c.skew_p + c.skew_q)) / denom;
  const double clamped = std::clamp(r.lambda_raw, 0.0, 1.0);
  r.sign_condition_met = detail::skew_argument(clamped, c) >= 0.0;

  if (r.sign_condition_met) {
    r.lambda_star = clamped;
  } else {
    const double slope = c.skew_p + c.skew_q;  // d/dlambda of the skew argument
    std::array<double, 5> candidates{0.0, 1.0, (c.var_q + 0.5 * slope) / denom, r.lambda_raw,
                                     slope != 0.0 ? c.skew_q / slope : 0.0};
    double best = 0.0;
    double best_value = HUGE_VAL;
    for (double cand : candidates) {
      if (!(cand >= 0.0 && cand <= 1.0)) continue;
      const double value = detail::objective(cand, c, ObjectiveForm::expectation);
      if (value < best_value) {
        best_value = value;
        best = cand;
      }
    }
    r.lambda_star = best;
  }
  r.objective_at_star = detail::objective(r.lambda_star, c, ObjectiveForm::expectation);
  return r;
}

}  // namespace bnshift::blending
