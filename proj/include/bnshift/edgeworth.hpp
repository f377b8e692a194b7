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

#include "bnshift/error.hpp"
#include "bnshift/special.hpp"
#include "bnshift/stats_core.hpp"

namespace bnshift::edgeworth {

/// Quantities that drive the distribution of the normalized mean gap
///   T = sqrt(nm/(n+m)) * (mean_Q - mean_P - delta_mu).
///
/// Note the cross-pairing in v_nm: n multiplies the test variance and m the
/// training variance. This is Var(T) exactly, since
///   nm/(n+m) * (var_q/m + var_p/n) = (n var_q + m var_p)/(n+m).
struct TnmParams {
  std::size_t n = 0;
  std::size_t m = 0;
  double alpha = 0.0;  // sqrt(n/(n+m))
  double beta = 0.0;   // sqrt(m/(n+m))
  double v_nm = 0.0;
  double delta3_nm = 0.0;  // third cumulant of T
};

inline TnmParams tnm_params(const stats::ShiftScenario& scenario, std::size_t n, std::size_t m) {
  bnshift::detail::require(n >= 1 && m >= 1, "sample sizes must be at least 1");
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  const double total = dn + dm;
  TnmParams p;
  p.n = n;
  p.m = m;
  p.alpha = std::sqrt(dn / total);
  p.beta = std::sqrt(dm / total);
  p.v_nm = (dn * scenario.var_q() + dm * scenario.var_p()) / total;
  p.delta3_nm = scenario.kappa3_q() * p.alpha * p.alpha * p.alpha / std::sqrt(dm) -
                scenario.kappa3_p() * p.beta * p.beta * p.beta / std::sqrt(dn);
  return p;
}

/// Normalized gap from precomputed sample means.
inline double tnm_statistic(double mean_p, std::size_t n, double mean_q, std::size_t m, double delta_mu) {
  bnshift::detail::require(n >= 1 && m >= 1, "sample sizes must be at least 1");
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  return std::sqrt(dn * dm / (dn + dm)) * (mean_q - mean_p - delta_mu);
}

inline double tnm_statistic(const stats::Sample& train, const stats::Sample& test,
                            const stats::ShiftScenario& scenario) {
  return tnm_statistic(stats::summarize(train).mean, train.size(), stats::summarize(test).mean, test.size(),
                       scenario.delta_mu());
}

/// Skewness term alone: -(delta3 / 6 V^{3/2}) (x^2/V - 1) phi(x/sqrt V).
inline double edgeworth_correction(double x, const TnmParams& params) {
  bnshift::detail::require(params.v_nm > 0.0, "V_{n,m} must be positive");
  const double v = params.v_nm;
  const double z = x / std::sqrt(v);
  return -params.delta3_nm / (6.0 * v * std::sqrt(v)) * (z * z - 1.0) * normal_pdf(z);
}

/// One-term Edgeworth c.d.f. of T. Not clamped: the truncated series can
/// leave [0, 1] slightly in the tails.
inline double edgeworth_cdf(double x, const TnmParams& params) {
  bnshift::detail::require(params.v_nm > 0.0, "V_{n,m} must be positive");
  return normal_cdf(x / std::sqrt(params.v_nm)) + edgeworth_correction(x, params);
}

inline double normal_cdf_baseline(double x, const TnmParams& params) {
  bnshift::detail::require(params.v_nm > 0.0, "V_{n,m} must be positive");
  return normal_cdf(x / std::sqrt(params.v_nm));
}

}  // namespace bnshift::edgeworth
