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
#include <limits>
#include <numbers>
#include <string>

#include "bnshift/edgeworth.hpp"
#include "bnshift/error.hpp"
#include "bnshift/special.hpp"

namespace bnshift::saddlepoint {

/// Cubic truncation K(t) = v t^2 / 2 + delta3 t^3 / 6 of the cumulant
/// generating function of T.
class CgfModel {
 public:
  CgfModel(double v, double delta3) : v_(v), delta3_(delta3) {
    bnshift::detail::require(v > 0.0 && std::isfinite(v), "CGF quadratic coefficient must be positive");
    bnshift::detail::require(std::isfinite(delta3), "CGF cubic coefficient must be finite");
  }

  explicit CgfModel(const edgeworth::TnmParams& p) : CgfModel(p.v_nm, p.delta3_nm) {}

  double v() const { return v_; }
  double delta3() const { return delta3_; }

  /// Closed interval of x for which K'(t) = x has a root with K'' >= 0.
  /// The endpoint itself has K'' = 0 and is rejected by the solver.
  double lower_limit() const {
    return delta3_ > 0.0 ? -v_ * v_ / (2.0 * delta3_) : -std::numeric_limits<double>::infinity();
  }
  double upper_limit() const {
    return delta3_ < 0.0 ? -v_ * v_ / (2.0 * delta3_) : std::numeric_limits<double>::infinity();
  }
  bool in_domain(double x) const { return v_ * v_ + 2.0 * delta3_ * x > 0.0; }

 private:
  double v_;
  double delta3_;
};

struct CgfValues {
  double k = 0.0;   // K(t)
  double k1 = 0.0;  // K'(t)
  double k2 = 0.0;  // K''(t)
};

inline CgfValues cgf_eval(const CgfModel& model, double t) {
  const double v = model.v();
  const double d = model.delta3();
  return {0.5 * v * t * t + d * t * t * t / 6.0, v * t + 0.5 * d * t * t, v + d * t};
}

/// Root of v t + delta3 t^2 / 2 = x on the branch through the origin.
///
/// Uses the rationalized quadratic root t = 2x / (v + sqrt(v^2 + 2 delta3 x)),
/// which equals (-v + sqrt(v^2 + 2 delta3 x)) / delta3 but has no cancellation
/// for small delta3 * x and reduces to x / v at delta3 = 0.
inline double solve_saddlepoint(const CgfModel& model, double x) {
  const double v = model.v();
  const double disc = v * v + 2.0 * model.delta3() * x;
  if (disc < 0.0) {
    throw DomainError("saddlepoint: x = " + std::to_string(x) + " is outside the range of K' for the truncated CGF");
  }
  const double root = std::sqrt(disc);
  const double t = 2.0 * x / (v + root);
  // K''(t) = v + delta3 t equals sqrt(disc) on this branch.
  if (!(root > 0.0)) throw DomainError("saddlepoint: K''(t) <= 0 at x = " + std::to_string(x));
  return t;
}

/// Everything evaluated at one x.
struct SaddlepointEval {
  double x = 0.0;
  double t_hat = 0.0;
  double k_at = 0.0;
  double k2_at = 0.0;
  double w_hat = 0.0;
  double u_hat = 0.0;
  double density = 0.0;
  double tail_upper = 0.0;
};

namespace detail {

// With K'(t) = x:
//   t x - K(t)     = t^2 (v/2 + delta3 t / 3)
//   1/w - 1/u      = (delta3/3) / (sqrt(a) sqrt(b) (sqrt(a) + sqrt(b)))
// where a = v + 2 delta3 t / 3 and b = K''(t) = v + delta3 t. Both forms are
// free of cancellation, and the second has the removable singularity at
// t = 0 already divided out, where it equals delta3 / (6 v^{3/2}).
inline double exponent_gap(const CgfModel& m, double t) {
  return t * t * (0.5 * m.v() + m.delta3() * t / 3.0);
}

inline double inverse_gap(const CgfModel& m, double t) {
  const double ra = std::sqrt(m.v() + 2.0 * m.delta3() * t / 3.0);
  const double rb = std::sqrt(m.v() + m.delta3() * t);
  return (m.delta3() / 3.0) / (ra * rb * (ra + rb));
}

}  // namespace detail

inline SaddlepointEval evaluate(const CgfModel& model, double x) {
  SaddlepointEval e;
  e.x = x;
  e.t_hat = solve_saddlepoint(model, x);
  const auto kv = cgf_eval(model, e.t_hat);
  e.k_at = kv.k;
  e.k2_at = kv.k2;
  if (!(e.k2_at > 0.0)) throw DomainError("saddlepoint: K''(t) <= 0 at x = " + std::to_string(x));

  const double gap = detail::exponent_gap(model, e.t_hat);  // t x - K(t) >= 0
  const double w_abs = std::sqrt(std::max(gap, 0.0) * 2.0);
  e.w_hat = x > 0.0 ? w_abs : (x < 0.0 ? -w_abs : 0.0);
  e.u_hat = e.t_hat * std::sqrt(e.k2_at);
  e.density = std::exp(-gap) / std::sqrt(2.0 * std::numbers::pi * e.k2_at);
  // Upper tail 1 - F, F = Phi(w) + phi(w) (1/w - 1/u).
  e.tail_upper = normal_sf(e.w_hat) - normal_pdf(e.w_hat) * detail::inverse_gap(model, e.t_hat);
  return e;
}

/// exp(K(t) - t x) / sqrt(2 pi K''(t)) at the saddlepoint. Not renormalized.
inline double saddlepoint_density(const CgfModel& model, double x) { return evaluate(model, x).density; }

/// Lugannani-Rice approximation of P(T >= x).
inline double lugannani_rice_tail(const CgfModel& model, double x) { return evaluate(model, x).tail_upper; }

/// Value of the tail formula at x = 0: 1/2 - delta3 / (6 sqrt(2 pi) v^{3/2}).
inline double lugannani_rice_tail_at_zero(const CgfModel& model) {
  return 0.5 - model.delta3() / (6.0 * std::sqrt(2.0 * std::numbers::pi) * model.v() * std::sqrt(model.v()));
}

/// Trapezoid integral of the (unnormalized) saddlepoint density over
/// [lo, hi] intersected with the model's domain.
inline double density_integral(const CgfModel& model, double lo, double hi, std::size_t points = 4001) {
  bnshift::detail::require(lo < hi && points >= 2, "integration range must be nonempty");
  // Stay off the endpoint where K'' vanishes and the density diverges.
  const double margin = 1e-9 * (1.0 + std::abs(lo) + std::abs(hi));
  lo = std::max(lo, model.lower_limit() + margin);
  hi = std::min(hi, model.upper_limit() - margin);
  if (!(lo < hi)) return 0.0;
  const double h = (hi - lo) / static_cast<double>(points - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const double w = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
    sum += w * saddlepoint_density(model, lo + h * static_cast<double>(i));
  }
  return sum * h;
}

}  // namespace bnshift::saddlepoint
