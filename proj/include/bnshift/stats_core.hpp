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
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "bnshift/error.hpp"
#include "bnshift/rng.hpp"

namespace bnshift::stats {

enum class SampleLabel { train, test };

/// One BN channel's worth of scalar activations.
class Sample {
 public:
  Sample(std::vector<double> values, SampleLabel label) : values_(std::move(values)), label_(label) {
    bnshift::detail::require(!values_.empty(), "sample must contain at least one value");
    for (double v : values_) bnshift::detail::require(std::isfinite(v), "sample values must be finite");
  }

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  SampleLabel label() const { return label_; }

 private:
  std::vector<double> values_;
  SampleLabel label_;
};

/// Plug-in moments with 1/n normalization throughout.
struct MomentSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double var_biased = 0.0;
  double third_central = 0.0;
};

inline MomentSummary summarize(std::span<const double> xs) {
  bnshift::detail::require(!xs.empty(), "cannot summarize an empty sample");
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : xs) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  return {xs.size(), mean, m2 / n, m3 / n};
}

inline MomentSummary summarize(const Sample& sample) { return summarize(sample.values()); }

/// Population mean, variance and third cumulant of one distribution.
struct PopulationMoments {
  double mean = 0.0;
  double variance = 1.0;
  double kappa3 = 0.0;
};

/// Ground truth for a train (P) / test (Q) pair. The mean shift is always
/// derived from the two means.
class ShiftScenario {
 public:
  ShiftScenario(PopulationMoments p, PopulationMoments q) : p_(p), q_(q) {
    bnshift::detail::require(p.variance > 0.0 && q.variance > 0.0, "scenario variances must be positive");
    bnshift::detail::require(std::isfinite(p.mean) && std::isfinite(q.mean) && std::isfinite(p.kappa3) &&
                        std::isfinite(q.kappa3) && std::isfinite(p.variance) && std::isfinite(q.variance),
                    "scenario parameters must be finite");
  }

  double mu_p() const { return p_.mean; }
  double mu_q() const { return q_.mean; }
  double var_p() const { return p_.variance; }
  double var_q() const { return q_.variance; }
  double kappa3_p() const { return p_.kappa3; }
  double kappa3_q() const { return q_.kappa3; }
  double delta_mu() const { return q_.mean - p_.mean; }

  const PopulationMoments& train() const { return p_; }
  const PopulationMoments& test() const { return q_; }

 private:
  PopulationMoments p_;
  PopulationMoments q_;
};

/// Learned BN scale/shift plus the variance stabilizer.
class BnAffine {
 public:
  explicit BnAffine(double gamma = 1.0, double beta_shift = 0.0, double epsilon = 1e-5)
      : gamma_(gamma), beta_shift_(beta_shift), epsilon_(epsilon) {
    bnshift::detail::require(epsilon > 0.0, "BN epsilon must be positive");
  }

  double gamma() const { return gamma_; }
  double beta_shift() const { return beta_shift_; }
  double epsilon() const { return epsilon_; }

 private:
  double gamma_;
  double beta_shift_;
  double epsilon_;
};

/// gamma * (z - mu) / sqrt(var + epsilon) + beta_shift
inline double apply_bn(double z, double mu, double var, const BnAffine& affine) {
  bnshift::detail::require(var >= 0.0, "BN variance must be nonnegative");
  return affine.gamma() * (z - mu) / std::sqrt(var + affine.epsilon()) + affine.beta_shift();
}

// ---------------------------------------------------------------------------
// Distribution families used as simulation ground truth.

/// N(mean, variance).
struct Gaussian {
  double mean = 0.0;
  double variance = 1.0;
};

/// mean + scale * (G - shape) with G ~ Gamma(shape, 1). A negative scale
/// mirrors the law, giving negative skew.
struct ShiftedGamma {
  double shape = 2.0;
  double scale = 1.0;
  double mean = 0.0;
};

/// mean + exp(log_scale * Z) - exp(log_scale^2 / 2) with Z ~ N(0, 1).
struct LognormalCentered {
  double log_scale = 0.5;
  double mean = 0.0;
};

/// low with probability 1 - p_high, high with probability p_high.
struct TwoPoint {
  double low = -1.0;
  double high = 1.0;
  double p_high = 0.5;
};

using DistributionSpec = std::variant<Gaussian, ShiftedGamma, LognormalCentered, TwoPoint>;

inline std::string family_name(const DistributionSpec& spec) {
  return std::visit(
      [](const auto& d) -> std::string {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) return "gaussian";
        else if constexpr (std::is_same_v<T, ShiftedGamma>) return "shifted_gamma";
        else if constexpr (std::is_same_v<T, LognormalCentered>) return "lognormal_centered";
        else return "two_point";
      },
      spec);
}

inline void validate(const DistributionSpec& spec) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          bnshift::detail::require(std::isfinite(d.mean), "gaussian mean must be finite");
          bnshift::detail::require(d.variance > 0.0 && std::isfinite(d.variance), "gaussian variance must be positive");
        } else if constexpr (std::is_same_v<T, ShiftedGamma>) {
          bnshift::detail::require(d.shape > 0.0 && std::isfinite(d.shape), "gamma shape must be positive");
          bnshift::detail::require(d.scale != 0.0 && std::isfinite(d.scale), "gamma scale must be nonzero");
          bnshift::detail::require(std::isfinite(d.mean), "gamma mean must be finite");
        } else if constexpr (std::is_same_v<T, LognormalCentered>) {
          bnshift::detail::require(d.log_scale > 0.0 && d.log_scale < 5.0, "lognormal log_scale must lie in (0, 5)");
          bnshift::detail::require(std::isfinite(d.mean), "lognormal mean must be finite");
        } else {
          bnshift::detail::require(std::isfinite(d.low) && std::isfinite(d.high) && d.low < d.high,
                          "two_point requires finite low < high");
          bnshift::detail::require(d.p_high > 0.0 && d.p_high < 1.0, "two_point p_high must lie in (0, 1)");
        }
      },
      spec);
}

/// Exact mean, variance and third cumulant of a family.
inline PopulationMoments population_moments(const DistributionSpec& spec) {
  validate(spec);
  return std::visit(
      [](const auto& d) -> PopulationMoments {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          return {d.mean, d.variance, 0.0};
        } else if constexpr (std::is_same_v<T, ShiftedGamma>) {
          // kappa_r = (r-1)! k theta^r
          return {d.mean, d.shape * d.scale * d.scale, 2.0 * d.shape * d.scale * d.scale * d.scale};
        } else if constexpr (std::is_same_v<T, LognormalCentered>) {
          const double w = std::exp(d.log_scale * d.log_scale);
          const double var = (w - 1.0) * w;
          return {d.mean, var, (w + 2.0) * std::sqrt(w - 1.0) * std::pow(var, 1.5)};
        } else {
          const double p = d.p_high;
          const double span = d.high - d.low;
          return {d.low + p * span, p * (1.0 - p) * span * span,
                  p * (1.0 - p) * (1.0 - 2.0 * p) * span * span * span};
        }
      },
      spec);
}

/// Bound on |X| for families with bounded support; infinity otherwise.
inline double support_bound(const DistributionSpec& spec) {
  if (const auto* tp = std::get_if<TwoPoint>(&spec)) return std::max(std::abs(tp->low), std::abs(tp->high));
  return HUGE_VAL;
}

/// Fills `out` with i.i.d. draws. Draws are consumed from `eng` in order.
inline void draw(const DistributionSpec& spec, Engine& eng, std::span<double> out) {
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          std::normal_distribution<double> dist(d.mean, std::sqrt(d.variance));
          for (double& x : out) x = dist(eng);
        } else if constexpr (std::is_same_v<T, ShiftedGamma>) {
          std::gamma_distribution<double> dist(d.shape, 1.0);
          for (double& x : out) x = d.mean + d.scale * (dist(eng) - d.shape);
        } else if constexpr (std::is_same_v<T, LognormalCentered>) {
          std::normal_distribution<double> dist(0.0, 1.0);
          const double centre = std::exp(0.5 * d.log_scale * d.log_scale);
          for (double& x : out) x = d.mean + std::exp(d.log_scale * dist(eng)) - centre;
        } else {
          std::uniform_real_distribution<double> u(0.0, 1.0);
          for (double& x : out) x = u(eng) < d.p_high ? d.high : d.low;
        }
      },
      spec);
}

/// Deterministic i.i.d. sample of size n from stream 0 of `seed`.
inline Sample generate(const DistributionSpec& spec, std::size_t n, Seed seed,
                       SampleLabel label = SampleLabel::train) {
  validate(spec);
  bnshift::detail::require(n >= 1, "sample size must be at least 1");
  std::vector<double> values(n);
  Engine eng = make_stream(seed, 0);
  draw(spec, eng, values);
  return Sample(std::move(values), label);
}

inline ShiftScenario scenario_from(const DistributionSpec& train, const DistributionSpec& test) {
  return ShiftScenario(population_moments(train), population_moments(test));
}

}  // namespace bnshift::stats
