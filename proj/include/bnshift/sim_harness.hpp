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
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bnshift/blending.hpp"
#include "bnshift/edgeworth.hpp"
#include "bnshift/error.hpp"
#include "bnshift/parallel.hpp"
#include "bnshift/saddlepoint.hpp"
#include "bnshift/stats_core.hpp"

namespace bnshift::sim {

enum class GridUnits {
  absolute,  // lo/hi are values of T
  sd,        // lo/hi are multiples of sqrt(V_{n,m})
};

struct GridSpec {
  double lo = -5.0;
  double hi = 5.0;
  std::size_t points = 201;
  GridUnits units = GridUnits::sd;

  void validate() const {
    bnshift::detail::require(lo < hi, "grid requires lo < hi");
    bnshift::detail::require(points >= 2, "grid requires at least 2 points");
  }

  std::vector<double> resolve(const edgeworth::TnmParams& params) const {
    validate();
    const double scale = units == GridUnits::sd ? std::sqrt(params.v_nm) : 1.0;
    std::vector<double> xs(points);
    const double step = (hi - lo) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) xs[i] = scale * (lo + step * static_cast<double>(i));
    xs.back() = scale * hi;
    return xs;
  }
};

struct SimConfig {
  stats::DistributionSpec train_spec = stats::Gaussian{};
  stats::DistributionSpec test_spec = stats::Gaussian{};
  std::size_t n = 50;
  std::size_t m = 50;
  McOptions mc{};
  GridSpec grid{};

  void validate() const {
    stats::validate(train_spec);
    stats::validate(test_spec);
    bnshift::detail::require(n >= 1 && m >= 1, "n and m must be at least 1");
    bnshift::detail::require(mc.reps >= 1, "reps must be at least 1");
    grid.validate();
  }

  stats::ShiftScenario scenario() const { return stats::scenario_from(train_spec, test_spec); }
  edgeworth::TnmParams params() const { return edgeworth::tnm_params(scenario(), n, m); }
};

/// Realizations of the normalized mean gap T, one per replication.
inline std::vector<double> simulate_tnm(const SimConfig& config) {
  config.validate();
  const double delta_mu = config.scenario().delta_mu();
  std::vector<double> out(config.mc.reps);
  parallel_reps(config.mc.reps, config.mc.seed, config.mc.workers, [&](Engine& eng, std::size_t rep) {
    thread_local std::vector<double> xs;
    thread_local std::vector<double> ys;
    xs.resize(config.n);
    ys.resize(config.m);
    stats::draw(config.train_spec, eng, xs);
    stats::draw(config.test_spec, eng, ys);
    out[rep] = edgeworth::tnm_statistic(pairwise_mean(xs), config.n, pairwise_mean(ys), config.m, delta_mu);
  });
  return out;
}

/// Radius of the DKW band sqrt(ln(2/alpha) / (2 reps)): with probability
/// 1 - alpha the empirical c.d.f. is uniformly within it of the truth.
inline double dkw_noise_floor(std::size_t reps, double alpha = 0.05) {
  bnshift::detail::require(reps >= 1, "reps must be at least 1");
  bnshift::detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(reps)));
}

/// Fraction of a sorted sample <= x.
inline double empirical_cdf(std::span<const double> sorted, double x) {
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

/// Silverman's rule 0.9 min(sd, IQR/1.34) N^{-1/5}.
inline double silverman_bandwidth(std::span<const double> sorted) {
  bnshift::detail::require(sorted.size() >= 2, "bandwidth needs at least 2 points");
  const auto s = stats::summarize(sorted);
  const double sd = std::sqrt(s.var_biased);
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  return 0.9 * spread * std::pow(static_cast<double>(sorted.size()), -0.2);
}

/// Gaussian-kernel density estimate at x. Kernels beyond 9 bandwidths are
/// skipped (their weight is below 3e-18).
inline double kde(std::span<const double> sorted, double x, double bandwidth) {
  const auto first = std::lower_bound(sorted.begin(), sorted.end(), x - 9.0 * bandwidth);
  const auto last = std::upper_bound(first, sorted.end(), x + 9.0 * bandwidth);
  double sum = 0.0;
  for (auto it = first; it != last; ++it) {
    const double u = (x - *it) / bandwidth;
    sum += std::exp(-0.5 * u * u);
  }
  return sum * kInvSqrt2Pi / (bandwidth * static_cast<double>(sorted.size()));
}

/// Rough pointwise standard error sqrt(f R(K) / (N h)) of a Gaussian KDE,
/// with R(K) = 1 / (2 sqrt(pi)).
inline double kde_standard_error(double density, std::size_t count, double bandwidth) {
  const double rk = 0.5 * std::numbers::inv_sqrtpi;
  return std::sqrt(std::max(density, 0.0) * rk / (static_cast<double>(count) * bandwidth));
}

enum class Method { normal, edgeworth, saddlepoint_density, lugannani_rice };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::normal: return "normal";
    case Method::edgeworth: return "edgeworth";
    case Method::saddlepoint_density: return "saddlepoint_density";
    case Method::lugannani_rice: return "lugannani_rice";
  }
  return "unknown";
}

inline bool is_cdf_method(Method m) { return m != Method::saddlepoint_density; }

/// Analytic approximation at x: a c.d.f. value for c.d.f. methods, a density
/// for saddlepoint_density. NaN where the truncated CGF has no saddlepoint.
inline double approximation(Method method, double x, const edgeworth::TnmParams& params) {
  switch (method) {
    case Method::normal: return edgeworth::normal_cdf_baseline(x, params);
    case Method::edgeworth: return edgeworth::edgeworth_cdf(x, params);
    case Method::saddlepoint_density:
    case Method::lugannani_rice: {
      const saddlepoint::CgfModel model(params);
      if (!model.in_domain(x)) return std::nan("");
      const auto e = saddlepoint::evaluate(model, x);
      return method == Method::lugannani_rice ? 1.0 - e.tail_upper : e.density;
    }
  }
  return std::nan("");
}

struct ApproxComparison {
  Method method = Method::normal;
  double sup_norm = 0.0;  // max over grid points of |error|
  /// c.d.f. methods: two-sided KS distance over every simulated value.
  /// saddlepoint_density: equal to sup_norm.
  double ks_like = 0.0;
  double mean_abs = 0.0;
  std::size_t points_used = 0;
  std::vector<double> approx;  // per grid point, NaN outside the domain
  std::vector<double> errors;  // approx - reference, NaN outside the domain
};

struct CdfComparison {
  edgeworth::TnmParams params;
  std::vector<double> grid;
  std::vector<double> empirical_cdf;
  std::vector<double> empirical_density;  // filled when a density method is requested
  double noise_floor = 0.0;               // DKW radius at alpha = 0.05
  double density_noise_floor = 0.0;       // 3 x max pointwise KDE standard error
  double bandwidth = 0.0;
  std::vector<ApproxComparison> methods;
};

namespace detail {

inline double ks_distance(std::span<const double> sorted, Method method, const edgeworth::TnmParams& params) {
  const double count = static_cast<double>(sorted.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = approximation(method, sorted[i], params);
    if (std::isnan(f)) continue;
    worst = std::max({worst, std::abs(static_cast<double>(i + 1) / count - f), std::abs(static_cast<double>(i) / count - f)});
  }
  return worst;
}

}  // namespace detail

/// Compares each approximation with the empirical law of simulated T:
/// c.d.f. methods against the empirical c.d.f., the saddlepoint density
/// against a Gaussian KDE with Silverman bandwidth.
inline CdfComparison compare_cdf_sample(std::vector<double> sample, const edgeworth::TnmParams& params,
                                        const GridSpec& grid_spec, std::span<const Method> methods) {
  bnshift::detail::require(!sample.empty(), "comparison needs a nonempty sample");
  std::sort(sample.begin(), sample.end());
  CdfComparison out;
  out.params = params;
  out.grid = grid_spec.resolve(params);
  out.noise_floor = dkw_noise_floor(sample.size());
  out.empirical_cdf.resize(out.grid.size());
  for (std::size_t i = 0; i < out.grid.size(); ++i) out.empirical_cdf[i] = empirical_cdf(sample, out.grid[i]);

  const bool want_density =
      std::any_of(methods.begin(), methods.end(), [](Method m) { return m == Method::saddlepoint_density; });
  if (want_density) {
    out.bandwidth = silverman_bandwidth(sample);
    out.empirical_density.resize(out.grid.size());
    double worst_se = 0.0;
    for (std::size_t i = 0; i < out.grid.size(); ++i) {
      out.empirical_density[i] = kde(sample, out.grid[i], out.bandwidth);
      worst_se = std::max(worst_se, kde_standard_error(out.empirical_density[i], sample.size(), out.bandwidth));
    }
    out.density_noise_floor = 3.0 * worst_se;
  }

  for (Method method : methods) {
    ApproxComparison c;
    c.method = method;
    const auto& reference = is_cdf_method(method) ? out.empirical_cdf : out.empirical_density;
    c.approx.resize(out.grid.size());
    c.errors.resize(out.grid.size());
    double total = 0.0;
    for (std::size_t i = 0; i < out.grid.size(); ++i) {
      c.approx[i] = approximation(method, out.grid[i], params);
      c.errors[i] = c.approx[i] - reference[i];
      if (std::isnan(c.errors[i])) continue;
      c.sup_norm = std::max(c.sup_norm, std::abs(c.errors[i]));
      total += std::abs(c.errors[i]);
      ++c.points_used;
    }
    c.mean_abs = c.points_used > 0 ? total / static_cast<double>(c.points_used) : std::nan("");
    c.ks_like = is_cdf_method(method) ? detail::ks_distance(sample, method, params) : c.sup_norm;
    out.methods.push_back(std::move(c));
  }
  return out;
}

inline CdfComparison compare_cdf(const SimConfig& config, std::span<const Method> methods) {
  return compare_cdf_sample(simulate_tnm(config), config.params(), config.grid, methods);
}

// ---------------------------------------------------------------------------
// Convergence-rate regression.

struct SizePair {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t min_size() const { return std::min(n, m); }
};

struct RatePoint {
  SizePair size;
  double error = 0.0;
  double noise_floor = 0.0;
  bool below_noise_floor = false;
};

struct RateResult {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<RatePoint> points;
  /// True when any error is below its noise floor, so the slope partly
  /// measures Monte Carlo noise.
  bool noise_limited = false;
};

/// Seed used for the i-th size of a ladder.
inline Seed ladder_seed(Seed seed, std::size_t index) { return derive_stream_seed(seed, 0x5A17ULL + index); }

/// Ordinary least squares fit y = a + b x; returns {a, b}.
inline std::pair<double, double> ols_fit(std::span<const double> x, std::span<const double> y) {
  bnshift::detail::require(x.size() == y.size() && x.size() >= 2, "regression needs at least 2 paired points");
  const double k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  bnshift::detail::require(sxx > 0.0, "regression needs distinct abscissae");
  const double b = sxy / sxx;
  return {my - b * mx, b};
}

/// Slope of log(sup-norm error) against log(min(n, m)) over a size ladder.
inline RateResult rate_regression(const stats::DistributionSpec& train, const stats::DistributionSpec& test,
                                  std::span<const SizePair> ladder, Method method, const McOptions& mc,
                                  const GridSpec& grid = {}) {
  bnshift::detail::require(ladder.size() >= 4, "rate regression needs at least 4 sizes");
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    bnshift::detail::require(ladder[i].min_size() > ladder[i - 1].min_size(), "size ladder must be strictly increasing");
  }
  RateResult out;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    SimConfig config{train, test, ladder[i].n, ladder[i].m, {mc.reps, ladder_seed(mc.seed, i), mc.workers}, grid};
    const Method methods[] = {method};
    const auto cmp = compare_cdf(config, methods);
    RatePoint p;
    p.size = ladder[i];
    p.error = cmp.methods.front().sup_norm;
    p.noise_floor = is_cdf_method(method) ? cmp.noise_floor : cmp.density_noise_floor;
    p.below_noise_floor = p.error <= p.noise_floor;
    out.noise_limited = out.noise_limited || p.below_noise_floor;
    out.points.push_back(p);
    lx.push_back(std::log(static_cast<double>(p.size.min_size())));
    ly.push_back(std::log(std::max(p.error, 1e-300)));
  }
  std::tie(out.intercept, out.slope) = ols_fit(lx, ly);
  return out;
}

// ---------------------------------------------------------------------------
// Empirical MSE of the blended mean.

struct MsePoint {
  double lambda = 0.0;
  double mse = 0.0;
  double se = 0.0;  // Monte Carlo standard error of mse
};

inline std::vector<MsePoint> mse_curve(const stats::DistributionSpec& train, const stats::DistributionSpec& test,
                                       std::size_t n, std::size_t m, std::span<const double> lambdas,
                                       const McOptions& mc) {
  stats::validate(train);
  stats::validate(test);
  bnshift::detail::require(n >= 1 && m >= 1, "n and m must be at least 1");
  bnshift::detail::require(mc.reps >= 2, "mse curve needs at least 2 replications");
  bnshift::detail::require(!lambdas.empty(), "lambda grid must be nonempty");
  for (double l : lambdas) bnshift::detail::require(l >= 0.0 && l <= 1.0, "lambda grid must lie in [0, 1]");
  const double mu_q = stats::population_moments(test).mean;

  std::vector<double> mean_p(mc.reps), mean_q(mc.reps);
  parallel_reps(mc.reps, mc.seed, mc.workers, [&](Engine& eng, std::size_t rep) {
    thread_local std::vector<double> xs;
    thread_local std::vector<double> ys;
    xs.resize(n);
    ys.resize(m);
    stats::draw(train, eng, xs);
    stats::draw(test, eng, ys);
    mean_p[rep] = pairwise_mean(xs);
    mean_q[rep] = pairwise_mean(ys);
  });

  std::vector<MsePoint> out;
  std::vector<double> sq(mc.reps);
  std::vector<double> dev(mc.reps);
  for (double lambda : lambdas) {
    for (std::size_t r = 0; r < mc.reps; ++r) {
      const double e = blending::blend_mean(lambda, mean_p[r], mean_q[r]) - mu_q;
      sq[r] = e * e;
    }
    const double mse = pairwise_mean(sq);
    for (std::size_t r = 0; r < mc.reps; ++r) dev[r] = (sq[r] - mse) * (sq[r] - mse);
    const double var = pairwise_sum(dev) / static_cast<double>(mc.reps - 1);
    out.push_back({lambda, mse, std::sqrt(var / static_cast<double>(mc.reps))});
  }
  return out;
}

}  // namespace bnshift::sim
