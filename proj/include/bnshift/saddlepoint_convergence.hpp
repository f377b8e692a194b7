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

#include <cstddef>
#include <span>
#include <vector>

#include "bnshift/sim_harness.hpp"

namespace bnshift::saddlepoint {

struct SupNormPoint {
  sim::SizePair size;
  double sup_norm = 0.0;     // max over usable grid points of |KDE - saddlepoint density|
  double noise_floor = 0.0;  // 3 x max pointwise KDE standard error
  std::size_t points_used = 0;
};

/// Empirical uniform error of the saddlepoint density over a grid, for a
/// ladder of sample sizes. Grid points outside the truncated model's domain
/// are skipped. With the default sd-unit grid the compared region scales
/// with sqrt(V_{n,m}).
inline std::vector<SupNormPoint> sup_norm_error_curve(const stats::DistributionSpec& train,
                                                      const stats::DistributionSpec& test,
                                                      std::span<const sim::SizePair> sizes, const sim::GridSpec& grid,
                                                      const McOptions& mc) {
  bnshift::detail::require(!sizes.empty(), "size list must be nonempty");
  std::vector<SupNormPoint> out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    sim::SimConfig config{train, test, sizes[i].n, sizes[i].m, {mc.reps, sim::ladder_seed(mc.seed, i), mc.workers}, grid};
    const sim::Method methods[] = {sim::Method::saddlepoint_density};
    const auto cmp = sim::compare_cdf(config, methods);
    out.push_back({sizes[i], cmp.methods.front().sup_norm, cmp.density_noise_floor, cmp.methods.front().points_used});
  }
  return out;
}

}  // namespace bnshift::saddlepoint
