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
#include <numbers>

namespace bnshift {

inline constexpr double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;

/// Standard normal density.
inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Standard normal c.d.f. via erfc, which keeps full relative accuracy in
/// the lower tail.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

/// Upper tail 1 - Phi(z), accurate for large positive z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z * std::numbers::sqrt2 / 2.0); }

}  // namespace bnshift
