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

#include <cstdint>
#include <random>

namespace bnshift {

using Seed = std::uint64_t;
using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of stream `stream_index` under master seed `seed`:
///   mix(seed, i) = splitmix64(splitmix64(seed) ^ splitmix64(i + 0x632BE59BD9B4E019)).
/// Streams are indexed by fixed-size blocks of Monte Carlo replications, so
/// results never depend on how many workers consume the blocks.
constexpr std::uint64_t derive_stream_seed(Seed seed, std::uint64_t stream_index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream_index + 0x632BE59BD9B4E019ULL));
}

inline Engine make_stream(Seed seed, std::uint64_t stream_index) {
  return Engine(derive_stream_seed(seed, stream_index));
}

}  // namespace bnshift
