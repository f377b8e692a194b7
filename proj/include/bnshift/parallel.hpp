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
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "bnshift/error.hpp"
#include "bnshift/rng.hpp"

namespace bnshift {

/// Replications per RNG stream. Part of the reproducibility contract: changing
/// it changes every Monte Carlo output.
inline constexpr std::size_t kRepsPerBlock = 256;

/// Common Monte Carlo knobs.
struct McOptions {
  std::size_t reps = 10000;
  Seed seed = 1;
  /// 0 selects BNSHIFT_WORKERS from the environment, else hardware concurrency.
  unsigned workers = 0;
};

inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("BNSHIFT_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(engine, rep) for rep in [0, reps). Replication `rep` always draws
/// from stream `rep / kRepsPerBlock`, consumed in rep order within the block.
template <class Body>
void parallel_reps(std::size_t reps, Seed seed, unsigned workers, Body&& body) {
  const std::size_t blocks = (reps + kRepsPerBlock - 1) / kRepsPerBlock;
  auto run_block = [&](std::size_t b) {
    Engine eng = make_stream(seed, b);
    const std::size_t end = std::min(reps, (b + 1) * kRepsPerBlock);
    for (std::size_t r = b * kRepsPerBlock; r < end; ++r) body(eng, r);
  };

  const unsigned nw = std::min<std::size_t>(resolve_workers(workers), std::max<std::size_t>(blocks, 1));
  if (nw <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) run_block(b);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (unsigned w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t b = w; b < blocks; b += nw) run_block(b);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Pairwise (tree) summation with a fixed split rule, so the rounding of a
/// sum depends only on the values and their order.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_mean(std::span<const double> xs) {
  bnshift::detail::require(!xs.empty(), "mean of an empty range");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace bnshift
