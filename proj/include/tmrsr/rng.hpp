/*
 * Copyright 2026 The tmrsr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "tmrsr/common.hpp"

namespace tmrsr {

/// Seed-stream derivation.
///
/// One root seed fans out into independent streams so that runs are
/// reproducible end to end. The rule is:
///
///   stream_seed = splitmix64(root ^ (tag + 1) * 0x9E3779B97F4A7C15)
///
/// where `tag` names the consumer (see SeedTag). Per-epoch or per-sample
/// streams derive a second time with the epoch / sample index, which keeps
/// training restartable without serializing engine state.
enum class SeedTag : std::uint64_t {
  kInit = 0,       // parameter initialization
  kDataOrder = 1,  // shuffling of the training pairs
  kAugment = 2,    // flip/transpose augmentation draws
  kLatent = 3,     // latent sampling (GAN training, bank construction)
  kPhantom = 4,    // synthetic volume generation
  kTest = 5,       // test-local randomness
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, SeedTag tag) {
  return splitmix64(root ^ (static_cast<std::uint64_t>(tag) + 1) *
                               0x9E3779B97F4A7C15ULL);
}

inline std::uint64_t derive_seed(std::uint64_t root, SeedTag tag,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(root, tag) ^ splitmix64(index));
}

/// Deterministic random source. Wraps mt19937_64 with self-contained
/// uniform/normal draws so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  Scalar uniform() {
    return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
  }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  bool bernoulli(Scalar p = 0.5) { return uniform() < p; }

  /// Standard normal via Box-Muller; one spare value is cached.
  Scalar normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    Scalar u1 = uniform();
    Scalar u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const Scalar r = std::sqrt(-2.0 * std::log(u1));
    const Scalar t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  Scalar normal(Scalar mean, Scalar stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  Scalar spare_ = 0.0;
};

}  // namespace tmrsr
