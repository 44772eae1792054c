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

#include <cstdint>
#include <string>
#include <vector>

#include "tmrsr/common.hpp"
#include "tmrsr/rng.hpp"

// Latent-code utilities: sampling, k-means centroid banks, and truncation of
// latents toward their nearest center. The bank is immutable once built and
// can be shared freely across threads.

namespace tmrsr {

/// Standard-normal latent vector, deterministic per rng state.
std::vector<Scalar> sample_latent(Rng& rng, int latent_dim);

struct CentroidBank {
  std::vector<Scalar> centers;  // n_clusters * latent_dim, row-major
  int n_clusters = 0;
  int latent_dim = 0;
  uint64_t sample_count = 0;  // how many latents the bank was fit on

  const Scalar* center(int j) const {
    return centers.data() + static_cast<size_t>(j) * latent_dim;
  }
  /// Index of the Euclidean-nearest center; ties break to the lowest index.
  int nearest(const Scalar* v) const;
};

/// Serialization: magic "TMCB1", u32 cluster count, u32 latent dim, then
/// n*latent_dim little-endian f32 center values. Reload is bit-exact at f32
/// precision (centers are stored and compared as f32).
void write_bank(const std::string& path, const CentroidBank& bank);
CentroidBank read_bank(const std::string& path);

/// Lloyd's k-means with k-means++ seeding over row-major points
/// (m x dim). Runs at most `max_iters` iterations and stops early when the
/// within-cluster SSE improves by less than rtol relative. The objective is
/// non-increasing across iterations; pass `sse_trace` to observe it per
/// iteration. Throws ConfigError when m < n or n < 1.
CentroidBank kmeans(const std::vector<Scalar>& points, int m, int dim, int n,
                    Rng& rng, int max_iters = 100, Scalar rtol = 1e-6,
                    std::vector<Scalar>* sse_trace = nullptr);

/// phi * f + (1 - phi) * nearest-center(f): phi = 1 keeps the latent, phi = 0
/// snaps it to its nearest center. Throws ConfigError on an empty bank or a
/// dimension mismatch.
std::vector<Scalar> truncate_latent(const std::vector<Scalar>& f,
                                    const CentroidBank& bank, Scalar phi);

}  // namespace tmrsr
