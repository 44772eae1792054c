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

#include <vector>

#include "tmrsr/volume.hpp"

// Synthetic head phantoms: a jittered outer ellipsoid with a bright shell
// ("skull"), a dark gap beneath it ("csf"), a smoothly modulated interior
// ("grey"), and randomly placed interior ellipsoids alternating between a
// bright and a dark tissue band. Crisp class boundaries plus a mild blur give
// the degradation pipeline structure that plain interpolation cannot fully
// recover, while staying fully deterministic per seed.

namespace tmrsr {

struct PhantomSpec {
  int nx = 64, ny = 64, nz = 64;
  int n_ellipsoids = 6;
  // Intensity bands: shell, gap, interior background, bright blob, dark blob.
  Scalar skull = 0.95;
  Scalar csf = 0.08;
  Scalar grey = 0.45;
  Scalar white = 0.72;
  Scalar dark = 0.18;
  uint64_t seed = 0;
};

/// Deterministic per (spec, index): element i of the result depends only on
/// the spec fields and i.
std::vector<Volume> generate_phantoms(const PhantomSpec& spec, int count);

/// Generates `count` phantoms and writes them as TMRV1 files named
/// phantom_<index>.tmrv under dir (created if needed). Returns the paths.
std::vector<std::string> write_phantom_set(const PhantomSpec& spec, int count,
                                           const std::string& dir);

}  // namespace tmrsr
