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

#include "tmrsr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace tmrsr {

namespace {

struct Ellipsoid {
  double cx, cy, cz;  // center, voxel units
  double ax, ay, az;  // semi-axes
  // Normalized squared radius: <1 inside, 1 on the surface.
  double rho2(double x, double y, double z) const {
    const double dx = (x - cx) / ax;
    const double dy = (y - cy) / ay;
    const double dz = (z - cz) / az;
    return dx * dx + dy * dy + dz * dz;
  }
};

// Separable 3-point triangular blur along one axis (weights 1/4, 1/2, 1/4,
// edge-clamped) to soften pure step edges by roughly one voxel.
void blur_axis(Volume& v, Axis axis) {
  const int n = v.axis_len(axis);
  if (n < 2) return;
  std::vector<float> line(static_cast<size_t>(n));
  const auto walk = [&](auto&& fn) {
    switch (axis) {
      case Axis::kX:
        for (int z = 0; z < v.nz; ++z)
          for (int y = 0; y < v.ny; ++y) fn(y, z);
        break;
      case Axis::kY:
        for (int z = 0; z < v.nz; ++z)
          for (int x = 0; x < v.nx; ++x) fn(x, z);
        break;
      default:
        for (int y = 0; y < v.ny; ++y)
          for (int x = 0; x < v.nx; ++x) fn(x, y);
    }
  };
  walk([&](int a, int b) {
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(i - 1, 0);
      const int hi = std::min(i + 1, n - 1);
      float s0, s1, s2;
      switch (axis) {
        case Axis::kX:
          s0 = v.at(lo, a, b); s1 = v.at(i, a, b); s2 = v.at(hi, a, b);
          break;
        case Axis::kY:
          s0 = v.at(a, lo, b); s1 = v.at(a, i, b); s2 = v.at(a, hi, b);
          break;
        default:
          s0 = v.at(a, b, lo); s1 = v.at(a, b, i); s2 = v.at(a, b, hi);
      }
      line[static_cast<size_t>(i)] = 0.25f * s0 + 0.5f * s1 + 0.25f * s2;
    }
    for (int i = 0; i < n; ++i) {
      switch (axis) {
        case Axis::kX: v.at(i, a, b) = line[static_cast<size_t>(i)]; break;
        case Axis::kY: v.at(a, i, b) = line[static_cast<size_t>(i)]; break;
        default: v.at(a, b, i) = line[static_cast<size_t>(i)];
      }
    }
  });
}

Volume make_phantom(const PhantomSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Volume v;
  v.nx = spec.nx;
  v.ny = spec.ny;
  v.nz = spec.nz;
  v.data.assign(v.numel(), 0.0f);

  const double cx = 0.5 * (spec.nx - 1) * (1.0 + 0.06 * (rng.uniform() - 0.5));
  const double cy = 0.5 * (spec.ny - 1) * (1.0 + 0.06 * (rng.uniform() - 0.5));
  const double cz = 0.5 * (spec.nz - 1) * (1.0 + 0.06 * (rng.uniform() - 0.5));
  Ellipsoid head{cx,
                 cy,
                 cz,
                 (0.36 + 0.06 * rng.uniform()) * spec.nx,
                 (0.40 + 0.06 * rng.uniform()) * spec.ny,
                 (0.38 + 0.06 * rng.uniform()) * spec.nz};

  // Low-frequency interior modulation: three random 3-D cosines.
  struct Wave {
    double fx, fy, fz, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i)
    waves.push_back({(0.5 + 1.5 * rng.uniform()) * 2.0 * 3.14159265358979 /
                         spec.nx,
                     (0.5 + 1.5 * rng.uniform()) * 2.0 * 3.14159265358979 /
                         spec.ny,
                     (0.5 + 1.5 * rng.uniform()) * 2.0 * 3.14159265358979 /
                         spec.nz,
                     rng.uniform() * 6.28318530717959, 0.03 + 0.02 * rng.uniform()});

  std::vector<Ellipsoid> blobs;
  std::vector<Scalar> blob_level;
  for (int i = 0; i < spec.n_ellipsoids; ++i) {
    // Place centers within half the head radius so blobs stay interior.
    const double u = 2.0 * rng.uniform() - 1.0;
    const double w = 2.0 * rng.uniform() - 1.0;
    const double q = 2.0 * rng.uniform() - 1.0;
    blobs.push_back({head.cx + 0.45 * u * head.ax,
                     head.cy + 0.45 * w * head.ay,
                     head.cz + 0.45 * q * head.az,
                     (0.10 + 0.14 * rng.uniform()) * head.ax,
                     (0.10 + 0.14 * rng.uniform()) * head.ay,
                     (0.10 + 0.14 * rng.uniform()) * head.az});
    blob_level.push_back(i % 2 == 0 ? spec.white : spec.dark);
  }

  for (int z = 0; z < spec.nz; ++z)
    for (int y = 0; y < spec.ny; ++y)
      for (int x = 0; x < spec.nx; ++x) {
        const double rho = std::sqrt(head.rho2(x, y, z));
        double val = 0.0;
        if (rho < 1.0) {
          if (rho >= 0.92) {
            val = spec.skull;
          } else if (rho >= 0.86) {
            val = spec.csf;
          } else {
            val = spec.grey;
            for (const auto& wv : waves)
              val += wv.amp * std::cos(wv.fx * x + wv.fy * y + wv.fz * z +
                                       wv.phase);
            for (size_t b = 0; b < blobs.size(); ++b)
              if (blobs[b].rho2(x, y, z) < 1.0) val = blob_level[b];
          }
        }
        v.at(x, y, z) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }

  blur_axis(v, Axis::kX);
  blur_axis(v, Axis::kY);
  blur_axis(v, Axis::kZ);
  return normalize(v);
}

}  // namespace

std::vector<Volume> generate_phantoms(const PhantomSpec& spec, int count) {
  if (count < 1) throw ConfigError("phantom count must be >= 1");
  std::vector<Volume> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(make_phantom(
        spec, derive_seed(spec.seed, SeedTag::kPhantom, static_cast<uint64_t>(i))));
  return out;
}

std::vector<std::string> write_phantom_set(const PhantomSpec& spec, int count,
                                           const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto vols = generate_phantoms(spec, count);
  std::vector<std::string> paths;
  paths.reserve(vols.size());
  for (size_t i = 0; i < vols.size(); ++i) {
    std::string path =
        (std::filesystem::path(dir) / ("phantom_" + std::to_string(i) + ".tmrv"))
            .string();
    write_volume(vols[i], path);
    paths.push_back(std::move(path));
  }
  return paths;
}

}  // namespace tmrsr
