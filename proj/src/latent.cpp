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

#include "tmrsr/latent.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace tmrsr {
namespace {

constexpr char kMagic[5] = {'T', 'M', 'C', 'B', '1'};

uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xFF),
      static_cast<unsigned char>((v >> 8) & 0xFF),
      static_cast<unsigned char>((v >> 16) & 0xFF),
      static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

Scalar sq_dist(const Scalar* a, const Scalar* b, int dim) {
  Scalar d = 0.0;
  for (int i = 0; i < dim; ++i) {
    const Scalar t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace

std::vector<Scalar> sample_latent(Rng& rng, int latent_dim) {
  std::vector<Scalar> z(static_cast<size_t>(latent_dim));
  for (Scalar& v : z) v = rng.normal();
  return z;
}

int CentroidBank::nearest(const Scalar* v) const {
  int best = 0;
  Scalar best_d = std::numeric_limits<Scalar>::infinity();
  for (int j = 0; j < n_clusters; ++j) {
    const Scalar d = sq_dist(v, center(j), latent_dim);
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = j;
    }
  }
  return best;
}

void write_bank(const std::string& path, const CentroidBank& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write centroid bank: " + path);
  out.write(kMagic, 5);
  write_u32_le(out, static_cast<uint32_t>(bank.n_clusters));
  write_u32_le(out, static_cast<uint32_t>(bank.latent_dim));
  for (Scalar v : bank.centers) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
  if (!out) throw DataError("failed writing centroid bank: " + path);
}

CentroidBank read_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open centroid bank: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0)
    throw DataError("bad magic in centroid bank: " + path);
  const uint32_t n = read_u32_le(in);
  const uint32_t dim = read_u32_le(in);
  if (!in || n == 0 || dim == 0 ||
      static_cast<uint64_t>(n) * dim > (1ULL << 28))
    throw DataError("implausible header in centroid bank: " + path);
  CentroidBank bank;
  bank.n_clusters = static_cast<int>(n);
  bank.latent_dim = static_cast<int>(dim);
  bank.centers.resize(static_cast<size_t>(n) * dim);
  for (Scalar& v : bank.centers) {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof(float));
    if (!in) throw DataError("truncated centroid bank: " + path);
    if (!std::isfinite(f))
      throw DataError("non-finite center in centroid bank: " + path);
    v = f;
  }
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes in centroid bank: " + path);
  return bank;
}

CentroidBank kmeans(const std::vector<Scalar>& points, int m, int dim, int n,
                    Rng& rng, int max_iters, Scalar rtol,
                    std::vector<Scalar>* sse_trace) {
  if (sse_trace) sse_trace->clear();
  if (n < 1) throw ConfigError("kmeans: cluster count must be positive");
  if (m < n) throw ConfigError("kmeans: fewer points than clusters");
  if (points.size() != static_cast<size_t>(m) * dim)
    throw ConfigError("kmeans: point buffer does not match m x dim");

  const auto point = [&](int i) {
    return points.data() + static_cast<size_t>(i) * dim;
  };

  CentroidBank bank;
  bank.n_clusters = n;
  bank.latent_dim = dim;
  bank.sample_count = static_cast<uint64_t>(m);
  bank.centers.resize(static_cast<size_t>(n) * dim);
  auto center = [&](int j) {
    return bank.centers.data() + static_cast<size_t>(j) * dim;
  };

  // k-means++ seeding: first center uniform, then proportional to the
  // squared distance from the nearest already-chosen center.
  std::vector<Scalar> d2(static_cast<size_t>(m),
                         std::numeric_limits<Scalar>::infinity());
  {
    const int first = static_cast<int>(rng.below(static_cast<uint64_t>(m)));
    std::memcpy(center(0), point(first), sizeof(Scalar) * dim);
  }
  for (int j = 1; j < n; ++j) {
    Scalar total = 0.0;
    for (int i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], sq_dist(point(i), center(j - 1), dim));
      total += d2[i];
    }
    int pick = m - 1;
    if (total > 0.0) {
      Scalar target = rng.uniform() * total;
      for (int i = 0; i < m; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining points coincide with chosen centers; any pick works.
      pick = static_cast<int>(rng.below(static_cast<uint64_t>(m)));
    }
    std::memcpy(center(j), point(pick), sizeof(Scalar) * dim);
  }

  std::vector<int> assign(static_cast<size_t>(m), 0);
  std::vector<Scalar> sums(static_cast<size_t>(n) * dim);
  std::vector<int> counts(static_cast<size_t>(n));
  Scalar prev_sse = std::numeric_limits<Scalar>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment step + objective.
    Scalar sse = 0.0;
    for (int i = 0; i < m; ++i) {
      int best = 0;
      Scalar best_d = std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j < n; ++j) {
        const Scalar d = sq_dist(point(i), center(j), dim);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      assign[i] = best;
      sse += best_d;
    }
    if (sse_trace) sse_trace->push_back(sse);
    const bool converged =
        sse == 0.0 ||
        (prev_sse != std::numeric_limits<Scalar>::infinity() &&
         prev_sse - sse <= rtol * prev_sse);
    prev_sse = sse;
    if (converged) break;

    // Update step: mean of each cluster; empty clusters keep their center.
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < m; ++i) {
      Scalar* s = sums.data() + static_cast<size_t>(assign[i]) * dim;
      const Scalar* p = point(i);
      for (int k = 0; k < dim; ++k) s[k] += p[k];
      ++counts[assign[i]];
    }
    for (int j = 0; j < n; ++j) {
      if (counts[j] == 0) continue;
      Scalar* c = center(j);
      const Scalar* s = sums.data() + static_cast<size_t>(j) * dim;
      for (int k = 0; k < dim; ++k) c[k] = s[k] / counts[j];
    }
  }
  for (Scalar v : bank.centers)
    if (!std::isfinite(v)) throw NumericError("kmeans: non-finite center");
  return bank;
}

std::vector<Scalar> truncate_latent(const std::vector<Scalar>& f,
                                    const CentroidBank& bank, Scalar phi) {
  if (bank.n_clusters < 1 || bank.centers.empty())
    throw ConfigError("truncate: empty centroid bank");
  if (static_cast<int>(f.size()) != bank.latent_dim)
    throw ConfigError("truncate: latent dimension mismatch");
  const Scalar* c = bank.center(bank.nearest(f.data()));
  std::vector<Scalar> out(f.size());
  for (size_t i = 0; i < f.size(); ++i)
    out[i] = phi * f[i] + (1.0 - phi) * c[i];
  return out;
}

}  // namespace tmrsr
