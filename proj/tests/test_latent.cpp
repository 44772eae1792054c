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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "tmrsr/latent.hpp"

using namespace tmrsr;
using namespace tmrsr::testing;

namespace {

CentroidBank make_bank(int n, int dim, std::vector<Scalar> centers) {
  CentroidBank b;
  b.n_clusters = n;
  b.latent_dim = dim;
  b.centers = std::move(centers);
  return b;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/tmrsr_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("latent sampling is seeded and standard normal") {
  Rng r1(42), r2(42), r3(43);
  const auto a = sample_latent(r1, 16);
  const auto b = sample_latent(r2, 16);
  const auto c = sample_latent(r3, 16);
  CHECK(a.size() == 16);
  CHECK(a == b);   // same seed, same vector
  CHECK(a != c);   // different seed, different vector

  // Law of large numbers: per-coordinate empirical mean near 0, and the
  // spread near 1.
  const int dim = 8, samples = 100000;
  Rng rng(7);
  std::vector<double> mean(dim, 0.0), sq(dim, 0.0);
  for (int i = 0; i < samples; ++i) {
    const auto z = sample_latent(rng, dim);
    for (int d = 0; d < dim; ++d) {
      mean[d] += z[d];
      sq[d] += z[d] * z[d];
    }
  }
  for (int d = 0; d < dim; ++d) {
    mean[d] /= samples;
    sq[d] /= samples;
    CHECK(std::abs(mean[d]) < 0.02);
    CHECK(sq[d] == doctest::Approx(1.0).epsilon(0.03));
  }
}

TEST_CASE("kmeans recovers separable clusters") {
  // Two well-separated 1-D pairs: the optimal 2-clustering is {0,1} | {10,11}
  // with centers 0.5 and 10.5 (verified by enumerating all 2-partitions).
  const std::vector<Scalar> pts = {0.0, 1.0, 10.0, 11.0};
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 99ULL}) {
    Rng rng(seed);
    const CentroidBank bank = kmeans(pts, 4, 1, 2, rng);
    std::vector<Scalar> got = bank.centers;
    std::sort(got.begin(), got.end());
    CHECK(got[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(10.5).epsilon(1e-12));
    CHECK(bank.sample_count == 4);
  }

  // One cluster degenerates to the sample mean.
  Rng rng(5);
  const CentroidBank one = kmeans(pts, 4, 1, 1, rng);
  CHECK(one.centers.size() == 1);
  CHECK(one.centers[0] == doctest::Approx(5.5).epsilon(1e-12));

  CHECK_THROWS_AS(kmeans(pts, 4, 1, 0, rng), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 4, 1, 5, rng), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 3, 1, 2, rng), ConfigError);  // bad buffer size
}

TEST_CASE("kmeans objective is monotonically non-increasing") {
  const int m = 200, dim = 3;
  const auto pts = test_values(static_cast<size_t>(m) * dim, 411, -2.0, 2.0);
  for (uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    Rng rng(seed);
    std::vector<Scalar> trace;
    const CentroidBank bank = kmeans(pts, m, dim, 4, rng, 100, 1e-6, &trace);
    REQUIRE(trace.size() >= 1);
    for (size_t i = 1; i < trace.size(); ++i)
      CHECK(trace[i] <= trace[i - 1] + 1e-12);
    for (Scalar c : bank.centers) CHECK(std::isfinite(c));
  }

  // Duplicated points collapse to zero objective without dividing by zero.
  std::vector<Scalar> dup(12, 3.25);
  Rng rng(3);
  std::vector<Scalar> trace;
  const CentroidBank bank = kmeans(dup, 6, 2, 2, rng, 100, 1e-6, &trace);
  CHECK(trace.back() == 0.0);
  for (Scalar c : bank.centers) CHECK(c == 3.25);
}

TEST_CASE("centroid bank round-trips through its file format") {
  // Values chosen to exercise f32 rounding: the reload must equal the f32
  // cast of what was written, bit for bit.
  CentroidBank bank = make_bank(2, 3, {0.1, -2.5, 1e-7, 3.14159, -0.0, 42.0});
  bank.sample_count = 60000;
  TempFile f("bank.tmcb");
  write_bank(f.path, bank);
  const CentroidBank back = read_bank(f.path);
  CHECK(back.n_clusters == 2);
  CHECK(back.latent_dim == 3);
  REQUIRE(back.centers.size() == 6);
  for (size_t i = 0; i < 6; ++i)
    CHECK(static_cast<float>(back.centers[i]) ==
          static_cast<float>(bank.centers[i]));

  // A second save of the reloaded bank is byte-identical.
  TempFile f2("bank2.tmcb");
  write_bank(f2.path, back);
  std::ifstream a(f.path, std::ios::binary), b(f2.path, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(sa.size() == 5 + 4 + 4 + 6 * 4);

  SUBCASE("corrupt files are rejected") {
    {
      std::ofstream out(f.path, std::ios::binary);
      out << "NOPE!";
    }
    CHECK_THROWS_AS(read_bank(f.path), DataError);

    // Header promising more centers than the payload holds.
    {
      std::ofstream out(f.path, std::ios::binary);
      out.write(sa.data(), static_cast<std::streamsize>(sa.size() - 4));
    }
    CHECK_THROWS_AS(read_bank(f.path), DataError);

    // Trailing garbage after the payload.
    {
      std::ofstream out(f.path, std::ios::binary);
      out.write(sa.data(), static_cast<std::streamsize>(sa.size()));
      out << "junk";
    }
    CHECK_THROWS_AS(read_bank(f.path), DataError);

    CHECK_THROWS_AS(read_bank("/tmp/tmrsr_no_such_bank.tmcb"), DataError);
  }
}

TEST_CASE("truncation blends toward the nearest center") {
  const CentroidBank bank = make_bank(2, 2, {0.0, 2.0, 5.0, 5.0});
  const std::vector<Scalar> f = {2.0, 0.0};

  // Endpoints of the blend.
  CHECK(truncate_latent(f, bank, 1.0) == f);
  CHECK(truncate_latent(f, bank, 0.0) == std::vector<Scalar>{0.0, 2.0});

  // Midpoint arithmetic: 0.5*(2,0) + 0.5*(0,2) = (1,1).
  const auto mid = truncate_latent(f, bank, 0.5);
  CHECK(mid[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mid[1] == doctest::Approx(1.0).epsilon(1e-15));

  // Distance to the original latent shrinks as phi falls (linearity).
  Scalar prev = -1.0;
  for (Scalar phi : {1.0, 0.75, 0.5, 0.25, 0.0}) {
    const auto t = truncate_latent(f, bank, phi);
    Scalar d = 0.0;
    for (size_t i = 0; i < f.size(); ++i) d += (t[i] - f[i]) * (t[i] - f[i]);
    d = std::sqrt(d);
    if (prev >= 0.0) CHECK(d >= prev - 1e-12);
    prev = d;
  }

  // Equidistant latent snaps to the lowest-index center.
  const CentroidBank tie = make_bank(2, 1, {-1.0, 1.0});
  CHECK(truncate_latent({0.0}, tie, 0.0) == std::vector<Scalar>{-1.0});

  CHECK_THROWS_AS(truncate_latent({1.0}, bank, 0.5), ConfigError);
  CHECK_THROWS_AS(truncate_latent(f, CentroidBank{}, 0.5), ConfigError);
}
