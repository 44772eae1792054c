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

// Times the OpenMP compute kernels against their serial references and
// checks that the two produce bit-identical results on every shape run.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "tmrsr/kernels.hpp"

using tmrsr::Scalar;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<Scalar> random_values(size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> dist(-1.0, 1.0);
  std::vector<Scalar> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

bool report(const char* name, double flops, double serial_s, double parallel_s,
            bool equal) {
  std::printf("%-26s serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  %s",
              name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              equal ? "exact-match" : "MISMATCH");
  if (flops > 0) std::printf("  (%.2f GFLOP/s parallel)", flops / parallel_s / 1e9);
  std::printf("\n");
  return equal;
}

}  // namespace

int main() {
  bool all_equal = true;
  const int reps = 3;

  // Square matrix products around transformer-attention sizes.
  for (int n : {128, 256, 512}) {
    const auto a = random_values(static_cast<size_t>(n) * n, 1u);
    const auto b = random_values(static_cast<size_t>(n) * n, 2u);
    std::vector<Scalar> cs(static_cast<size_t>(n) * n);
    std::vector<Scalar> cp(static_cast<size_t>(n) * n);
    const double s = time_best_of(reps, [&] {
      tmrsr::kern::serial::gemm_nn(n, n, n, 1.0, a.data(), b.data(), 0.0,
                                   cs.data());
    });
    const double p = time_best_of(reps, [&] {
      tmrsr::kern::gemm_nn(n, n, n, 1.0, a.data(), b.data(), 0.0, cp.data());
    });
    char name[64];
    std::snprintf(name, sizeof(name), "gemm_nn %dx%dx%d", n, n, n);
    all_equal &= report(name, 2.0 * n * n * n, s, p, cs == cp);
  }

  // Transposed variants at one representative size.
  {
    const int n = 256;
    const auto a = random_values(static_cast<size_t>(n) * n, 3u);
    const auto b = random_values(static_cast<size_t>(n) * n, 4u);
    std::vector<Scalar> cs(static_cast<size_t>(n) * n);
    std::vector<Scalar> cp(static_cast<size_t>(n) * n);
    const double s_nt = time_best_of(reps, [&] {
      tmrsr::kern::serial::gemm_nt(n, n, n, 1.0, a.data(), b.data(), 0.0,
                                   cs.data());
    });
    const double p_nt = time_best_of(reps, [&] {
      tmrsr::kern::gemm_nt(n, n, n, 1.0, a.data(), b.data(), 0.0, cp.data());
    });
    all_equal &= report("gemm_nt 256^3", 2.0 * n * n * n, s_nt, p_nt, cs == cp);

    const double s_tn = time_best_of(reps, [&] {
      tmrsr::kern::serial::gemm_tn(n, n, n, 1.0, a.data(), b.data(), 0.0,
                                   cs.data());
    });
    const double p_tn = time_best_of(reps, [&] {
      tmrsr::kern::gemm_tn(n, n, n, 1.0, a.data(), b.data(), 0.0, cp.data());
    });
    all_equal &= report("gemm_tn 256^3", 2.0 * n * n * n, s_tn, p_tn, cs == cp);
  }

  // Convolution lowering at the shallow-extractor shape (3x3 over 64x64).
  {
    const int c = 32, h = 64, w = 64, kh = 3, kw = 3, stride = 1, pad = 1;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    const auto img = random_values(static_cast<size_t>(c) * h * w, 5u);
    const size_t cols_n = static_cast<size_t>(oh) * ow * c * kh * kw;
    std::vector<Scalar> cols_s(cols_n), cols_p(cols_n);
    const double s = time_best_of(reps, [&] {
      tmrsr::kern::serial::im2col(img.data(), c, h, w, kh, kw, stride, pad,
                                  cols_s.data());
    });
    const double p = time_best_of(reps, [&] {
      tmrsr::kern::im2col(img.data(), c, h, w, kh, kw, stride, pad,
                          cols_p.data());
    });
    all_equal &= report("im2col 32x64x64 k3", 0.0, s, p, cols_s == cols_p);

    std::vector<Scalar> img_s(img.size()), img_p(img.size());
    const double s2 = time_best_of(reps, [&] {
      std::fill(img_s.begin(), img_s.end(), 0.0);
      tmrsr::kern::serial::col2im(cols_s.data(), c, h, w, kh, kw, stride, pad,
                                  img_s.data());
    });
    const double p2 = time_best_of(reps, [&] {
      std::fill(img_p.begin(), img_p.end(), 0.0);
      tmrsr::kern::col2im(cols_p.data(), c, h, w, kh, kw, stride, pad,
                          img_p.data());
    });
    all_equal &= report("col2im 32x64x64 k3", 0.0, s2, p2, img_s == img_p);
  }

  if (!all_equal) {
    std::printf("FAIL: parallel kernels diverged from the serial reference\n");
    return 1;
  }
  std::printf("all kernels match the serial reference bit-for-bit\n");
  return 0;
}
