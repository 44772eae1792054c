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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "tmrsr/kernels.hpp"

using namespace tmrsr;
using tmrsr::testing::test_values;

namespace {

// Mathematical reference GEMM (dot-product form). The production kernels use
// a different accumulation order, so comparisons are tolerance-based; the
// bit-exactness contract is between the parallel and serial builds.
void naive_gemm_nn(int m, int n, int k, Scalar alpha, const Scalar* a,
                   const Scalar* b, Scalar beta, Scalar* c) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      Scalar acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = alpha * acc + beta * c[i * n + j];
    }
}

}  // namespace

TEST_CASE("gemm variants match a naive reference and agree across builds") {
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 5, 7}, {16, 16, 16},
                         {33, 17, 64}, {64, 48, 80}}) {
    auto a = test_values(static_cast<size_t>(m) * k, 1);
    auto b = test_values(static_cast<size_t>(k) * n, 2);
    auto c0 = test_values(static_cast<size_t>(m) * n, 3);

    // nn against the order-matched reference.
    auto c_par = c0, c_ser = c0, c_ref = c0;
    kern::gemm_nn(m, n, k, 1.25, a.data(), b.data(), 0.5, c_par.data());
    kern::serial::gemm_nn(m, n, k, 1.25, a.data(), b.data(), 0.5,
                          c_ser.data());
    naive_gemm_nn(m, n, k, 1.25, a.data(), b.data(), 0.5, c_ref.data());
    CHECK(c_par == c_ser);
    for (size_t i = 0; i < c_par.size(); ++i)
      CHECK(c_par[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));

    // nt: B stored [n, k]; materialize B^T and compare against nn.
    auto bt = test_values(static_cast<size_t>(n) * k, 4);
    std::vector<Scalar> b_dense(static_cast<size_t>(k) * n);
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) b_dense[p * n + j] = bt[j * k + p];
    c_par = c0;
    c_ser = c0;
    c_ref = c0;
    kern::gemm_nt(m, n, k, 1.0, a.data(), bt.data(), 1.0, c_par.data());
    kern::serial::gemm_nt(m, n, k, 1.0, a.data(), bt.data(), 1.0,
                          c_ser.data());
    naive_gemm_nn(m, n, k, 1.0, a.data(), b_dense.data(), 1.0, c_ref.data());
    CHECK(c_par == c_ser);
    for (size_t i = 0; i < c_par.size(); ++i)
      CHECK(c_par[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));

    // tn: A stored [k, m]; materialize A^T and compare against nn.
    auto at = test_values(static_cast<size_t>(k) * m, 5);
    std::vector<Scalar> a_dense(static_cast<size_t>(m) * k);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) a_dense[i * k + p] = at[p * m + i];
    c_par = c0;
    c_ser = c0;
    c_ref = c0;
    kern::gemm_tn(m, n, k, 2.0, at.data(), b.data(), 0.0, c_par.data());
    kern::serial::gemm_tn(m, n, k, 2.0, at.data(), b.data(), 0.0,
                          c_ser.data());
    naive_gemm_nn(m, n, k, 2.0, a_dense.data(), b.data(), 0.0, c_ref.data());
    CHECK(c_par == c_ser);
    for (size_t i = 0; i < c_par.size(); ++i)
      CHECK(c_par[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("im2col matches direct patch extraction and the serial build") {
  for (auto [c, h, w, kh, kw, stride, pad] :
       {std::tuple{1, 5, 5, 3, 3, 1, 1}, {3, 8, 6, 3, 3, 2, 1},
        {2, 7, 7, 1, 1, 1, 0}, {4, 9, 5, 5, 3, 2, 2}}) {
    auto img = test_values(static_cast<size_t>(c) * h * w, 7);
    const int oh = kern::conv_out_size(h, kh, stride, pad);
    const int ow = kern::conv_out_size(w, kw, stride, pad);
    const size_t rows = static_cast<size_t>(oh) * ow;
    const size_t ckk = static_cast<size_t>(c) * kh * kw;
    std::vector<Scalar> cols_par(rows * ckk), cols_ser(rows * ckk),
        cols_ref(rows * ckk);
    kern::im2col(img.data(), c, h, w, kh, kw, stride, pad, cols_par.data());
    kern::serial::im2col(img.data(), c, h, w, kh, kw, stride, pad,
                         cols_ser.data());
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int y = oy * stride - pad + i;
              const int x = ox * stride - pad + j;
              cols_ref[(static_cast<size_t>(oy) * ow + ox) * ckk +
                       (static_cast<size_t>(ch) * kh + i) * kw + j] =
                  (y >= 0 && y < h && x >= 0 && x < w)
                      ? img[(static_cast<size_t>(ch) * h + y) * w + x]
                      : 0.0;
            }
    CHECK(cols_par == cols_ser);
    CHECK(cols_par == cols_ref);
  }
}

TEST_CASE("col2im is the exact adjoint of im2col") {
  for (auto [c, h, w, kh, kw, stride, pad] :
       {std::tuple{2, 6, 6, 3, 3, 1, 1}, {3, 8, 5, 3, 3, 2, 1},
        {1, 4, 4, 2, 2, 2, 0}}) {
    const int oh = kern::conv_out_size(h, kh, stride, pad);
    const int ow = kern::conv_out_size(w, kw, stride, pad);
    const size_t rows = static_cast<size_t>(oh) * ow;
    const size_t ckk = static_cast<size_t>(c) * kh * kw;
    auto x = test_values(static_cast<size_t>(c) * h * w, 11);
    auto cmat = test_values(rows * ckk, 12);

    std::vector<Scalar> cols(rows * ckk);
    kern::im2col(x.data(), c, h, w, kh, kw, stride, pad, cols.data());
    Scalar lhs = 0.0;
    for (size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * cmat[i];

    std::vector<Scalar> img_par(static_cast<size_t>(c) * h * w, 0.0),
        img_ser(img_par);
    kern::col2im(cmat.data(), c, h, w, kh, kw, stride, pad, img_par.data());
    kern::serial::col2im(cmat.data(), c, h, w, kh, kw, stride, pad,
                         img_ser.data());
    CHECK(img_par == img_ser);
    Scalar rhs = 0.0;
    for (size_t i = 0; i < img_par.size(); ++i) rhs += img_par[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows: normalized, shift-invariant, builds agree") {
  const int m = 17, n = 23;
  auto x = test_values(static_cast<size_t>(m) * n, 21, -30.0, 30.0);
  std::vector<Scalar> out_par(x.size()), out_ser(x.size());
  kern::softmax_rows(x.data(), m, n, out_par.data());
  kern::serial::softmax_rows(x.data(), m, n, out_ser.data());
  CHECK(out_par == out_ser);
  for (int r = 0; r < m; ++r) {
    Scalar sum = 0.0;
    Scalar mx = x[r * n];
    for (int j = 0; j < n; ++j) mx = std::max(mx, x[r * n + j]);
    for (int j = 0; j < n; ++j) sum += out_par[r * n + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // Direct reference with the same max-shift.
    Scalar denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(x[r * n + j] - mx);
    for (int j = 0; j < n; ++j)
      CHECK(out_par[r * n + j] ==
            doctest::Approx(std::exp(x[r * n + j] - mx) / denom)
                .epsilon(1e-12));
  }
  // Shifting a row by a constant leaves softmax unchanged (up to fp noise).
  std::vector<Scalar> shifted(x);
  for (int j = 0; j < n; ++j) shifted[j] += 123.0;
  std::vector<Scalar> out_shift(x.size());
  kern::softmax_rows(shifted.data(), m, n, out_shift.data());
  for (int j = 0; j < n; ++j)
    CHECK(out_shift[j] == doctest::Approx(out_par[j]).epsilon(1e-12));
}
