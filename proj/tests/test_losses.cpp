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
#include "tmrsr/losses.hpp"
#include "tmrsr/metrics.hpp"

using namespace tmrsr;
using namespace tmrsr::testing;

namespace {

Slice make_slice(int h, int w, const std::vector<Scalar>& vals) {
  Slice s;
  s.h = h;
  s.w = w;
  s.data.resize(vals.size());
  for (size_t i = 0; i < vals.size(); ++i)
    s.data[i] = static_cast<float>(vals[i]);
  return s;
}

Slice random_slice(int h, int w, unsigned seed) {
  return make_slice(h, w, test_values(static_cast<size_t>(h) * w, seed, 0.0, 1.0));
}

// Direct-summation SSIM written independently of the production code: one
// explicit 121-term weighted sum per window position, no separable pass.
double ssim_reference(const Slice& a, const Slice& b) {
  constexpr int kw = 11;
  double win[kw][kw];
  double wsum = 0.0;
  for (int i = 0; i < kw; ++i)
    for (int j = 0; j < kw; ++j) {
      const double dy = i - 5, dx = j - 5;
      win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (auto& row : win)
    for (double& v : row) v /= wsum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  int count = 0;
  for (int y = 0; y + kw <= a.h; ++y)
    for (int x = 0; x + kw <= a.w; ++x) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int i = 0; i < kw; ++i)
        for (int j = 0; j < kw; ++j) {
          const double pa = a.at(y + i, x + j), pb = b.at(y + i, x + j);
          mx += win[i][j] * pa;
          my += win[i][j] * pb;
          mxx += win[i][j] * pa * pa;
          myy += win[i][j] * pb * pb;
          mxy += win[i][j] * pa * pb;
        }
      const double vx = mxx - mx * mx, vy = myy - my * my;
      const double cov = mxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST_CASE("psnr closed forms and guards") {
  // Uniform squared error 0.01 -> exactly 20 dB at data range 1.
  Slice a = make_slice(8, 8, std::vector<Scalar>(64, 0.5));
  Slice b = make_slice(8, 8, std::vector<Scalar>(64, 0.6));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(psnr(a, a) == 100.0);

  // The cap also bounds near-zero MSE.
  Slice c = a;
  c.data[0] += 1e-6f;
  CHECK(psnr(a, c) <= 100.0);
  CHECK(psnr(a, c) > 99.0);

  Slice wrong = make_slice(8, 4, std::vector<Scalar>(32, 0.0));
  CHECK_THROWS_AS(psnr(a, wrong), DataError);
}

TEST_CASE("ssim matches a direct windowed reference") {
  // Unrelated noise images.
  Slice a = random_slice(32, 32, 311);
  Slice b = random_slice(32, 32, 312);
  CHECK(ssim(a, b) == doctest::Approx(ssim_reference(a, b)).epsilon(1e-8));

  // Correlated pair (scaled + shifted + mild noise) on a non-square slice.
  Slice c = random_slice(24, 40, 313);
  Slice d = c;
  const auto noise = test_values(d.data.size(), 314, -0.05, 0.05);
  for (size_t i = 0; i < d.data.size(); ++i)
    d.data[i] = static_cast<float>(0.8 * d.data[i] + 0.1 + noise[i]);
  const double ref = ssim_reference(c, d);
  CHECK(ssim(c, d) == doctest::Approx(ref).epsilon(1e-8));
  CHECK(ssim(d, c) == doctest::Approx(ref).epsilon(1e-8));  // symmetry
  CHECK(ssim(c, d) > ssim(a, b));  // correlated beats unrelated
}

TEST_CASE("ssim closed forms and guards") {
  // Identical images score exactly 1.
  Slice a = random_slice(16, 16, 321);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // Constant images: variances and covariance vanish, leaving the luminance
  // term (2*mx*my + c1) / (mx^2 + my^2 + c1).
  Slice u = make_slice(11, 11, std::vector<Scalar>(121, 0.4));
  Slice v = make_slice(11, 11, std::vector<Scalar>(121, 0.6));
  const double c1 = 1e-4;
  const double expect = (2 * 0.4 * 0.6 + c1) / (0.4 * 0.4 + 0.6 * 0.6 + c1);
  CHECK(ssim(u, v) == doctest::Approx(expect).epsilon(1e-6));

  Slice small = make_slice(10, 32, std::vector<Scalar>(320, 0.0));
  CHECK_THROWS_AS(ssim(small, small), DataError);
  Slice narrow = make_slice(32, 10, std::vector<Scalar>(320, 0.0));
  CHECK_THROWS_AS(ssim(narrow, narrow), DataError);
  Slice wrong = make_slice(16, 12, std::vector<Scalar>(192, 0.0));
  CHECK_THROWS_AS(ssim(a, wrong), DataError);
}

TEST_CASE("dice overlap hand values") {
  using Mask = std::vector<uint8_t>;
  CHECK(dice(Mask{1, 1, 0, 0}, Mask{1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK(dice(Mask{1, 1, 0, 0}, Mask{0, 0, 1, 1}) == 0.0);
  CHECK(dice(Mask{1, 0, 1, 0}, Mask{1, 0, 1, 0}) == 1.0);
  CHECK(dice(Mask{0, 0, 0}, Mask{0, 0, 0}) == 1.0);  // vacuous agreement
  CHECK(dice(Mask{0, 0}, Mask{1, 0}) == 0.0);
  // Any nonzero byte is foreground.
  CHECK(dice(Mask{2, 0}, Mask{255, 0}) == 1.0);
  CHECK_THROWS_AS(dice(Mask{1, 0}, Mask{1, 0, 0}), DataError);
}

TEST_CASE("tissue classification assigns nearest centers") {
  Volume v;
  v.nx = 7;
  v.ny = 1;
  v.nz = 1;
  // background | background | csf | csf | grey | grey | white
  v.data = {0.0f, 0.03f, 0.05f, 0.2f, 0.3f, 0.5f, 0.9f};
  const auto masks = classify_tissues(v);  // centers 0.08 / 0.45 / 0.72
  const std::vector<uint8_t> want_csf = {0, 0, 1, 1, 0, 0, 0};
  const std::vector<uint8_t> want_grey = {0, 0, 0, 0, 1, 1, 0};
  const std::vector<uint8_t> want_white = {0, 0, 0, 0, 0, 0, 1};
  CHECK(masks[0] == want_csf);
  CHECK(masks[1] == want_grey);
  CHECK(masks[2] == want_white);

  // Masks partition the non-background voxels.
  for (size_t i = 0; i < v.data.size(); ++i) {
    const int hits = masks[0][i] + masks[1][i] + masks[2][i];
    CHECK(hits == (v.data[i] < 0.04f ? 0 : 1));
  }

  // Custom centers shift the boundaries.
  const auto shifted = classify_tissues(v, 0.3, 0.6, 0.9);
  CHECK(shifted[0][4] == 1);  // 0.3 now sits exactly on the csf center
  CHECK(shifted[2][6] == 1);
}

TEST_CASE("volume metrics average the per-slice values") {
  Volume a, b;
  a.nx = 16;
  a.ny = 14;
  a.nz = 12;
  const size_t n = a.numel();
  auto av = test_values(n, 331, 0.0, 1.0);
  auto bv = test_values(n, 332, 0.0, 1.0);
  a.data.assign(av.begin(), av.end());
  b = a;
  for (size_t i = 0; i < n; ++i)
    b.data[i] = static_cast<float>(0.9 * a.data[i] + 0.05 * bv[i]);

  for (Plane p : {Plane::kXY, Plane::kXZ, Plane::kYZ}) {
    double psum = 0.0, ssum = 0.0;
    const int count = slice_count(a, p);
    for (int i = 0; i < count; ++i) {
      psum += psnr(get_slice(a, p, i), get_slice(b, p, i));
      ssum += ssim(get_slice(a, p, i), get_slice(b, p, i));
    }
    CHECK(volume_psnr(a, b, p) == doctest::Approx(psum / count).epsilon(1e-12));
    CHECK(volume_ssim(a, b, p) == doctest::Approx(ssum / count).epsilon(1e-12));
  }

  Volume c = a;
  c.nz = 6;
  c.data.resize(c.numel());
  CHECK_THROWS_AS(volume_psnr(a, c, Plane::kXY), DataError);
}

TEST_CASE("gram matrix hand example and structure") {
  // Two channels over two pixels: F = [[1,1],[0,0]] -> F F^T = [[2,0],[0,0]].
  Tensor x = Tensor::from({1, 2, 2, 1}, {1.0, 1.0, 0.0, 0.0});
  Tensor g_raw = ops::gram(x, false);
  CHECK(g_raw.shape() == std::vector<int>{1, 2, 2});
  CHECK(g_raw.values() == std::vector<Scalar>{2.0, 0.0, 0.0, 0.0});
  Tensor g_norm = ops::gram(x, true);  // divided by h*w = 2
  CHECK(g_norm.values() == std::vector<Scalar>{1.0, 0.0, 0.0, 0.0});

  // Random Gram matrices are symmetric positive semi-definite.
  Tensor r = leaf_tensor({2, 3, 4, 5}, 341);
  Tensor g = ops::gram(r, true);
  const auto& gv = g.values();
  const auto z = test_values(3, 342);
  for (int nidx = 0; nidx < 2; ++nidx) {
    const size_t base = static_cast<size_t>(nidx) * 9;
    double quad = 0.0;
    for (int i = 0; i < 3; ++i) {
      CHECK(gv[base + 3 * i + i] >= 0.0);
      for (int j = 0; j < 3; ++j) {
        CHECK(gv[base + 3 * i + j] ==
              doctest::Approx(gv[base + 3 * j + i]).epsilon(1e-12));
        quad += z[i] * z[j] * gv[base + 3 * i + j];
      }
    }
    CHECK(quad >= -1e-12);
  }
}

TEST_CASE("backbone taps have the documented shapes and are deterministic") {
  PerceptualBackbone bb;
  Tensor x = leaf_tensor({1, 1, 64, 64}, 351, 0.0, 1.0);
  const auto taps = bb.taps(x);
  REQUIRE(taps.size() == 4);
  CHECK(taps[0].shape() == std::vector<int>{1, 8, 64, 64});
  CHECK(taps[1].shape() == std::vector<int>{1, 16, 32, 32});
  CHECK(taps[2].shape() == std::vector<int>{1, 32, 16, 16});
  CHECK(taps[3].shape() == std::vector<int>{1, 64, 8, 8});

  // Ten conv layers, each with weight and bias.
  CHECK(bb.names().size() == 20);

  // Same configuration -> bit-identical features; different seed -> not.
  PerceptualBackbone bb2;
  BackboneConfig other;
  other.seed = 7;
  PerceptualBackbone bb3(other);
  const auto taps2 = bb2.taps(x);
  const auto taps3 = bb3.taps(x);
  bool same = true, differs = false;
  for (int t = 0; t < 4; ++t) {
    same = same && taps[t].values() == taps2[t].values();
    differs = differs || taps[t].values() != taps3[t].values();
  }
  CHECK(same);
  CHECK(differs);

  // Replacing a layer's weights changes the features; wrong size throws.
  PerceptualBackbone bb4;
  bb4.set_weights("conv1.weight", std::vector<Scalar>(8 * 1 * 3 * 3, 0.0));
  CHECK(bb4.taps(x)[0].values() != taps[0].values());
  CHECK_THROWS_AS(bb4.set_weights("conv1.weight", {1.0}), ConfigError);
  CHECK_THROWS_AS(bb4.set_weights("no_such", {1.0}), ConfigError);
}

TEST_CASE("backbone stays frozen while passing gradients through") {
  PerceptualBackbone bb;
  Tensor x = leaf_tensor({1, 1, 16, 16}, 361, 0.0, 1.0);
  Tensor y = Tensor::from(x.shape(),
                          test_values(x.numel(), 362, 0.0, 1.0));
  Tensor loss = content_loss(x, y, bb);
  loss.backward();
  // Gradients reach the input...
  double l1 = 0.0;
  for (Scalar g : x.grad()) l1 += std::abs(g);
  CHECK(l1 > 0.0);
  // ...but the stack itself is untouched: a later pass reproduces the same
  // features bit for bit.
  x.zero_grad();
  CHECK(content_loss(x, y, bb).item() == loss.item());
}

TEST_CASE("losses vanish at equality and split consistently") {
  PerceptualBackbone bb;
  Tensor a = leaf_tensor({2, 1, 16, 16}, 371, 0.0, 1.0);
  Tensor b = Tensor::from(a.shape(), test_values(a.numel(), 372, 0.0, 1.0));

  CHECK(rec_loss(a, a).item() == 0.0);
  CHECK(content_loss(a, a, bb).item() == 0.0);
  CHECK(style_loss(a, a, bb).item() == 0.0);

  // Mean absolute error by hand.
  Tensor p = Tensor::from({1, 1, 1, 4}, {0.0, 1.0, 0.25, 0.5});
  Tensor q = Tensor::from({1, 1, 1, 4}, {0.5, 0.0, 0.25, 1.0});
  CHECK(rec_loss(p, q).item() == doctest::Approx(0.5).epsilon(1e-15));

  const Scalar rec = rec_loss(a, b).item();
  const Scalar cont = content_loss(a, b, bb).item();
  const Scalar style = style_loss(a, b, bb).item();
  CHECK(rec > 0.0);
  CHECK(cont > 0.0);
  CHECK(style > 0.0);

  LossWeights w;
  w.recon = 1.0;
  w.cont = 0.25;
  w.style = 0.125;
  const LossTerms t = total_loss(a, b, bb, w);
  CHECK(t.rec == doctest::Approx(rec).epsilon(1e-12));
  CHECK(t.cont == doctest::Approx(cont).epsilon(1e-12));
  CHECK(t.style == doctest::Approx(style).epsilon(1e-12));
  CHECK(t.total.item() ==
        doctest::Approx(1.0 * rec + 0.25 * cont + 0.125 * style).epsilon(1e-12));

  // Zero-weight terms are skipped, not just scaled away.
  LossWeights only_rec;
  only_rec.cont = 0.0;
  only_rec.style = 0.0;
  const LossTerms r = total_loss(a, b, bb, only_rec);
  CHECK(r.total.item() == doctest::Approx(rec).epsilon(1e-12));
  CHECK(r.cont == 0.0);
  CHECK(r.style == 0.0);

  // The combined tensor carries the graph.
  a.zero_grad();
  LossTerms live = total_loss(a, b, bb, w);
  live.total.backward();
  double l1 = 0.0;
  for (Scalar g : a.grad()) l1 += std::abs(g);
  CHECK(l1 > 0.0);
}

TEST_CASE("total loss gradients match finite differences") {
  BackboneConfig cfg;
  cfg.widths = {2, 2, 4, 4};  // thin stack keeps the sweep fast
  PerceptualBackbone bb(cfg);
  Tensor sr = leaf_tensor({1, 1, 8, 8}, 381, 0.1, 0.9);
  Tensor hr = Tensor::from(sr.shape(), test_values(sr.numel(), 382, 0.1, 0.9));
  LossWeights w;
  w.recon = 1.0;
  w.cont = 0.5;
  w.style = 0.5;
  check_gradients(
      "total_loss", {sr},
      [&]() { return total_loss(sr, hr, bb, w).total; }, 1e-5, 1e-3, 1e-8);
}
