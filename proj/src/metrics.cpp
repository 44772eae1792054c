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

#include "tmrsr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace tmrsr {
namespace {

constexpr int kWindow = 11;
constexpr Scalar kSigma = 1.5;
constexpr Scalar kK1 = 0.01;
constexpr Scalar kK2 = 0.03;

void require_same_shape(const Slice& a, const Slice& b) {
  if (a.h != b.h || a.w != b.w)
    throw DataError("metric: slice shapes differ");
}

std::array<Scalar, kWindow> gaussian_taps() {
  std::array<Scalar, kWindow> g{};
  Scalar sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const Scalar d = i - (kWindow - 1) / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (Scalar& v : g) v /= sum;
  return g;
}

/// Valid-mode separable Gaussian filtering of an h*w map.
std::vector<Scalar> filter_valid(const std::vector<Scalar>& src, int h, int w,
                                 const std::array<Scalar, kWindow>& g) {
  const int ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<Scalar> rows(static_cast<size_t>(h) * ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      Scalar acc = 0.0;
      for (int k = 0; k < kWindow; ++k)
        acc += g[k] * src[static_cast<size_t>(r) * w + c + k];
      rows[static_cast<size_t>(r) * ow + c] = acc;
    }
  std::vector<Scalar> out(static_cast<size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      Scalar acc = 0.0;
      for (int k = 0; k < kWindow; ++k)
        acc += g[k] * rows[static_cast<size_t>(r + k) * ow + c];
      out[static_cast<size_t>(r) * ow + c] = acc;
    }
  return out;
}

}  // namespace

Scalar psnr(const Slice& a, const Slice& b) {
  require_same_shape(a, b);
  Scalar mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const Scalar d = static_cast<Scalar>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<Scalar>(a.data.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

Scalar ssim(const Slice& a, const Slice& b) {
  require_same_shape(a, b);
  if (a.h < kWindow || a.w < kWindow)
    throw DataError("ssim: image smaller than the 11x11 window");
  const int h = a.h, w = a.w;
  const size_t n = a.data.size();
  std::vector<Scalar> x(n), y(n), xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    x[i] = static_cast<Scalar>(a.data[i]);
    y[i] = static_cast<Scalar>(b.data[i]);
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto g = gaussian_taps();
  const auto mx = filter_valid(x, h, w, g);
  const auto my = filter_valid(y, h, w, g);
  const auto mxx = filter_valid(xx, h, w, g);
  const auto myy = filter_valid(yy, h, w, g);
  const auto mxy = filter_valid(xy, h, w, g);
  const Scalar c1 = kK1 * kK1, c2 = kK2 * kK2;
  Scalar acc = 0.0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const Scalar vx = mxx[i] - mx[i] * mx[i];
    const Scalar vy = myy[i] - my[i] * my[i];
    const Scalar cxy = mxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<Scalar>(mx.size());
}

Scalar dice(const std::vector<uint8_t>& x, const std::vector<uint8_t>& y) {
  if (x.size() != y.size()) throw DataError("dice: mask sizes differ");
  size_t nx = 0, ny = 0, both = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const bool a = x[i] != 0, b = y[i] != 0;
    nx += a;
    ny += b;
    both += a && b;
  }
  if (nx + ny == 0) return 1.0;  // vacuous agreement of empty masks
  return 2.0 * static_cast<Scalar>(both) / static_cast<Scalar>(nx + ny);
}

std::array<std::vector<uint8_t>, 3> classify_tissues(const Volume& v,
                                                     Scalar csf, Scalar grey,
                                                     Scalar white) {
  std::array<std::vector<uint8_t>, 3> masks;
  for (auto& m : masks) m.assign(v.data.size(), 0);
  const Scalar centers[3] = {csf, grey, white};
  const Scalar background_cutoff = 0.5 * csf;
  for (size_t i = 0; i < v.data.size(); ++i) {
    const Scalar val = v.data[i];
    if (val < background_cutoff) continue;
    int best = 0;
    Scalar best_d = std::abs(val - centers[0]);
    for (int c = 1; c < 3; ++c) {
      const Scalar d = std::abs(val - centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    masks[best][i] = 1;
  }
  return masks;
}

namespace {

template <typename Fn>
Scalar mean_over_slices(const Volume& a, const Volume& b, Plane plane, Fn fn) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
    throw DataError("metric: volume shapes differ");
  const int n = slice_count(a, plane);
  Scalar acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += fn(get_slice(a, plane, i), get_slice(b, plane, i));
  return acc / static_cast<Scalar>(n);
}

}  // namespace

Scalar volume_psnr(const Volume& a, const Volume& b, Plane plane) {
  return mean_over_slices(a, b, plane,
                          [](const Slice& x, const Slice& y) { return psnr(x, y); });
}

Scalar volume_ssim(const Volume& a, const Volume& b, Plane plane) {
  return mean_over_slices(a, b, plane,
                          [](const Slice& x, const Slice& y) { return ssim(x, y); });
}

}  // namespace tmrsr
