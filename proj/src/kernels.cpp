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

#include "tmrsr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tmrsr::kern {

// The row loop carries no cross-row state, so the parallel builds simply
// split it across threads. Accumulation order inside a row matches the
// serial build exactly.

namespace {

inline void gemm_nn_row(int n, int k, Scalar alpha, const Scalar* __restrict a,
                        const Scalar* __restrict b, Scalar beta,
                        Scalar* __restrict c) {
  if (beta == 0.0) {
    std::memset(c, 0, sizeof(Scalar) * static_cast<size_t>(n));
  } else if (beta != 1.0) {
    for (int j = 0; j < n; ++j) c[j] *= beta;
  }
  for (int p = 0; p < k; ++p) {
    const Scalar av = alpha * a[p];
    const Scalar* __restrict bp = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += av * bp[j];
  }
}

inline void gemm_nt_row(int n, int k, Scalar alpha, const Scalar* __restrict a,
                        const Scalar* __restrict b, Scalar beta,
                        Scalar* __restrict c) {
  for (int j = 0; j < n; ++j) {
    const Scalar* __restrict bj = b + static_cast<size_t>(j) * k;
    Scalar acc = 0.0;
    for (int p = 0; p < k; ++p) acc += a[p] * bj[p];
    c[j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * c[j]);
  }
}

inline void gemm_tn_row(int i, int m, int n, int k, Scalar alpha,
                        const Scalar* __restrict a, const Scalar* __restrict b,
                        Scalar beta, Scalar* __restrict c) {
  // Row i of C = sum_p A[p, i] * B[p, :].
  if (beta == 0.0) {
    std::memset(c, 0, sizeof(Scalar) * static_cast<size_t>(n));
  } else if (beta != 1.0) {
    for (int j = 0; j < n; ++j) c[j] *= beta;
  }
  for (int p = 0; p < k; ++p) {
    const Scalar av = alpha * a[static_cast<size_t>(p) * m + i];
    const Scalar* __restrict bp = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += av * bp[j];
  }
}

inline void softmax_row(const Scalar* __restrict in, int n,
                        Scalar* __restrict out) {
  Scalar mx = in[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  Scalar sum = 0.0;
  for (int j = 0; j < n; ++j) {
    const Scalar e = std::exp(in[j] - mx);
    out[j] = e;
    sum += e;
  }
  const Scalar inv = 1.0 / sum;
  for (int j = 0; j < n; ++j) out[j] *= inv;
}

}  // namespace

void gemm_nn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    gemm_nn_row(n, k, alpha, a + static_cast<size_t>(i) * k, b, beta,
                c + static_cast<size_t>(i) * n);
  }
}

void gemm_nt(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    gemm_nt_row(n, k, alpha, a + static_cast<size_t>(i) * k, b, beta,
                c + static_cast<size_t>(i) * n);
  }
}

void gemm_tn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    gemm_tn_row(i, m, n, k, alpha, a, b, beta, c + static_cast<size_t>(i) * n);
  }
}

void im2col(const Scalar* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, Scalar* cols) {
  const int oh = conv_out_size(h, kh, stride, pad);
  const int ow = conv_out_size(w, kw, stride, pad);
  const int ckk = c * kh * kw;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      Scalar* row = cols + (static_cast<size_t>(oy) * ow + ox) * ckk;
      for (int ch = 0; ch < c; ++ch) {
        const Scalar* plane = img + static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < kh; ++i) {
          const int y = oy * stride - pad + i;
          for (int j = 0; j < kw; ++j) {
            const int x = ox * stride - pad + j;
            *row++ = (y >= 0 && y < h && x >= 0 && x < w)
                         ? plane[static_cast<size_t>(y) * w + x]
                         : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Scalar* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, Scalar* img) {
  const int oh = conv_out_size(h, kh, stride, pad);
  const int ow = conv_out_size(w, kw, stride, pad);
  const int ckk = c * kh * kw;
  // Parallel over channels: every image cell belongs to one channel, so
  // each thread owns its accumulation targets.
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    Scalar* plane = img + static_cast<size_t>(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Scalar* row =
            cols + (static_cast<size_t>(oy) * ow + ox) * ckk +
            static_cast<size_t>(ch) * kh * kw;
        for (int i = 0; i < kh; ++i) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int x = ox * stride - pad + j;
            if (x < 0 || x >= w) continue;
            plane[static_cast<size_t>(y) * w + x] += row[i * kw + j];
          }
        }
      }
    }
  }
}

void softmax_rows(const Scalar* in, int m, int n, Scalar* out) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    softmax_row(in + static_cast<size_t>(i) * n, n,
                out + static_cast<size_t>(i) * n);
  }
}

namespace serial {

void gemm_nn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
  for (int i = 0; i < m; ++i) {
    gemm_nn_row(n, k, alpha, a + static_cast<size_t>(i) * k, b, beta,
                c + static_cast<size_t>(i) * n);
  }
}

void gemm_nt(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
  for (int i = 0; i < m; ++i) {
    gemm_nt_row(n, k, alpha, a + static_cast<size_t>(i) * k, b, beta,
                c + static_cast<size_t>(i) * n);
  }
}

void gemm_tn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c) {
  for (int i = 0; i < m; ++i) {
    gemm_tn_row(i, m, n, k, alpha, a, b, beta, c + static_cast<size_t>(i) * n);
  }
}

void im2col(const Scalar* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, Scalar* cols) {
  const int oh = conv_out_size(h, kh, stride, pad);
  const int ow = conv_out_size(w, kw, stride, pad);
  const int ckk = c * kh * kw;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      Scalar* row = cols + (static_cast<size_t>(oy) * ow + ox) * ckk;
      for (int ch = 0; ch < c; ++ch) {
        const Scalar* plane = img + static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < kh; ++i) {
          const int y = oy * stride - pad + i;
          for (int j = 0; j < kw; ++j) {
            const int x = ox * stride - pad + j;
            *row++ = (y >= 0 && y < h && x >= 0 && x < w)
                         ? plane[static_cast<size_t>(y) * w + x]
                         : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Scalar* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, Scalar* img) {
  const int oh = conv_out_size(h, kh, stride, pad);
  const int ow = conv_out_size(w, kw, stride, pad);
  const int ckk = c * kh * kw;
  for (int ch = 0; ch < c; ++ch) {
    Scalar* plane = img + static_cast<size_t>(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Scalar* row =
            cols + (static_cast<size_t>(oy) * ow + ox) * ckk +
            static_cast<size_t>(ch) * kh * kw;
        for (int i = 0; i < kh; ++i) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= h) continue;
          for (int j = 0; j < kw; ++j) {
            const int x = ox * stride - pad + j;
            if (x < 0 || x >= w) continue;
            plane[static_cast<size_t>(y) * w + x] += row[i * kw + j];
          }
        }
      }
    }
  }
}

void softmax_rows(const Scalar* in, int m, int n, Scalar* out) {
  for (int i = 0; i < m; ++i) {
    softmax_row(in + static_cast<size_t>(i) * n, n,
                out + static_cast<size_t>(i) * n);
  }
}

}  // namespace serial

}  // namespace tmrsr::kern
