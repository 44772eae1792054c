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

#include "tmrsr/common.hpp"

// Hot inner loops shared by the tensor ops. Every kernel comes in two
// builds: the OpenMP-parallel default under tmrsr::kern, and a plain serial
// reference under tmrsr::kern::serial. The two must agree bit-for-bit:
// parallel loops are arranged so each output element is accumulated by a
// single thread in the same order as the serial code, which keeps results
// independent of the thread count. tests/test_kernels.cpp asserts the
// equivalence and bench/bench_kernels.cpp times both builds.

namespace tmrsr::kern {

// C[m x n] = alpha * A[m x k] * B[k x n] + beta * C, row-major.
void gemm_nn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);

// C[m x n] = alpha * A[m x k] * B^T (B is [n x k]), row-major.
void gemm_nt(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);

// C[m x n] = alpha * A^T (A is [k x m]) * B[k x n], row-major.
void gemm_tn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);

// Unfold one image [c, h, w] into patch rows [oh*ow, c*kh*kw] with zero
// padding `pad` and stride `stride`.
void im2col(const Scalar* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, Scalar* cols);

// Adjoint of im2col: accumulate patch rows back into the image buffer.
// `img` must be zero-initialized by the caller.
void col2im(const Scalar* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, Scalar* img);

// Row-wise softmax over an [m x n] matrix, in place allowed (out may be in).
void softmax_rows(const Scalar* in, int m, int n, Scalar* out);

namespace serial {
void gemm_nn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);
void gemm_nt(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);
void gemm_tn(int m, int n, int k, Scalar alpha, const Scalar* a,
             const Scalar* b, Scalar beta, Scalar* c);
void im2col(const Scalar* img, int c, int h, int w, int kh, int kw, int stride,
            int pad, Scalar* cols);
void col2im(const Scalar* cols, int c, int h, int w, int kh, int kw,
            int stride, int pad, Scalar* img);
void softmax_rows(const Scalar* in, int m, int n, Scalar* out);
}  // namespace serial

// Output spatial size of a convolution along one axis.
inline int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace tmrsr::kern
