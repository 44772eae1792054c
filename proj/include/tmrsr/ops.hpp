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

#include <memory>
#include <vector>

#include "tmrsr/tensor.hpp"

// Differentiable tensor operations. Feature maps travel in two layouts:
// NCHW [n, c, h, w] for convolution/resampling stages and token-major
// [rows, c] for transformer stages; `permute` (with precomputed index maps)
// moves between them. Backward passes accumulate into parent gradients and
// are written so that each gradient element is summed by a single thread in
// a fixed order, keeping results bit-stable for any thread count.

namespace tmrsr::ops {

using IndexMap = std::shared_ptr<const std::vector<int>>;

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor leaky_relu(const Tensor& a, Scalar slope);
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);

// --- reductions ------------------------------------------------------------
Tensor mean_all(const Tensor& a);
Tensor l1_loss(const Tensor& a, const Tensor& b);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// --- structure -------------------------------------------------------------
Tensor reshape(const Tensor& a, std::vector<int> shape);
// out[i] = in[out_to_in[i]]; both maps describe the same bijection.
Tensor permute(const Tensor& a, IndexMap out_to_in, IndexMap in_to_out,
               std::vector<int> out_shape);
// Row permutation of an [m, c] matrix (rows move as blocks).
Tensor permute_rows(const Tensor& a, IndexMap out_to_in, IndexMap in_to_out);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // NCHW
Tensor slice_channels(const Tensor& a, int c0, int c1);    // NCHW
Tensor slice_cols(const Tensor& a, int c0, int c1);        // [m, n]
Tensor broadcast_batch(const Tensor& a, int n);  // prepend batch dim

// --- dense / normalization --------------------------------------------------
// y[m, n] = x[m, k] * w[k, n] (+ bias). Pass an undefined Tensor for no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
// Row-wise layer norm over the last dim; affine params optional (undefined
// tensors disable them).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Scalar eps = 1e-5);
// y[m, c] = x[m, c] * gamma[m / rows_per_sample, c] + beta[...]. Used for
// latent-conditioned (style) modulation.
Tensor scale_shift_rows(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, int rows_per_sample);
Tensor softmax_lastdim(const Tensor& x);

// --- convolution / spatial --------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad);
// Adjoint of conv2d with the same (w, stride, pad): maps an output-shaped
// tensor back to an input-shaped one. Needed to express input-gradient
// computations (R1 penalty) as part of the graph.
Tensor conv2d_transpose(const Tensor& g, const Tensor& w, int stride, int pad,
                        int out_h, int out_w);
Tensor maxpool2x2(const Tensor& x);
// 2x bilinear upsample, half-pixel centers, edge clamp.
Tensor bilinear_up2(const Tensor& x);

// --- attention --------------------------------------------------------------
// q, k: [b, t, c] with c split into `heads`; logits [b, heads, t, t].
Tensor attn_logits(const Tensor& q, const Tensor& k, int heads, Scalar scale);
// p: [b, heads, t, t], v: [b, t, c] -> [b, t, c].
Tensor attn_apply(const Tensor& p, const Tensor& v, int heads);
// logits[b, h, i, j] += table[h, rel_index[i * t + j]].
Tensor add_rel_pos_bias(const Tensor& logits, const Tensor& table,
                        IndexMap rel_index);
// logits[b, h, i, j] += mask[b % n_windows, i, j]; mask carries no gradient.
Tensor add_window_mask(const Tensor& logits, const Tensor& mask);

// --- statistics -------------------------------------------------------------
// Per-sample Gram matrix of an NCHW map: [n, c, c]; optionally divided by h*w.
Tensor gram(const Tensor& x, bool normalize);

}  // namespace tmrsr::ops
