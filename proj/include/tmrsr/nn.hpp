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

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tmrsr/ops.hpp"
#include "tmrsr/rng.hpp"
#include "tmrsr/tensor.hpp"

// Reusable differentiable blocks: residual convolutions, windowed
// self-attention (plain and shifted), Swin transformer layers, residual Swin
// transformer blocks, patch merging, style-modulated transformer layers with
// split-head window/shifted-window attention, and channel-wise scale/shift
// feature fusion. Parameter names form the checkpoint contract and are listed
// with each block.
//
// Feature maps pass between blocks as NCHW tensors; transformer internals use
// token matrices [batch*height*width, channels] with precomputed index maps.
// Index-map caches are keyed by batch size and guarded by a mutex so
// read-only forward passes may run concurrently; blocks remain movable
// because cache state lives behind shared pointers.

namespace tmrsr {

/// Ordered name -> leaf-tensor registry. Iteration follows registration
/// order, which makes optimizer state and checkpoints reproducible.
class ParamStore {
 public:
  /// Registers a fresh zero leaf (requires_grad=true). Name must be unique.
  Tensor create(const std::string& name, const std::vector<int>& shape);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t total_elements() const;
  void zero_all_grads();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> params_;
};

// Initialization helpers (fill an existing leaf in place).
void init_normal(Tensor t, Rng& rng, Scalar stddev);
/// Fills with N(0, (gain/sqrt(fan_in))^2); gain 0 zero-fills without
/// consuming random numbers.
void init_fan_in(Tensor t, Rng& rng, int fan_in, Scalar gain = 1.0);
void init_constant(Tensor t, Scalar v);

// --- layout maps -------------------------------------------------------------

using IndexMap = ops::IndexMap;

struct IndexMapPair {
  IndexMap fwd;  // out index -> in index
  IndexMap inv;  // in index -> out index
};

/// NCHW <-> token-matrix [n*h*w, c] element maps. fwd indexes tokens from
/// nchw: permute(x, fwd, inv, {n*h*w, c}) tokenizes, permute(t, inv, fwd,
/// {n, c, h, w}) restores.
IndexMapPair build_token_maps(int n, int c, int h, int w);

/// Row maps between raster token order and window-grouped token order under a
/// cyclic shift: window row (sample, wy, wx, ty, tx) reads raster pixel
/// ((wy*ws + ty + shift) mod h, (wx*ws + tx + shift) mod w).
IndexMapPair build_window_row_maps(int n, int h, int w, int ws, int shift);

/// Row map that groups each 2x2 neighborhood into four consecutive rows
/// (order: top-left, top-right, bottom-left, bottom-right) for patch merging.
IndexMapPair build_merge_row_maps(int n, int h, int w);

/// Relative-position index: t*t entries into a (2*ws-1)^2 bias table.
IndexMap build_rel_index(int ws);

/// Attention mask for shifted windows: [n_windows, t, t] with 0 where both
/// tokens come from the same contiguous image region and -1e9 where the
/// cyclic shift wrapped them together from opposite edges.
Tensor build_shift_mask(int h, int w, int ws, int shift);

/// Effective window for a map edge (windows never exceed the edge).
inline int effective_window(int edge, int ws) { return ws < edge ? ws : edge; }
/// Shifted-window offset: half a window, or 0 when one window covers the map.
inline int shift_for(int edge, int ws_eff) {
  return ws_eff < edge ? ws_eff / 2 : 0;
}

/// Shared, lazily filled cache of token maps keyed by batch size.
class TokenMapCache {
 public:
  TokenMapCache() = default;
  TokenMapCache(int c, int h, int w);
  const IndexMapPair& maps(int n) const;
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }

 private:
  struct State {
    std::mutex mu;
    std::map<int, IndexMapPair> maps;
  };
  std::shared_ptr<State> state_;
  int c_ = 0, h_ = 0, w_ = 0;
};

// --- simple layers -----------------------------------------------------------

/// y = x W + b. Params: <prefix>.weight [in,out], <prefix>.bias [out].
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(ParamStore& store, const std::string& prefix, int in, int out,
              Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const { return ops::linear(x, w_, b_); }
  Tensor weight() const { return w_; }
  Tensor bias() const { return b_; }

 private:
  Tensor w_, b_;
};

/// Params: <prefix>.weight [oc,ic,kh,kw], <prefix>.bias [oc].
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& prefix, int ic, int oc,
              int k, int stride, int pad, Rng& rng, Scalar gain = 1.0);
  Tensor forward(const Tensor& x) const {
    return ops::conv2d(x, w_, b_, stride_, pad_);
  }
  Tensor weight() const { return w_; }
  Tensor bias() const { return b_; }

 private:
  Tensor w_, b_;
  int stride_ = 1, pad_ = 0;
};

/// Affine layer norm over the channel (last) dim.
/// Params: <prefix>.gamma [c], <prefix>.beta [c].
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& store, const std::string& prefix, int c);
  Tensor forward(const Tensor& x) const {
    return ops::layer_norm(x, gamma_, beta_);
  }

 private:
  Tensor gamma_, beta_;
};

/// Two-layer GELU MLP with expansion ratio 4.
/// Params: <prefix>.fc1.*, <prefix>.fc2.*.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, int c, Rng& rng,
      int ratio = 4);
  Tensor forward(const Tensor& x) const {
    return fc2_.forward(ops::gelu(fc1_.forward(x)));
  }

 private:
  LinearLayer fc1_, fc2_;
};

/// conv3x3 -> LeakyReLU(0.2) -> conv3x3, plus identity shortcut.
/// Params: <prefix>.conv1.*, <prefix>.conv2.*.
class ResidualConvBlock {
 public:
  ResidualConvBlock() = default;
  ResidualConvBlock(ParamStore& store, const std::string& prefix, int c,
                    Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv2dLayer conv1_, conv2_;
};

// --- attention ---------------------------------------------------------------

/// Per-(edge, window) geometry with lazily built, batch-keyed index maps for
/// windowed attention. One instance is shared by the layers of a level.
class WindowContext {
 public:
  WindowContext() = default;
  /// h and w must be multiples of the effective window.
  WindowContext(int h, int w, int ws);

  struct Geometry {
    int ws = 1, shift = 0, nw = 1, t = 1;
    IndexMapPair rows;   // raster <-> window token rows (for batch n)
    IndexMap rel_index;  // shared across batch sizes
    Tensor mask;         // undefined when shift == 0
  };
  /// Geometry for batch n; `shifted` selects the cyclic-shift variant
  /// (identical to the plain one when a single window covers the map).
  const Geometry& geometry(int n, bool shifted) const;
  int window() const;
  int tokens() const;
  int rel_table_size() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

/// Multi-head self-attention within (optionally shifted) windows, with a
/// learned relative-position bias table shared by the callers at one level.
/// Params: <prefix>.qkv.*, <prefix>.proj.*.
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(ParamStore& store, const std::string& prefix, int c,
                  int heads, Rng& rng);
  /// x: raster tokens [n*h*w, c] -> same layout. `rpb` is the level's bias
  /// table [heads, (2ws-1)^2].
  Tensor forward(const Tensor& x, int n, const WindowContext& ctx,
                 bool shifted, const Tensor& rpb) const;
  /// Split-head variant used by style layers: first half of channels/heads
  /// runs plain-window attention, second half shifted-window; halves are
  /// re-concatenated before the output projection. Bias-table rows split the
  /// same way (first heads/2 rows to the plain branch).
  Tensor forward_split(const Tensor& x, int n, const WindowContext& ctx,
                       const Tensor& rpb) const;

 private:
  Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                const WindowContext::Geometry& g, const Tensor& rpb) const;
  LinearLayer qkv_, proj_;
  int c_ = 0, heads_ = 0;
};

/// One Swin transformer layer: x += attn(LN(x)); x += MLP(LN(x)).
/// Params: <prefix>.ln1.*, <prefix>.attn.*, <prefix>.ln2.*, <prefix>.mlp.*.
class SwinLayer {
 public:
  SwinLayer() = default;
  SwinLayer(ParamStore& store, const std::string& prefix, int c, int heads,
            bool shifted, Rng& rng);
  Tensor forward(const Tensor& tokens, int n, const WindowContext& ctx,
                 const Tensor& rpb) const;

 private:
  LayerNormLayer ln1_, ln2_;
  WindowAttention attn_;
  Mlp mlp_;
  bool shifted_ = false;
};

/// Residual Swin transformer block: two Swin layers (plain, then shifted),
/// a trailing 3x3 conv, and the block-level identity shortcut.
/// Params: <prefix>.rpb [heads, (2ws-1)^2], <prefix>.stl0.*, <prefix>.stl1.*,
/// <prefix>.conv.*.
class Rstb {
 public:
  Rstb() = default;
  Rstb(ParamStore& store, const std::string& prefix, int c, int heads,
       int edge, int ws, Rng& rng);
  Tensor forward(const Tensor& x_nchw) const;

 private:
  SwinLayer stl0_, stl1_;
  Conv2dLayer conv_;
  Tensor rpb_;
  WindowContext ctx_;
  TokenMapCache tokens_;
};

/// 2x2 neighborhood concatenation (4c channels) followed by a learned linear
/// map to out_c. Params: <prefix>.weight [4c, out_c], <prefix>.bias [out_c].
class PatchMerge {
 public:
  PatchMerge() = default;
  PatchMerge(ParamStore& store, const std::string& prefix, int c, int out_c,
             Rng& rng);
  Tensor forward(const Tensor& x_nchw) const;

 private:
  struct Maps {
    IndexMapPair in_tokens;   // input nchw <-> raster tokens
    IndexMapPair group_rows;  // raster rows <-> merge-grouped rows
    IndexMapPair out_tokens;  // output nchw <-> output tokens
  };
  struct State {
    std::mutex mu;
    std::map<std::tuple<int, int, int>, Maps> maps;
  };
  const Maps& maps(int n, int h, int w) const;
  LinearLayer lin_;
  std::shared_ptr<State> state_;
  int c_ = 0, out_c_ = 0;
};

/// Style-modulated transformer layer: latent-conditioned scale/shift after
/// each (non-affine) layer norm; attention heads split half plain-window,
/// half shifted-window. Params: <prefix>.affine1.*, <prefix>.attn.*,
/// <prefix>.affine2.*, <prefix>.mlp.*. Affine biases start at (1, 0) so the
/// modulation is neutral for a zero latent.
class StyleTransformerLayer {
 public:
  StyleTransformerLayer() = default;
  StyleTransformerLayer(ParamStore& store, const std::string& prefix, int c,
                        int heads, int latent_dim, Rng& rng);
  /// tokens: [n*h*w, c]; w_latent: [n, latent_dim].
  Tensor forward(const Tensor& tokens, const Tensor& w_latent, int n,
                 const WindowContext& ctx, const Tensor& rpb) const;

 private:
  Tensor modulate(const Tensor& x, const Tensor& w_latent,
                  const LinearLayer& affine, int rows_per_sample) const;
  LinearLayer affine1_, affine2_;
  WindowAttention attn_;
  Mlp mlp_;
  int c_ = 0;
};

/// Channel-wise scale/shift fusion: alpha, beta = conv3x3(f_enc) split along
/// channels; the first half of f_dec's channels passes through untouched, the
/// second half maps to alpha * x + beta. The conv starts at zero weights with
/// bias (1, 0), so the block is an exact identity until trained.
/// Params: <prefix>.conv.* (out channels = dec channels).
class Cwss {
 public:
  Cwss() = default;
  Cwss(ParamStore& store, const std::string& prefix, int enc_c, int dec_c,
       Rng& rng);
  Tensor forward(const Tensor& f_dec, const Tensor& f_enc) const;

 private:
  Conv2dLayer conv_;
  int dec_c_ = 0;
};

/// One decoder resolution level: two style layers over a shared bias table,
/// optional feature fusion, then bilinear 2x upsampling with a 1x1 channel
/// projection (both skipped at the final level).
/// Params: <prefix>.rpb, <prefix>.style0.*, <prefix>.style1.*,
/// <prefix>.up.* (when not final).
class DecoderLevel {
 public:
  DecoderLevel() = default;
  DecoderLevel(ParamStore& store, const std::string& prefix, int c,
               int next_c, int heads, int edge, int ws, int latent_dim,
               bool final_level, Rng& rng);
  /// x: NCHW at this level's edge; w0/w1: per-layer latents [n, latent_dim];
  /// fusion: optional feature fusion applied after the style layers (pass
  /// nullptr or an undefined f_enc to skip). Returns NCHW at double the edge
  /// (same edge when final).
  Tensor forward(const Tensor& x_nchw, const Tensor& w0, const Tensor& w1,
                 const Cwss* fusion, const Tensor& f_enc) const;
  int edge() const { return tokens_.h(); }
  int channels() const { return tokens_.c(); }

 private:
  StyleTransformerLayer style0_, style1_;
  Conv2dLayer up_proj_;
  Tensor rpb_;
  WindowContext ctx_;
  TokenMapCache tokens_;
  bool final_ = false;
};

}  // namespace tmrsr
