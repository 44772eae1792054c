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

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tmrsr/nn.hpp"
#include "tmrsr/volume.hpp"

// Full two-stage super-resolution network: shallow conv extractor, windowed
// transformer encoder with patch merging, latent projection, style-modulated
// prior decoder with optional per-level feature fusion, and a residual
// reconstruction head. Slices enter as [n, 1, S, S] maps normalized to [0,1].

namespace tmrsr {

/// Network size preset. `levels` counts encoder merge stages; the encoder
/// produces a feature pyramid with levels+1 entries (finest to coarsest) and
/// the decoder mirrors it with levels+1 resolution levels of two style blocks
/// each.
struct Profile {
  int image_size = 256;
  int embed_dim = 32;
  int channel_cap = 256;
  int levels = 6;
  int window = 8;
  int latent_dim = 512;
  int head_dim = 8;

  static Profile full();
  /// Desk-scale preset for 64^3 volumes and fast tests.
  static Profile toy();

  int pyramid_entries() const { return levels + 1; }
  int decoder_levels() const { return levels + 1; }
  int style_blocks() const { return 2 * (levels + 1); }
  /// Channels/edge of pyramid entry p (p=0 finest ... p=levels coarsest top).
  int pyramid_channels(int p) const {
    const int c = embed_dim << p;
    return c < channel_cap ? c : channel_cap;
  }
  int pyramid_edge(int p) const { return image_size >> p; }
  /// Decoder level i runs at the mirrored pyramid entry levels-i.
  int decoder_channels(int i) const { return pyramid_channels(levels - i); }
  int decoder_edge(int i) const { return pyramid_edge(levels - i); }
  int top_edge() const { return pyramid_edge(levels); }
  int top_channels() const { return pyramid_channels(levels); }
  int heads_for(int c) const {
    const int h = c / head_dim;
    return h < 2 ? 2 : h;
  }
  void validate() const;
};

struct AblationFlags {
  bool use_gp = true;    // warm-start the decoder from the generative prior
  bool use_sdt = true;   // latent truncation toward cluster centers
  bool use_mref = true;  // per-level encoder feature fusion into the decoder
  bool use_sc = true;    // residual learning with the skip connections
};

/// Encoder feature pyramid, finest (image edge) to coarsest (top) inclusive.
using FeaturePyramid = std::vector<Tensor>;
/// One latent vector [n, latent_dim] per decoder style block.
using LatentBundle = std::vector<Tensor>;
/// Optional transform applied to the bundle before decoding (truncation).
using LatentHook = std::function<LatentBundle(LatentBundle)>;

/// Style-modulated decoder: learned constant input plus one DecoderLevel per
/// resolution. Shared between the prior generator and the restoration
/// network, so its parameter names are relative to a caller-chosen prefix.
/// Params: <prefix>.const plus the per-level names under <prefix>.levelI.
class PriorDecoder {
 public:
  PriorDecoder() = default;
  PriorDecoder(ParamStore& store, const std::string& prefix, const Profile& p,
               Rng& rng);
  /// w: one latent per style block; fusions/pyramid may be empty to skip
  /// feature injection (sizes must match decoder levels when present).
  Tensor forward(const LatentBundle& w, const std::vector<const Cwss*>& fusions,
                 const FeaturePyramid& pyramid) const;
  int n_levels() const { return static_cast<int>(levels_.size()); }

 private:
  Tensor const_input_;
  std::vector<DecoderLevel> levels_;
};

class TransMRSR {
 public:
  TransMRSR(const Profile& profile, const AblationFlags& flags, uint64_t seed);

  const Profile& profile() const { return profile_; }
  const AblationFlags& flags() const { return flags_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// [n,1,S,S] -> [n,embed,S,S] shallow feature map.
  Tensor shallow_extract(const Tensor& i_lr) const;
  /// Pyramid of levels+1 feature maps; the last entry is the coarse top.
  FeaturePyramid encode(const Tensor& f_s) const;
  /// Flatten the top and project to one latent per decoder style block.
  LatentBundle project_latents(const Tensor& top) const;
  /// Decode latents from the learned constant input; the pyramid is fused
  /// per level only when the model was built with use_mref.
  Tensor decode(const LatentBundle& latents, const FeaturePyramid& pyramid) const;
  /// Returns (i_sr, i_res). With use_sc the head sees F_s + F_d and i_sr =
  /// i_lr + i_res; without it the head consumes F_d alone and emits i_sr
  /// directly. `inference` clamps i_sr to [0,1] outside the graph.
  std::pair<Tensor, Tensor> forward(const Tensor& i_lr, bool inference = false,
                                    const LatentHook& hook = nullptr) const;

 private:
  Tensor reconstruct(const Tensor& features) const;

  Profile profile_;
  AblationFlags flags_;
  ParamStore store_;
  Conv2dLayer shallow_conv_;
  ResidualConvBlock shallow_rb1_, shallow_rb2_;
  std::vector<Rstb> enc_blocks_;
  std::vector<PatchMerge> enc_merges_;
  LinearLayer latent_proj_;
  PriorDecoder decoder_;
  std::vector<Cwss> fusions_;  // empty unless use_mref
  ResidualConvBlock hrec_rb1_, hrec_rb2_;
  Conv2dLayer hrec_out_;
};

/// Upsamples v_lr by r along `axis` (to target_len, or r*len when 0), then
/// restores every `plane` slice through the model in batches and reassembles
/// the volume. The model runs in inference mode (clamped output).
Volume restore_volume(const TransMRSR& model, const Volume& v_lr, int r,
                      Plane plane, Axis axis, int target_len = 0,
                      int batch = 4, const LatentHook& hook = nullptr);

}  // namespace tmrsr
