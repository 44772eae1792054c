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

#include "tmrsr/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tmrsr/common.hpp"

namespace tmrsr {
namespace {

/// Value-only clamp used at inference; deliberately outside the graph.
Tensor clamp01(const Tensor& t) {
  std::vector<Scalar> v = t.values();
  for (Scalar& x : v) x = std::min(1.0, std::max(0.0, x));
  return Tensor::from(t.shape(), std::move(v));
}

}  // namespace

Profile Profile::full() { return Profile{}; }

Profile Profile::toy() {
  Profile p;
  p.image_size = 64;
  p.embed_dim = 16;
  p.channel_cap = 128;
  p.levels = 3;
  p.window = 4;
  p.latent_dim = 64;
  return p;
}

void Profile::validate() const {
  if (image_size <= 0 || (image_size >> levels) << levels != image_size)
    throw ConfigError("profile: image size must be divisible by 2^levels");
  if (top_edge() < 2) throw ConfigError("profile: too many encoder levels");
  for (int p = 0; p <= levels; ++p) {
    const int c = pyramid_channels(p), h = heads_for(c);
    if (c % h != 0 || h % 2 != 0)
      throw ConfigError("profile: channel width incompatible with head split");
  }
  if (latent_dim <= 0 || window < 2)
    throw ConfigError("profile: latent dim and window must be positive");
}

// --- PriorDecoder ------------------------------------------------------------

PriorDecoder::PriorDecoder(ParamStore& store, const std::string& prefix,
                           const Profile& p, Rng& rng) {
  const int top_c = p.top_channels(), top_e = p.top_edge();
  const_input_ = store.create(prefix + ".const", {top_c, top_e, top_e});
  init_normal(const_input_, rng, 1.0);
  levels_.reserve(p.decoder_levels());
  for (int i = 0; i < p.decoder_levels(); ++i) {
    const bool final_level = i == p.decoder_levels() - 1;
    const int c = p.decoder_channels(i);
    const int next_c = final_level ? c : p.decoder_channels(i + 1);
    levels_.emplace_back(store, prefix + ".level" + std::to_string(i), c,
                         next_c, p.heads_for(c), p.decoder_edge(i), p.window,
                         p.latent_dim, final_level, rng);
  }
}

Tensor PriorDecoder::forward(const LatentBundle& w,
                             const std::vector<const Cwss*>& fusions,
                             const FeaturePyramid& pyramid) const {
  const int n_levels = static_cast<int>(levels_.size());
  if (static_cast<int>(w.size()) != 2 * n_levels)
    throw ConfigError("decoder: latent bundle length mismatch");
  if (!fusions.empty() && (static_cast<int>(fusions.size()) != n_levels ||
                           static_cast<int>(pyramid.size()) != n_levels))
    throw ConfigError("decoder: fusion/pyramid arity mismatch");
  const int n = w[0].dim(0);
  Tensor x = ops::broadcast_batch(const_input_, n);
  for (int i = 0; i < n_levels; ++i) {
    const Cwss* fusion = fusions.empty() ? nullptr : fusions[i];
    // Pyramid entry 0 is the finest map; decoder level i runs at the
    // mirrored resolution n_levels-1-i.
    Tensor f_enc =
        fusion != nullptr ? pyramid[n_levels - 1 - i] : Tensor();
    x = levels_[i].forward(x, w[2 * i], w[2 * i + 1], fusion, f_enc);
  }
  return x;
}

// --- TransMRSR ---------------------------------------------------------------

TransMRSR::TransMRSR(const Profile& profile, const AblationFlags& flags,
                     uint64_t seed)
    : profile_(profile), flags_(flags) {
  profile_.validate();
  Rng rng(derive_seed(seed, SeedTag::kInit));
  const Profile& p = profile_;

  shallow_conv_ =
      Conv2dLayer(store_, "shallow.conv", 1, p.embed_dim, 3, 1, 1, rng);
  shallow_rb1_ = ResidualConvBlock(store_, "shallow.rb1", p.embed_dim, rng);
  shallow_rb2_ = ResidualConvBlock(store_, "shallow.rb2", p.embed_dim, rng);

  enc_blocks_.reserve(p.levels);
  enc_merges_.reserve(p.levels);
  for (int l = 0; l < p.levels; ++l) {
    const std::string base = "encoder.level" + std::to_string(l);
    const int c = p.pyramid_channels(l);
    enc_blocks_.emplace_back(store_, base + ".rstb", c, p.heads_for(c),
                             p.pyramid_edge(l), p.window, rng);
    enc_merges_.emplace_back(store_, base + ".merge", c,
                             p.pyramid_channels(l + 1), rng);
  }

  const int top_flat = p.top_channels() * p.top_edge() * p.top_edge();
  latent_proj_ = LinearLayer(store_, "latent_proj", top_flat,
                             p.style_blocks() * p.latent_dim, rng);

  decoder_ = PriorDecoder(store_, "decoder", p, rng);

  if (flags_.use_mref) {
    fusions_.reserve(p.decoder_levels());
    for (int i = 0; i < p.decoder_levels(); ++i) {
      const int enc_c = p.pyramid_channels(p.levels - i);
      fusions_.emplace_back(store_, "cwss.level" + std::to_string(i), enc_c,
                            p.decoder_channels(i), rng);
    }
  }

  hrec_rb1_ = ResidualConvBlock(store_, "hrec.rb1", p.embed_dim, rng);
  hrec_rb2_ = ResidualConvBlock(store_, "hrec.rb2", p.embed_dim, rng);
  // Zero init keeps the network an exact identity on i_lr at the start of
  // training (with use_sc), i.e. it begins from the interpolation baseline.
  hrec_out_ =
      Conv2dLayer(store_, "hrec.out", p.embed_dim, 1, 1, 1, 0, rng, 0.0);
}

Tensor TransMRSR::shallow_extract(const Tensor& i_lr) const {
  if (i_lr.ndim() != 4 || i_lr.dim(1) != 1 ||
      i_lr.dim(2) != profile_.image_size || i_lr.dim(3) != profile_.image_size)
    throw ConfigError("shallow_extract: expected [n,1,S,S] input");
  return shallow_rb2_.forward(shallow_rb1_.forward(shallow_conv_.forward(i_lr)));
}

FeaturePyramid TransMRSR::encode(const Tensor& f_s) const {
  FeaturePyramid pyramid;
  pyramid.reserve(profile_.pyramid_entries());
  Tensor x = f_s;
  for (int l = 0; l < profile_.levels; ++l) {
    Tensor pre = enc_blocks_[l].forward(x);
    pyramid.push_back(pre);
    x = enc_merges_[l].forward(pre);
  }
  pyramid.push_back(x);  // coarse top
  return pyramid;
}

LatentBundle TransMRSR::project_latents(const Tensor& top) const {
  const Profile& p = profile_;
  const int n = top.dim(0);
  const int flat = p.top_channels() * p.top_edge() * p.top_edge();
  Tensor all = latent_proj_.forward(ops::reshape(top, {n, flat}));
  LatentBundle w;
  w.reserve(p.style_blocks());
  for (int b = 0; b < p.style_blocks(); ++b)
    w.push_back(ops::slice_cols(all, b * p.latent_dim, (b + 1) * p.latent_dim));
  return w;
}

Tensor TransMRSR::decode(const LatentBundle& latents,
                         const FeaturePyramid& pyramid) const {
  if (!flags_.use_mref) return decoder_.forward(latents, {}, {});
  std::vector<const Cwss*> fusions;
  fusions.reserve(fusions_.size());
  for (const Cwss& f : fusions_) fusions.push_back(&f);
  return decoder_.forward(latents, fusions, pyramid);
}

Tensor TransMRSR::reconstruct(const Tensor& features) const {
  return hrec_out_.forward(hrec_rb2_.forward(hrec_rb1_.forward(features)));
}

std::pair<Tensor, Tensor> TransMRSR::forward(const Tensor& i_lr,
                                             bool inference,
                                             const LatentHook& hook) const {
  Tensor f_s = shallow_extract(i_lr);
  FeaturePyramid pyramid = encode(f_s);
  LatentBundle latents = project_latents(pyramid.back());
  if (hook) latents = hook(std::move(latents));
  Tensor f_d = decode(latents, pyramid);
  Tensor i_res, i_sr;
  if (flags_.use_sc) {
    i_res = reconstruct(ops::add(f_s, f_d));
    i_sr = ops::add(i_lr, i_res);
  } else {
    i_sr = reconstruct(f_d);
    i_res = i_sr;
  }
  if (inference) i_sr = clamp01(i_sr);
  return {i_sr, i_res};
}

// --- volume restoration ------------------------------------------------------

Volume restore_volume(const TransMRSR& model, const Volume& v_lr, int r,
                      Plane plane, Axis axis, int target_len, int batch,
                      const LatentHook& hook) {
  if (r < 1) throw ConfigError("restore_volume: scale must be >= 1");
  if (target_len == 0) target_len = r * v_lr.axis_len(axis);
  Volume up = r == 1 ? v_lr : upsample_to_hr(v_lr, r, axis, target_len);
  const int s = model.profile().image_size;
  const int n_slices = slice_count(up, plane);
  Volume out = up;  // same dims; slices replaced below
  NoGradGuard no_grad;
  for (int base = 0; base < n_slices; base += batch) {
    const int nb = std::min(batch, n_slices - base);
    std::vector<PadBox> boxes(nb);
    std::vector<Scalar> input(static_cast<size_t>(nb) * s * s);
    for (int i = 0; i < nb; ++i) {
      Slice sl = get_slice(up, plane, base + i);
      Slice padded = pad_to(sl, s, &boxes[i]);
      for (size_t j = 0; j < padded.data.size(); ++j)
        input[static_cast<size_t>(i) * s * s + j] = padded.data[j];
    }
    Tensor x = Tensor::from({nb, 1, s, s}, std::move(input));
    Tensor i_sr = model.forward(x, /*inference=*/true, hook).first;
    for (int i = 0; i < nb; ++i) {
      Slice restored;
      restored.h = s;
      restored.w = s;
      restored.data.resize(static_cast<size_t>(s) * s);
      for (size_t j = 0; j < restored.data.size(); ++j)
        restored.data[j] = static_cast<float>(
            i_sr.values()[static_cast<size_t>(i) * s * s + j]);
      set_slice(out, plane, base + i, crop(restored, boxes[i]));
    }
  }
  return out;
}

}  // namespace tmrsr
