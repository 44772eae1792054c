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
#include <string>
#include <vector>

#include "tmrsr/latent.hpp"
#include "tmrsr/model.hpp"
#include "tmrsr/nn.hpp"
#include "tmrsr/volume.hpp"

// Stage one: the decoder trained as a standalone image generator so its
// weights carry a generative prior when the super-resolution stage starts.
// Generator = mapping MLP + the shared decoder stack + a 1x1 to-image conv;
// adversary = small strided-conv discriminator; objective = non-saturating
// GAN loss with an R1 gradient penalty on real images.

namespace tmrsr {

/// Mapping head + decoder + to-image conv. Parameter names carry the
/// "gen." prefix ("gen.decoder.*" matches the SR decoder's layout, so a
/// pretrained generator warm-starts the SR model by prefix stripping).
class Generator {
 public:
  Generator(const Profile& profile, uint64_t seed);

  /// z -> w: the mapping MLP. Latent banks cluster in this w space.
  Tensor map_latent(const Tensor& z) const;
  /// w -> image: constant input + style blocks; no feature injection.
  Tensor synthesize(const Tensor& w) const;
  /// Full pass: [n, latent_dim] -> [n, 1, S, S].
  Tensor forward(const Tensor& z) const;

  const Profile& profile() const { return profile_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

 private:
  Profile profile_;
  ParamStore store_;
  LinearLayer fc1_, fc2_;  // mapping head, leaky-relu between
  PriorDecoder decoder_;
  Conv2dLayer to_img_;
};

/// Strided-conv binary critic: k3 s2 halvings from the image edge down to
/// 4x4, then a linear head to one logit per sample.
class Discriminator {
 public:
  Discriminator(int image_size, int ndf, uint64_t seed);

  /// [n, 1, S, S] -> [n, 1] logits.
  Tensor forward(const Tensor& x) const;

  /// Mean over the batch of the squared input-gradient norm ||d D/d x||^2,
  /// built as an explicit graph (transposed convolutions over the activation
  /// masks) so the penalty is differentiable w.r.t. the critic's parameters.
  Tensor input_gradient_penalty(const Tensor& x) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  int image_size() const { return image_size_; }

 private:
  Tensor logits(const Tensor& x, std::vector<Tensor>* preacts) const;

  int image_size_ = 0;
  ParamStore store_;
  std::vector<Conv2dLayer> convs_;
  std::vector<int> widths_;  // output channels per conv
  LinearLayer fc_;
};

struct GanConfig {
  int steps = 200;
  int batch = 8;
  Scalar lr = 2e-3;
  Scalar beta1 = 0.0;
  Scalar beta2 = 0.99;
  Scalar r1_weight = 10.0;
  int r1_interval = 16;  // penalty applied on every k-th critic step
  int sample_every = 0;  // emit a PGM sample grid every k steps (0 = off)
  std::string sample_dir = ".";
  uint64_t seed = 0;
};

struct PretrainResult {
  int steps_done = 0;
  Scalar d_loss = 0.0;
  Scalar g_loss = 0.0;
};

/// Alternating non-saturating GAN training on HR slices (each already at the
/// generator's image size). Throws DataError on an empty or mis-sized
/// dataset and NumericError when either loss or any parameter goes
/// non-finite.
PretrainResult pretrain(Generator& gen, Discriminator& disc,
                        const std::vector<Slice>& dataset,
                        const GanConfig& cfg);

/// Maps m sampled latent codes through the generator's mapping head and
/// clusters them into n centers (the truncation bank).
CentroidBank build_centroid_bank(const Generator& gen, int m, int n,
                                 uint64_t seed);

/// Up-to-2x2 tile grid of the first samples of a [n, 1, h, w] batch, clamped
/// to [0, 1], written as 16-bit PGM.
void write_sample_grid(const Tensor& images, const std::string& path);

}  // namespace tmrsr
