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

#include "tmrsr/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tmrsr/ops.hpp"
#include "tmrsr/optim.hpp"
#include "tmrsr/rng.hpp"

namespace tmrsr {
namespace {

constexpr Scalar kLReluSlope = 0.2;

void check_finite_params(const ParamStore& store, const char* who) {
  for (const std::string& name : store.names())
    for (Scalar v : store.get(name).values())
      if (!std::isfinite(v))
        throw NumericError(std::string(who) +
                           " diverged: non-finite parameter " + name);
}

}  // namespace

// --- generator ---------------------------------------------------------------

Generator::Generator(const Profile& profile, uint64_t seed)
    : profile_(profile) {
  profile_.validate();
  Rng rng(derive_seed(seed, SeedTag::kInit));
  const int l = profile_.latent_dim;
  fc1_ = LinearLayer(store_, "gen.map.fc1", l, l, rng);
  fc2_ = LinearLayer(store_, "gen.map.fc2", l, l, rng);
  decoder_ = PriorDecoder(store_, "gen.decoder", profile_, rng);
  to_img_ = Conv2dLayer(store_, "gen.to_img", profile_.embed_dim, 1,
                        /*k=*/1, /*stride=*/1, /*pad=*/0, rng);
}

Tensor Generator::map_latent(const Tensor& z) const {
  if (z.ndim() != 2 || z.dim(1) != profile_.latent_dim)
    throw ConfigError("generator: latent batch must be [n, latent_dim]");
  return fc2_.forward(ops::leaky_relu(fc1_.forward(z), kLReluSlope));
}

Tensor Generator::synthesize(const Tensor& w) const {
  if (w.ndim() != 2 || w.dim(1) != profile_.latent_dim)
    throw ConfigError("generator: mapped batch must be [n, latent_dim]");
  const LatentBundle bundle(static_cast<size_t>(profile_.style_blocks()), w);
  return to_img_.forward(decoder_.forward(bundle, {}, {}));
}

Tensor Generator::forward(const Tensor& z) const {
  return synthesize(map_latent(z));
}

// --- discriminator -----------------------------------------------------------

Discriminator::Discriminator(int image_size, int ndf, uint64_t seed)
    : image_size_(image_size) {
  if (image_size < 8 || (image_size & (image_size - 1)) != 0)
    throw ConfigError("discriminator: image size must be a power of two >= 8");
  if (ndf < 1) throw ConfigError("discriminator: base width must be positive");
  Rng rng(derive_seed(seed, SeedTag::kInit));
  int edge = image_size, ic = 1, i = 0;
  while (edge > 4) {
    const int oc = std::min(ndf << i, 256);
    convs_.emplace_back(store_, "disc.conv" + std::to_string(i), ic, oc,
                        /*k=*/3, /*stride=*/2, /*pad=*/1, rng,
                        /*gain=*/std::sqrt(2.0));
    widths_.push_back(oc);
    ic = oc;
    edge /= 2;
    ++i;
  }
  fc_ = LinearLayer(store_, "disc.fc", ic * 4 * 4, 1, rng);
}

Tensor Discriminator::logits(const Tensor& x,
                             std::vector<Tensor>* preacts) const {
  if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != image_size_ ||
      x.dim(3) != image_size_)
    throw ConfigError("discriminator: input must be [n, 1, S, S]");
  Tensor h = x;
  for (const Conv2dLayer& conv : convs_) {
    Tensor pre = conv.forward(h);
    if (preacts) preacts->push_back(pre);
    h = ops::leaky_relu(pre, kLReluSlope);
  }
  const int n = x.dim(0);
  return fc_.forward(ops::reshape(h, {n, widths_.back() * 4 * 4}));
}

Tensor Discriminator::forward(const Tensor& x) const {
  return logits(x, nullptr);
}

Tensor Discriminator::input_gradient_penalty(const Tensor& x) const {
  const int n = x.dim(0);
  // Forward pass for the activation masks only. The masks are piecewise
  // constant in both input and parameters, so holding them fixed leaves the
  // penalty's gradients exact (almost everywhere).
  std::vector<Tensor> masks;
  {
    NoGradGuard ng;
    Tensor h = Tensor::from(x.shape(), x.values());
    for (const Conv2dLayer& conv : convs_) {
      Tensor pre = conv.forward(h);
      std::vector<Scalar> mv(pre.numel());
      const auto& pv = pre.values();
      for (size_t i = 0; i < mv.size(); ++i)
        mv[i] = pv[i] > 0.0 ? 1.0 : kLReluSlope;
      masks.push_back(Tensor::from(pre.shape(), mv));
      h = ops::leaky_relu(pre, kLReluSlope);
    }
  }
  // Explicit input-gradient graph: unroll the chain rule with the weights as
  // live graph nodes. d(logit)/d(flattened top) is the head's weight column.
  Tensor g = ops::broadcast_batch(
      ops::reshape(fc_.weight(), {widths_.back(), 4, 4}), n);
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    const int in_edge = image_size_ >> i;
    g = ops::mul(g, masks[static_cast<size_t>(i)]);
    g = ops::conv2d_transpose(g, convs_[static_cast<size_t>(i)].weight(),
                              /*stride=*/2, /*pad=*/1, in_edge, in_edge);
  }
  // Mean over samples of the squared gradient norm: mean_all averages over
  // every element, so scale back by the per-sample pixel count.
  const Scalar pixels =
      static_cast<Scalar>(image_size_) * static_cast<Scalar>(image_size_);
  return ops::scale(ops::mean_all(ops::mul(g, g)), pixels);
}

// --- training loop -----------------------------------------------------------

PretrainResult pretrain(Generator& gen, Discriminator& disc,
                        const std::vector<Slice>& dataset,
                        const GanConfig& cfg) {
  const int s = gen.profile().image_size;
  const int latent = gen.profile().latent_dim;
  if (disc.image_size() != s)
    throw ConfigError("pretrain: generator/discriminator size mismatch");
  if (cfg.steps < 1 || cfg.batch < 1)
    throw ConfigError("pretrain: steps and batch must be positive");
  if (dataset.empty()) throw DataError("pretrain: empty slice dataset");
  for (const Slice& sl : dataset)
    if (sl.h != s || sl.w != s)
      throw DataError("pretrain: dataset slice does not match image size");

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.beta1;
  ac.beta2 = cfg.beta2;
  Adam opt_g(gen.params(), ac);
  Adam opt_d(disc.params(), ac);

  PretrainResult res;
  const size_t pix = static_cast<size_t>(s) * s;
  for (int step = 0; step < cfg.steps; ++step) {
    Rng data_rng(derive_seed(cfg.seed, SeedTag::kDataOrder, step));
    Rng z_rng(derive_seed(cfg.seed, SeedTag::kLatent, step));

    std::vector<Scalar> rv(static_cast<size_t>(cfg.batch) * pix);
    for (int b = 0; b < cfg.batch; ++b) {
      const Slice& sl = dataset[data_rng.below(dataset.size())];
      for (size_t i = 0; i < pix; ++i) rv[b * pix + i] = sl.data[i];
    }
    Tensor real = Tensor::from({cfg.batch, 1, s, s}, rv);

    std::vector<Scalar> zv(static_cast<size_t>(cfg.batch) * latent);
    for (Scalar& v : zv) v = z_rng.normal();
    Tensor z = Tensor::from({cfg.batch, latent}, zv);
    Tensor fake = gen.forward(z);
    Tensor fake_detached = Tensor::from(fake.shape(), fake.values());

    // Critic update on real + detached fake.
    gen.params().zero_all_grads();
    disc.params().zero_all_grads();
    Tensor d_loss = ops::add(
        ops::mean_all(ops::softplus(ops::scale(disc.forward(real), -1.0))),
        ops::mean_all(ops::softplus(disc.forward(fake_detached))));
    if (cfg.r1_weight > 0.0 && cfg.r1_interval > 0 &&
        step % cfg.r1_interval == 0)
      d_loss = ops::add(d_loss, ops::scale(disc.input_gradient_penalty(real),
                                           0.5 * cfg.r1_weight));
    if (!std::isfinite(d_loss.item()))
      throw NumericError("pretrain diverged: critic loss is not finite");
    d_loss.backward();
    opt_d.step();

    // Generator update against the refreshed critic.
    gen.params().zero_all_grads();
    disc.params().zero_all_grads();
    Tensor g_loss =
        ops::mean_all(ops::softplus(ops::scale(disc.forward(fake), -1.0)));
    if (!std::isfinite(g_loss.item()))
      throw NumericError("pretrain diverged: generator loss is not finite");
    g_loss.backward();
    opt_g.step();

    check_finite_params(gen.params(), "pretrain generator");
    check_finite_params(disc.params(), "pretrain critic");

    res.steps_done = step + 1;
    res.d_loss = d_loss.item();
    res.g_loss = g_loss.item();

    if (cfg.sample_every > 0 && (step + 1) % cfg.sample_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "/sample_%06d.pgm", step + 1);
      write_sample_grid(fake, cfg.sample_dir + name);
    }
  }
  return res;
}

CentroidBank build_centroid_bank(const Generator& gen, int m, int n,
                                 uint64_t seed) {
  if (n < 1 || m < n)
    throw ConfigError("centroid bank: need sample count >= clusters >= 1");
  const int dim = gen.profile().latent_dim;
  Rng z_rng(derive_seed(seed, SeedTag::kLatent));
  std::vector<Scalar> pts(static_cast<size_t>(m) * dim);
  NoGradGuard ng;
  const int chunk = 256;
  for (int base = 0; base < m; base += chunk) {
    const int nb = std::min(chunk, m - base);
    std::vector<Scalar> zv(static_cast<size_t>(nb) * dim);
    for (Scalar& v : zv) v = z_rng.normal();
    Tensor w = gen.map_latent(Tensor::from({nb, dim}, zv));
    std::copy(w.values().begin(), w.values().end(),
              pts.begin() + static_cast<size_t>(base) * dim);
  }
  Rng k_rng(derive_seed(seed, SeedTag::kLatent, 1));
  return kmeans(pts, m, dim, n, k_rng);
}

void write_sample_grid(const Tensor& images, const std::string& path) {
  if (images.ndim() != 4 || images.dim(1) != 1)
    throw ConfigError("sample grid: expected [n, 1, h, w] images");
  const int n = std::min(4, images.dim(0));
  const int h = images.dim(2), w = images.dim(3);
  const int cols = n >= 2 ? 2 : 1;
  const int rows = (n + cols - 1) / cols;
  Slice grid;
  grid.h = rows * h;
  grid.w = cols * w;
  grid.data.assign(static_cast<size_t>(grid.h) * grid.w, 0.0f);
  const auto& v = images.values();
  for (int i = 0; i < n; ++i) {
    const int r0 = (i / cols) * h, c0 = (i % cols) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        grid.at(r0 + y, c0 + x) = static_cast<float>(
            v[static_cast<size_t>(i) * h * w + static_cast<size_t>(y) * w + x]);
  }
  write_pgm16(grid, path);  // clamps to [0, 1] on write
}

}  // namespace tmrsr
