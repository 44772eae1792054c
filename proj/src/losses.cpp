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

#include "tmrsr/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "tmrsr/common.hpp"
#include "tmrsr/rng.hpp"

namespace tmrsr {

PerceptualBackbone::PerceptualBackbone(const BackboneConfig& cfg) {
  if (cfg.widths.size() != 4)
    throw ConfigError("backbone: expected four stage widths");
  // Stage layout of the first ten conv layers of a VGG19-shaped stack:
  // layer index (1-based), stage, and whether a tap/pool follows.
  struct Spec {
    int stage;
    bool tap, pool;
  };
  const Spec specs[10] = {
      {0, false, false}, {0, true, true},   // conv1-2, tap, pool
      {1, false, false}, {1, true, true},   // conv3-4, tap, pool
      {2, false, false}, {2, false, false},  // conv5-6
      {2, true, false},  {2, false, true},   // conv7 tap, conv8 pool
      {3, false, false}, {3, true, false},   // conv9-10, final tap
  };
  Rng rng(cfg.seed);
  int in_c = 1;
  for (int i = 0; i < 10; ++i) {
    const int out_c = cfg.widths[specs[i].stage];
    Layer layer;
    const std::string base = "conv" + std::to_string(i + 1);
    layer.w = Tensor::zeros({out_c, in_c, 3, 3});
    // He init suits the ReLU stack; the extractor stays frozen afterwards.
    for (Scalar& v : layer.w.mutable_values())
      v = rng.normal() * std::sqrt(2.0 / (in_c * 9));
    layer.b = Tensor::zeros({out_c});
    layer.tap_after = specs[i].tap;
    layer.pool_after = specs[i].pool;
    names_.push_back(base + ".weight");
    by_name_.emplace(base + ".weight", layer.w);
    names_.push_back(base + ".bias");
    by_name_.emplace(base + ".bias", layer.b);
    layers_.push_back(std::move(layer));
    in_c = out_c;
  }
}

std::vector<Tensor> PerceptualBackbone::taps(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != 1)
    throw ConfigError("backbone: expected [n,1,h,w] input");
  std::vector<Tensor> out;
  out.reserve(4);
  Tensor h = x;
  for (const Layer& layer : layers_) {
    h = ops::leaky_relu(ops::conv2d(h, layer.w, layer.b, 1, 1), 0.0);
    if (layer.tap_after) out.push_back(h);
    if (layer.pool_after) h = ops::maxpool2x2(h);
  }
  return out;
}

void PerceptualBackbone::set_weights(const std::string& name,
                                     const std::vector<Scalar>& values) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw ConfigError("backbone: unknown weight name " + name);
  if (values.size() != it->second.numel())
    throw ConfigError("backbone: size mismatch for " + name);
  it->second.mutable_values() = values;
}

Tensor rec_loss(const Tensor& sr, const Tensor& hr) {
  return ops::l1_loss(sr, hr);
}

namespace {

std::vector<Tensor> frozen_taps(const Tensor& hr,
                                const PerceptualBackbone& backbone) {
  NoGradGuard no_grad;
  return backbone.taps(hr);
}

}  // namespace

Tensor content_loss(const Tensor& sr, const Tensor& hr,
                    const PerceptualBackbone& backbone) {
  std::vector<Tensor> fs = backbone.taps(sr);
  std::vector<Tensor> fh = frozen_taps(hr, backbone);
  Tensor total;
  for (size_t i = 0; i < fs.size(); ++i) {
    Tensor term = ops::mse_loss(fs[i], fh[i]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

Tensor style_loss(const Tensor& sr, const Tensor& hr,
                  const PerceptualBackbone& backbone, bool normalize_gram) {
  std::vector<Tensor> fs = backbone.taps(sr);
  std::vector<Tensor> fh = frozen_taps(hr, backbone);
  Tensor total;
  for (size_t i = 0; i < fs.size(); ++i) {
    Tensor term = ops::mse_loss(ops::gram(fs[i], normalize_gram),
                                ops::gram(fh[i], normalize_gram));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

LossTerms total_loss(const Tensor& sr, const Tensor& hr,
                     const PerceptualBackbone& backbone, const LossWeights& w,
                     bool normalize_gram) {
  LossTerms terms;
  Tensor acc;
  auto accumulate = [&acc](Scalar weight, const Tensor& term) {
    Tensor scaled = ops::scale(term, weight);
    acc = acc.defined() ? ops::add(acc, scaled) : scaled;
  };
  if (w.recon != 0.0) {
    Tensor rec = rec_loss(sr, hr);
    terms.rec = rec.item();
    accumulate(w.recon, rec);
  }
  if (w.cont != 0.0 || w.style != 0.0) {
    // One tap pass serves both perceptual terms.
    std::vector<Tensor> fs = backbone.taps(sr);
    std::vector<Tensor> fh = frozen_taps(hr, backbone);
    if (w.cont != 0.0) {
      Tensor cont;
      for (size_t i = 0; i < fs.size(); ++i) {
        Tensor term = ops::mse_loss(fs[i], fh[i]);
        cont = cont.defined() ? ops::add(cont, term) : term;
      }
      terms.cont = cont.item();
      accumulate(w.cont, cont);
    }
    if (w.style != 0.0) {
      Tensor style;
      for (size_t i = 0; i < fs.size(); ++i) {
        Tensor term = ops::mse_loss(ops::gram(fs[i], normalize_gram),
                                    ops::gram(fh[i], normalize_gram));
        style = style.defined() ? ops::add(style, term) : term;
      }
      terms.style = style.item();
      accumulate(w.style, style);
    }
  }
  terms.total = acc.defined() ? acc : Tensor::zeros({1});
  return terms;
}

}  // namespace tmrsr
