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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "tmrsr/model.hpp"

using namespace tmrsr;
using namespace tmrsr::testing;

namespace {

Tensor toy_input(int n, unsigned seed) {
  return Tensor::from({n, 1, 64, 64}, test_values(n * 64 * 64, seed, 0.0, 1.0));
}

Scalar grad_l1(const Tensor& t) {
  if (t.grad().empty()) return 0.0;
  Scalar s = 0.0;
  for (Scalar g : t.grad()) s += std::abs(g);
  return s;
}

}  // namespace

TEST_CASE("profile tables match the documented geometry") {
  const Profile full = Profile::full();
  full.validate();
  CHECK(full.pyramid_entries() == 7);
  CHECK(full.style_blocks() == 14);
  const std::vector<int> full_edges = {256, 128, 64, 32, 16, 8, 4};
  const std::vector<int> full_channels = {32, 64, 128, 256, 256, 256, 256};
  for (int p = 0; p < 7; ++p) {
    CHECK(full.pyramid_edge(p) == full_edges[p]);
    CHECK(full.pyramid_channels(p) == full_channels[p]);
    CHECK(full.decoder_edge(p) == full_edges[6 - p]);
    CHECK(full.decoder_channels(p) == full_channels[6 - p]);
  }

  const Profile toy = Profile::toy();
  toy.validate();
  CHECK(toy.pyramid_entries() == 4);
  CHECK(toy.style_blocks() == 8);
  const std::vector<int> toy_edges = {64, 32, 16, 8};
  const std::vector<int> toy_channels = {16, 32, 64, 128};
  for (int p = 0; p < 4; ++p) {
    CHECK(toy.pyramid_edge(p) == toy_edges[p]);
    CHECK(toy.pyramid_channels(p) == toy_channels[p]);
  }

  Profile bad = Profile::toy();
  bad.image_size = 60;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("toy encoder emits the documented pyramid and latent bundle") {
  TransMRSR model(Profile::toy(), AblationFlags{}, 11);
  Tensor x = toy_input(2, 1);
  Tensor f_s = model.shallow_extract(x);
  REQUIRE(f_s.shape() == std::vector<int>({2, 16, 64, 64}));
  FeaturePyramid pyr = model.encode(f_s);
  REQUIRE(pyr.size() == 4);
  const std::vector<int> edges = {64, 32, 16, 8};
  const std::vector<int> channels = {16, 32, 64, 128};
  for (size_t p = 0; p < pyr.size(); ++p) {
    CHECK(pyr[p].dim(1) == channels[p]);
    CHECK(pyr[p].dim(2) == edges[p]);
    CHECK(pyr[p].dim(3) == edges[p]);
    for (Scalar v : pyr[p].values()) REQUIRE(std::isfinite(v));
  }
  LatentBundle w = model.project_latents(pyr.back());
  REQUIRE(w.size() == 8);
  for (const Tensor& t : w)
    CHECK(t.shape() == std::vector<int>({2, 64}));

  // Zero top with the zero-initialized projection bias gives zero latents.
  LatentBundle wz = model.project_latents(Tensor::zeros({2, 128, 8, 8}));
  for (const Tensor& t : wz)
    for (Scalar v : t.values()) CHECK(v == 0.0);

  // Different tops give different bundles for generic weights.
  LatentBundle w2 =
      model.project_latents(leaf_tensor({2, 128, 8, 8}, 5, 0.0, 1.0));
  Scalar diff = 0.0;
  for (size_t b = 0; b < w.size(); ++b)
    for (size_t i = 0; i < w[b].numel(); ++i)
      diff += std::abs(w[b].values()[i] - w2[b].values()[i]);
  CHECK(diff > 1e-6);

  CHECK_THROWS_AS(model.shallow_extract(Tensor::zeros({1, 1, 32, 32})),
                  ConfigError);
}

TEST_CASE("fresh model with skip connections is the identity map") {
  TransMRSR model(Profile::toy(), AblationFlags{}, 3);
  Tensor x = toy_input(1, 2);
  auto [i_sr, i_res] = model.forward(x);
  REQUIRE(i_sr.shape() == x.shape());
  for (size_t i = 0; i < i_res.numel(); ++i) CHECK(i_res.values()[i] == 0.0);
  for (size_t i = 0; i < i_sr.numel(); ++i)
    CHECK(i_sr.values()[i] == x.values()[i]);
}

TEST_CASE("decoder output is independent of the pyramid without fusion") {
  AblationFlags flags;
  flags.use_mref = false;
  TransMRSR model(Profile::toy(), flags, 5);
  CHECK_FALSE(model.params().has("cwss.level0.conv.weight"));
  Tensor x = toy_input(1, 3);
  FeaturePyramid pyr = model.encode(model.shallow_extract(x));
  LatentBundle w = model.project_latents(pyr.back());
  Tensor a = model.decode(w, pyr);
  FeaturePyramid zeros;
  for (const Tensor& t : pyr) zeros.push_back(Tensor::zeros(t.shape()));
  Tensor b = model.decode(w, zeros);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);

  // With fusion enabled and a non-neutral fusion conv, the pyramid matters.
  TransMRSR fused(Profile::toy(), AblationFlags{}, 5);
  auto& fw = fused.params().get("cwss.level1.conv.weight").mutable_values();
  for (size_t i = 0; i < 32; ++i) fw[i] = 0.05 * static_cast<Scalar>(i + 1);
  FeaturePyramid pyr2 = fused.encode(fused.shallow_extract(x));
  LatentBundle w2 = fused.project_latents(pyr2.back());
  Tensor c = fused.decode(w2, pyr2);
  FeaturePyramid zeros2;
  for (const Tensor& t : pyr2) zeros2.push_back(Tensor::zeros(t.shape()));
  Tensor d = fused.decode(w2, zeros2);
  Scalar diff = 0.0;
  for (size_t i = 0; i < c.numel(); ++i)
    diff += std::abs(c.values()[i] - d.values()[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("latent hook feeds the decoder") {
  TransMRSR model(Profile::toy(), AblationFlags{}, 9);
  // Make the output latent-sensitive: the reconstruction head starts at zero,
  // so give its final conv generic weights first.
  auto& wv = model.params().get("hrec.out.weight").mutable_values();
  wv = test_values(wv.size(), 55, -0.3, 0.3);
  Tensor x = toy_input(1, 4);
  Tensor plain = model.forward(x).first;
  Tensor same = model
                    .forward(x, false,
                             [](LatentBundle w) { return w; })
                    .first;
  for (size_t i = 0; i < plain.numel(); ++i)
    CHECK(plain.values()[i] == same.values()[i]);
  Tensor zeroed = model
                      .forward(x, false,
                               [](LatentBundle w) {
                                 for (Tensor& t : w)
                                   t = ops::scale(t, 0.0);
                                 return w;
                               })
                      .first;
  Scalar diff = 0.0;
  for (size_t i = 0; i < plain.numel(); ++i)
    diff += std::abs(plain.values()[i] - zeroed.values()[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("gradients reach the reconstruction head first, then everything") {
  for (const bool use_sc : {true, false}) {
    for (const bool use_mref : {true, false}) {
      AblationFlags flags;
      flags.use_sc = use_sc;
      flags.use_mref = use_mref;
      TransMRSR model(Profile::toy(), flags, 17);
      ParamStore& store = model.params();
      Tensor x = toy_input(1, 6);
      Tensor target = toy_input(1, 7);

      auto loss_of = [&] {
        Tensor i_sr = model.forward(x).first;
        return ops::l1_loss(i_sr, target);
      };

      // Pass 1: the zero-initialized output conv blocks upstream flow.
      store.zero_all_grads();
      Tensor loss = loss_of();
      REQUIRE(std::isfinite(loss.item()));
      loss.backward();
      CHECK(grad_l1(store.get("hrec.out.weight")) > 0.0);
      CHECK(grad_l1(store.get("hrec.out.bias")) > 0.0);
      CHECK(grad_l1(store.get("latent_proj.weight")) == 0.0);

      // Pass 2: with a live output conv, gradient reaches every group.
      auto& wv = store.get("hrec.out.weight").mutable_values();
      wv = test_values(wv.size(), 66, -0.2, 0.2);
      store.zero_all_grads();
      loss_of().backward();
      for (const auto& name : store.names())
        CHECK_MESSAGE(grad_l1(store.get(name)) > 0.0,
                      "zero gradient for " << name << " (use_sc=" << use_sc
                                           << ", use_mref=" << use_mref << ")");
    }
  }
}

TEST_CASE("same seed builds bit-identical models") {
  TransMRSR a(Profile::toy(), AblationFlags{}, 123);
  TransMRSR b(Profile::toy(), AblationFlags{}, 123);
  TransMRSR c(Profile::toy(), AblationFlags{}, 124);
  REQUIRE(a.params().names() == b.params().names());
  Scalar diff_seed = 0.0;
  for (const auto& name : a.params().names()) {
    const auto& av = a.params().get(name).values();
    const auto& bv = b.params().get(name).values();
    REQUIRE(av.size() == bv.size());
    for (size_t i = 0; i < av.size(); ++i) REQUIRE(av[i] == bv[i]);
    const auto& cv = c.params().get(name).values();
    for (size_t i = 0; i < av.size(); ++i)
      diff_seed += std::abs(av[i] - cv[i]);
  }
  CHECK(diff_seed > 1e-3);

  Tensor x = toy_input(1, 8);
  Tensor ya = a.forward(x).first;
  Tensor yb = b.forward(x).first;
  for (size_t i = 0; i < ya.numel(); ++i)
    CHECK(ya.values()[i] == yb.values()[i]);
}

TEST_CASE("checkpoint-facing parameter names are stable") {
  TransMRSR model(Profile::toy(), AblationFlags{}, 1);
  const ParamStore& store = model.params();
  for (const char* name :
       {"shallow.conv.weight", "shallow.rb1.conv1.weight",
        "encoder.level0.rstb.rpb", "encoder.level0.rstb.stl0.ln1.gamma",
        "encoder.level0.rstb.stl1.attn.qkv.weight",
        "encoder.level2.merge.weight", "latent_proj.weight", "decoder.const",
        "decoder.level0.rpb", "decoder.level0.style0.affine1.weight",
        "decoder.level0.style1.attn.proj.bias", "decoder.level1.up.weight",
        "cwss.level0.conv.weight", "cwss.level3.conv.bias", "hrec.rb2.conv2.bias",
        "hrec.out.weight"})
    CHECK_MESSAGE(store.has(name), "missing parameter " << name);
  // The last decoder level has no upsampling projection.
  CHECK_FALSE(store.has("decoder.level3.up.weight"));
}

TEST_CASE("volume restoration with an identity model reproduces interpolation") {
  TransMRSR model(Profile::toy(), AblationFlags{}, 21);
  Volume v;
  v.nx = 20;
  v.ny = 24;
  v.nz = 10;
  v.data.resize(static_cast<size_t>(20) * 24 * 10);
  auto vals = test_values(v.data.size(), 30, 0.0, 1.0);
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = static_cast<float>(vals[i]);

  Volume got = restore_volume(model, v, 2, Plane::kXY, Axis::kZ);
  Volume want = upsample_to_hr(v, 2, Axis::kZ, 20);
  REQUIRE(got.nx == want.nx);
  REQUIRE(got.ny == want.ny);
  REQUIRE(got.nz == want.nz);
  for (size_t i = 0; i < want.data.size(); ++i)
    CHECK(got.data[i] == want.data[i]);
}
