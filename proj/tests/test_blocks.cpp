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
#include <set>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "tmrsr/nn.hpp"

using namespace tmrsr;
using namespace tmrsr::testing;

namespace {

std::vector<Tensor> store_tensors(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& name : store.names()) out.push_back(store.get(name));
  return out;
}

}  // namespace

TEST_CASE("parameter store preserves registration order") {
  ParamStore store;
  store.create("b.weight", {2, 3});
  store.create("a.bias", {4});
  store.create("c", {1});
  REQUIRE(store.names() ==
          std::vector<std::string>({"b.weight", "a.bias", "c"}));
  CHECK(store.total_elements() == 11);
  CHECK(store.has("a.bias"));
  CHECK_FALSE(store.has("missing"));
  CHECK_THROWS_AS(store.create("c", {2}), std::logic_error);
  CHECK_THROWS_AS(store.get("missing"), std::logic_error);
}

TEST_CASE("window row maps tile with cyclic shift and invert exactly") {
  const int n = 2, h = 4, w = 6, ws = 2, shift = 1;
  auto maps = build_window_row_maps(n, h, w, ws, shift);
  const size_t rows = static_cast<size_t>(n) * h * w;
  REQUIRE(maps.fwd->size() == rows);
  for (size_t r = 0; r < rows; ++r)
    CHECK((*maps.inv)[static_cast<size_t>((*maps.fwd)[r])] == static_cast<int>(r));
  // First window row: sample 0, window (0,0), token (0,0) reads the pixel at
  // ((0+shift) mod h, (0+shift) mod w) = (1,1).
  CHECK((*maps.fwd)[0] == 1 * w + 1);
  // Token (1,1) of window (1,2) in sample 1 reads ((2+1+1)%4, (4+1+1)%6)=(0,0).
  const int t = ws * ws;
  const int nwx = w / ws;
  const size_t out_row = ((1 * (h / ws) + 1) * nwx + 2) * t + 1 * ws + 1;
  CHECK((*maps.fwd)[out_row] == 1 * h * w + 0);
}

TEST_CASE("merge row maps group each 2x2 neighborhood in raster order") {
  auto maps = build_merge_row_maps(1, 4, 4);
  const std::vector<int> expect_first_groups = {0, 1, 4, 5, 2, 3, 6, 7};
  for (size_t i = 0; i < expect_first_groups.size(); ++i)
    CHECK((*maps.fwd)[i] == expect_first_groups[i]);
  for (size_t r = 0; r < maps.fwd->size(); ++r)
    CHECK((*maps.inv)[static_cast<size_t>((*maps.fwd)[r])] == static_cast<int>(r));
}

TEST_CASE("relative position index is centered on the diagonal") {
  const int ws = 3, span = 2 * ws - 1, t = ws * ws;
  auto rel = build_rel_index(ws);
  const int center = (ws - 1) * span + (ws - 1);
  for (int i = 0; i < t; ++i) CHECK((*rel)[i * t + i] == center);
  // Swapping query and key mirrors the displacement through the center.
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) {
      const int a = (*rel)[i * t + j], b = (*rel)[j * t + i];
      CHECK(a / span + b / span == 2 * (ws - 1));
      CHECK(a % span + b % span == 2 * (ws - 1));
    }
}

TEST_CASE("shift mask blocks exactly the wrapped token pairs") {
  const int h = 8, w = 8, ws = 4, shift = 2;
  Tensor mask = build_shift_mask(h, w, ws, shift);
  REQUIRE(mask.shape() == std::vector<int>({4, 16, 16}));
  const auto& v = mask.values();
  auto masked_count = [&](int win) {
    int c = 0;
    for (int i = 0; i < 256; ++i)
      if (v[win * 256 + i] != 0.0) ++c;
    return c;
  };
  // Interior window: nothing wrapped. Edge windows mix two stripes of 8
  // tokens each; the corner window mixes four quadrants of 4 tokens.
  CHECK(masked_count(0) == 0);
  CHECK(masked_count(1) == 256 - 2 * 8 * 8);
  CHECK(masked_count(2) == 256 - 2 * 8 * 8);
  CHECK(masked_count(3) == 256 - 4 * 4 * 4);
}

TEST_CASE("single-window attention matches a dense reference") {
  const int c = 8, heads = 2, edge = 4, t = edge * edge;
  ParamStore store;
  Rng rng(2024);
  WindowAttention attn(store, "a", c, heads, rng);
  WindowContext ctx(edge, edge, edge);
  REQUIRE(ctx.window() == edge);
  Tensor rpb = leaf_tensor({heads, ctx.rel_table_size()}, 5, -0.1, 0.1);
  Tensor x = leaf_tensor({t, c}, 9);

  Tensor got = attn.forward(x, 1, ctx, /*shifted=*/false, rpb);
  // With one window covering the map the shifted variant degenerates to the
  // plain one.
  Tensor got_shifted = attn.forward(x, 1, ctx, /*shifted=*/true, rpb);

  Tensor qkv = ops::linear(x, store.get("a.qkv.weight"), store.get("a.qkv.bias"));
  Tensor q = ops::reshape(ops::slice_cols(qkv, 0, c), {1, t, c});
  Tensor k = ops::reshape(ops::slice_cols(qkv, c, 2 * c), {1, t, c});
  Tensor v = ops::reshape(ops::slice_cols(qkv, 2 * c, 3 * c), {1, t, c});
  Tensor logits = ops::attn_logits(q, k, heads, 1.0 / 2.0);
  logits = ops::add_rel_pos_bias(logits, rpb, build_rel_index(edge));
  Tensor o = ops::reshape(ops::attn_apply(ops::softmax_lastdim(logits), v, heads),
                          {t, c});
  Tensor want =
      ops::linear(o, store.get("a.proj.weight"), store.get("a.proj.bias"));

  for (size_t i = 0; i < want.numel(); ++i) {
    CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
    CHECK(got_shifted.values()[i] == got.values()[i]);
  }
}

TEST_CASE("shifted attention confines gradients to one attention group") {
  const int c = 4, heads = 2, edge = 4, ws = 2, shift = 1;
  ParamStore store;
  Rng rng(7);
  WindowAttention attn(store, "a", c, heads, rng);
  WindowContext ctx(edge, edge, ws);
  Tensor rpb = leaf_tensor({heads, ctx.rel_table_size()}, 3, -0.1, 0.1);

  // Independent group model: tokens interact iff, in shifted coordinates,
  // they share both the window and the contiguous-region id.
  auto group_of = [&](int y, int x) {
    const int yp = (y - shift + edge) % edge, xp = (x - shift + edge) % edge;
    auto region = [&](int p) { return p < edge - ws ? 0 : (p < edge - shift ? 1 : 2); };
    return ((yp / ws) * (edge / ws) + xp / ws) * 9 + region(yp) * 3 + region(xp);
  };

  for (int ry : {0, 2})
    for (int rx : {0, 3}) {
      const int r = ry * edge + rx;
      Tensor x = leaf_tensor({edge * edge, c}, 11 + r);
      Tensor out = attn.forward(x, 1, ctx, /*shifted=*/true, rpb);
      std::vector<Scalar> wv(out.numel(), 0.0);
      for (int j = 0; j < c; ++j) wv[r * c + j] = 1.0;
      Tensor loss = ops::mean_all(ops::mul(out, Tensor::from(out.shape(), wv)));
      loss.backward();
      for (int jy = 0; jy < edge; ++jy)
        for (int jx = 0; jx < edge; ++jx) {
          Scalar norm = 0.0;
          for (int j = 0; j < c; ++j)
            norm += std::abs(x.grad()[(jy * edge + jx) * c + j]);
          if (group_of(jy, jx) == group_of(ry, rx))
            CHECK_MESSAGE(norm > 1e-12, "expected flow into (" << jy << ","
                                                               << jx << ")");
          else
            CHECK_MESSAGE(norm == 0.0, "leak into (" << jy << "," << jx
                                                     << ") from (" << ry << ","
                                                     << rx << ")");
        }
    }
}

TEST_CASE("residual conv block gradients match finite differences") {
  ParamStore store;
  Rng rng(31);
  ResidualConvBlock block(store, "rb", 3, rng);
  Tensor x = leaf_tensor({1, 3, 5, 5}, 21);
  auto leaves = store_tensors(store);
  leaves.push_back(x);
  check_gradients("residual conv block", leaves,
                  [&] { return weighted_sum_loss(block.forward(x)); }, 1e-5,
                  1e-5, 1e-8);
}

TEST_CASE("residual swin block gradients match finite differences") {
  ParamStore store;
  Rng rng(32);
  Rstb block(store, "r", /*c=*/8, /*heads=*/2, /*edge=*/4, /*ws=*/2, rng);
  Tensor x = leaf_tensor({1, 8, 4, 4}, 22, -0.5, 0.5);
  auto leaves = store_tensors(store);
  leaves.push_back(x);
  check_gradients("residual swin block", leaves,
                  [&] { return weighted_sum_loss(block.forward(x)); }, 1e-5,
                  1e-4, 1e-8);
}

TEST_CASE("style transformer layer gradients match finite differences") {
  ParamStore store;
  Rng rng(33);
  StyleTransformerLayer layer(store, "s", /*c=*/8, /*heads=*/2,
                              /*latent_dim=*/6, rng);
  WindowContext ctx(4, 4, 2);
  ParamStore aux;
  Rng rng2(34);
  Tensor rpb = aux.create("rpb", {2, 9});
  init_normal(rpb, rng2, 0.02);
  Tensor x = leaf_tensor({2 * 16, 8}, 23, -0.5, 0.5);
  Tensor w = leaf_tensor({2, 6}, 24, -0.5, 0.5);
  auto leaves = store_tensors(store);
  leaves.push_back(rpb);
  leaves.push_back(x);
  leaves.push_back(w);
  check_gradients(
      "style transformer layer", leaves,
      [&] { return weighted_sum_loss(layer.forward(x, w, 2, ctx, rpb)); },
      1e-5, 1e-4, 1e-8);
}

TEST_CASE("patch merge matches direct neighborhood concatenation") {
  const int n = 2, c = 3, h = 4, w = 6, out_c = 5;
  ParamStore store;
  Rng rng(35);
  PatchMerge merge(store, "m", c, out_c, rng);
  Tensor x = leaf_tensor({n, c, h, w}, 25);
  Tensor got = merge.forward(x);
  REQUIRE(got.shape() == std::vector<int>({n, out_c, h / 2, w / 2}));

  const auto& wv = store.get("m.weight").values();
  const auto& bv = store.get("m.bias").values();
  const auto& xv = x.values();
  auto at = [&](int ni, int ch, int y, int xx) {
    return xv[((static_cast<size_t>(ni) * c + ch) * h + y) * w + xx];
  };
  for (int ni = 0; ni < n; ++ni)
    for (int oc = 0; oc < out_c; ++oc)
      for (int oy = 0; oy < h / 2; ++oy)
        for (int ox = 0; ox < w / 2; ++ox) {
          Scalar acc = bv[oc];
          int row = 0;
          for (int q = 0; q < 4; ++q)
            for (int ch = 0; ch < c; ++ch, ++row)
              acc += at(ni, ch, 2 * oy + (q >> 1), 2 * ox + (q & 1)) *
                     wv[static_cast<size_t>(row) * out_c + oc];
          const Scalar gotv =
              got.values()[((static_cast<size_t>(ni) * out_c + oc) * (h / 2) + oy) *
                               (w / 2) +
                           ox];
          CHECK(gotv == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("feature fusion starts as an exact identity") {
  ParamStore store;
  Rng rng(36);
  Cwss fusion(store, "f", /*enc_c=*/3, /*dec_c=*/4, rng);
  Tensor f_dec = leaf_tensor({2, 4, 3, 3}, 26);
  Tensor f_enc = leaf_tensor({2, 3, 3, 3}, 27);
  Tensor out = fusion.forward(f_dec, f_enc);
  REQUIRE(out.shape() == f_dec.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    CHECK(out.values()[i] == f_dec.values()[i]);
}

TEST_CASE("feature fusion applies scale to the second channel half only") {
  ParamStore store;
  Rng rng(37);
  Cwss fusion(store, "f", /*enc_c=*/1, /*dec_c=*/4, rng);
  // alpha = (2, 2), beta = (1, 1) via the conv bias; weights stay zero.
  auto& bias = store.get("f.conv.bias").mutable_values();
  bias = {2.0, 2.0, 1.0, 1.0};
  Tensor f_dec = Tensor::from({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  Tensor f_enc = Tensor::zeros({1, 1, 1, 1});
  Tensor out = fusion.forward(f_dec, f_enc);
  CHECK(out.values() == std::vector<Scalar>({1.0, 2.0, 7.0, 9.0}));
}

TEST_CASE("feature fusion gradients match finite differences") {
  ParamStore store;
  Rng rng(38);
  Cwss fusion(store, "f", /*enc_c=*/2, /*dec_c=*/4, rng);
  // Zero-initialized weights would hide errors in the alpha path, so fill
  // every parameter with generic values first.
  for (const auto& name : store.names()) {
    Tensor p = store.get(name);
    p.mutable_values() = test_values(p.numel(), 91, -0.6, 0.6);
  }
  Tensor f_dec = leaf_tensor({2, 4, 3, 3}, 28);
  Tensor f_enc = leaf_tensor({2, 2, 3, 3}, 29);
  auto leaves = store_tensors(store);
  leaves.push_back(f_dec);
  leaves.push_back(f_enc);
  check_gradients("feature fusion", leaves,
                  [&] { return weighted_sum_loss(fusion.forward(f_dec, f_enc)); },
                  1e-5, 1e-5, 1e-8);
}

TEST_CASE("decoder level doubles the edge and projects channels") {
  ParamStore store;
  Rng rng(39);
  DecoderLevel level(store, "d", /*c=*/4, /*next_c=*/6, /*heads=*/2,
                     /*edge=*/4, /*ws=*/2, /*latent_dim=*/5,
                     /*final_level=*/false, rng);
  DecoderLevel last(store, "dl", /*c=*/4, /*next_c=*/4, /*heads=*/2,
                    /*edge=*/4, /*ws=*/2, /*latent_dim=*/5,
                    /*final_level=*/true, rng);
  Tensor x = leaf_tensor({2, 4, 4, 4}, 41, -0.5, 0.5);
  Tensor w0 = leaf_tensor({2, 5}, 42);
  Tensor w1 = leaf_tensor({2, 5}, 43);
  Tensor up = level.forward(x, w0, w1, nullptr, Tensor());
  REQUIRE(up.shape() == std::vector<int>({2, 6, 8, 8}));
  Tensor same = last.forward(x, w0, w1, nullptr, Tensor());
  REQUIRE(same.shape() == std::vector<int>({2, 4, 4, 4}));
  CHECK_FALSE(store.has("dl.up.weight"));

  // Fusion is wired through: with a non-neutral bias the output changes.
  ParamStore fstore;
  Rng frng(40);
  Cwss fusion(fstore, "f", /*enc_c=*/3, /*dec_c=*/4, frng);
  Tensor f_enc = leaf_tensor({2, 3, 4, 4}, 44);
  Tensor fused = last.forward(x, w0, w1, &fusion, f_enc);
  for (size_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.values()[i] == same.values()[i]);
  fstore.get("f.conv.bias").mutable_values()[0] = 3.0;
  Tensor fused2 = last.forward(x, w0, w1, &fusion, f_enc);
  Scalar diff = 0.0;
  for (size_t i = 0; i < fused2.numel(); ++i)
    diff += std::abs(fused2.values()[i] - same.values()[i]);
  CHECK(diff > 1e-6);
}
