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

#include "tmrsr/nn.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

namespace tmrsr {
namespace {

constexpr Scalar kMaskValue = -1e9;

std::shared_ptr<std::vector<int>> make_map(size_t n) {
  return std::make_shared<std::vector<int>>(n);
}

/// Slices rows [r0, r1) of a matrix whose rows are contiguous, as a
/// differentiable view chain (reshape -> column slice -> reshape).
Tensor matrix_rows(const Tensor& m, int r0, int r1) {
  const int rows = m.dim(0), cols = m.dim(1);
  if (r0 == 0 && r1 == rows) return m;
  Tensor flat = ops::reshape(m, {1, rows * cols});
  Tensor cut = ops::slice_cols(flat, r0 * cols, r1 * cols);
  return ops::reshape(cut, {r1 - r0, cols});
}

}  // namespace

// --- ParamStore --------------------------------------------------------------

Tensor ParamStore::create(const std::string& name,
                          const std::vector<int>& shape) {
  if (params_.count(name) != 0)
    throw std::logic_error("duplicate parameter name: " + name);
  Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
  params_.emplace(name, t);
  order_.push_back(name);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::logic_error("unknown parameter name: " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const auto& kv : params_) n += kv.second.numel();
  return n;
}

void ParamStore::zero_all_grads() {
  for (const auto& name : order_) params_.at(name).zero_grad();
}

void init_normal(Tensor t, Rng& rng, Scalar stddev) {
  for (Scalar& v : t.mutable_values()) v = rng.normal() * stddev;
}

void init_fan_in(Tensor t, Rng& rng, int fan_in, Scalar gain) {
  if (gain == 0.0) return;  // leaves the zero fill, consumes no randomness
  init_normal(t, rng, gain / std::sqrt(static_cast<Scalar>(fan_in)));
}

void init_constant(Tensor t, Scalar v) {
  for (Scalar& x : t.mutable_values()) x = v;
}

// --- layout maps -------------------------------------------------------------

IndexMapPair build_token_maps(int n, int c, int h, int w) {
  const size_t total = static_cast<size_t>(n) * c * h * w;
  auto fwd = make_map(total);
  auto inv = make_map(total);
  const size_t hw = static_cast<size_t>(h) * w;
  for (int ni = 0; ni < n; ++ni)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const size_t nchw = ((static_cast<size_t>(ni) * c + ch) * h + y) * w + x;
          const size_t tok = (ni * hw + static_cast<size_t>(y) * w + x) * c + ch;
          (*fwd)[tok] = static_cast<int>(nchw);
          (*inv)[nchw] = static_cast<int>(tok);
        }
  return {fwd, inv};
}

IndexMapPair build_window_row_maps(int n, int h, int w, int ws, int shift) {
  if (h % ws != 0 || w % ws != 0)
    throw std::logic_error("window must divide the feature map edge");
  const int nwy = h / ws, nwx = w / ws;
  const size_t rows = static_cast<size_t>(n) * h * w;
  auto fwd = make_map(rows);
  auto inv = make_map(rows);
  size_t out = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int ty = 0; ty < ws; ++ty)
          for (int tx = 0; tx < ws; ++tx, ++out) {
            const int yy = (wy * ws + ty + shift) % h;
            const int xx = (wx * ws + tx + shift) % w;
            const size_t in =
                static_cast<size_t>(ni) * h * w + static_cast<size_t>(yy) * w + xx;
            (*fwd)[out] = static_cast<int>(in);
            (*inv)[in] = static_cast<int>(out);
          }
  return {fwd, inv};
}

IndexMapPair build_merge_row_maps(int n, int h, int w) {
  if (h % 2 != 0 || w % 2 != 0)
    throw std::logic_error("patch merge needs even feature map edges");
  const int oh = h / 2, ow = w / 2;
  const size_t rows = static_cast<size_t>(n) * h * w;
  auto fwd = make_map(rows);
  auto inv = make_map(rows);
  size_t out = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int q = 0; q < 4; ++q, ++out) {
          const int y = 2 * oy + (q >> 1);
          const int x = 2 * ox + (q & 1);
          const size_t in =
              static_cast<size_t>(ni) * h * w + static_cast<size_t>(y) * w + x;
          (*fwd)[out] = static_cast<int>(in);
          (*inv)[in] = static_cast<int>(out);
        }
  return {fwd, inv};
}

IndexMap build_rel_index(int ws) {
  const int t = ws * ws, span = 2 * ws - 1;
  auto idx = make_map(static_cast<size_t>(t) * t);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) {
      const int dy = i / ws - j / ws + ws - 1;
      const int dx = i % ws - j % ws + ws - 1;
      (*idx)[static_cast<size_t>(i) * t + j] = dy * span + dx;
    }
  return idx;
}

Tensor build_shift_mask(int h, int w, int ws, int shift) {
  // Region ids follow the standard shifted-window construction, expressed
  // directly in post-shift coordinates: the last `ws` rows/cols of the
  // shifted map mix tokens wrapped across the image boundary.
  const auto region = [&](int p, int edge) {
    if (p < edge - ws) return 0;
    return p < edge - shift ? 1 : 2;
  };
  const int nwy = h / ws, nwx = w / ws, t = ws * ws;
  std::vector<Scalar> mask(static_cast<size_t>(nwy) * nwx * t * t, 0.0);
  std::vector<int> id(static_cast<size_t>(t));
  size_t base = 0;
  for (int wy = 0; wy < nwy; ++wy)
    for (int wx = 0; wx < nwx; ++wx) {
      for (int ty = 0; ty < ws; ++ty)
        for (int tx = 0; tx < ws; ++tx)
          id[static_cast<size_t>(ty) * ws + tx] =
              region(wy * ws + ty, h) * 3 + region(wx * ws + tx, w);
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
          if (id[i] != id[j]) mask[base + static_cast<size_t>(i) * t + j] = kMaskValue;
      base += static_cast<size_t>(t) * t;
    }
  return Tensor::from({nwy * nwx, t, t}, std::move(mask));
}

TokenMapCache::TokenMapCache(int c, int h, int w)
    : state_(std::make_shared<State>()), c_(c), h_(h), w_(w) {}

const IndexMapPair& TokenMapCache::maps(int n) const {
  std::lock_guard<std::mutex> lock(state_->mu);
  auto it = state_->maps.find(n);
  if (it == state_->maps.end())
    it = state_->maps.emplace(n, build_token_maps(n, c_, h_, w_)).first;
  return it->second;
}

// --- simple layers -----------------------------------------------------------

LinearLayer::LinearLayer(ParamStore& store, const std::string& prefix, int in,
                         int out, Rng& rng, bool bias) {
  w_ = store.create(prefix + ".weight", {in, out});
  init_fan_in(w_, rng, in);
  if (bias) b_ = store.create(prefix + ".bias", {out});
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& prefix, int ic,
                         int oc, int k, int stride, int pad, Rng& rng,
                         Scalar gain)
    : stride_(stride), pad_(pad) {
  w_ = store.create(prefix + ".weight", {oc, ic, k, k});
  init_fan_in(w_, rng, ic * k * k, gain);
  b_ = store.create(prefix + ".bias", {oc});
}

LayerNormLayer::LayerNormLayer(ParamStore& store, const std::string& prefix,
                               int c) {
  gamma_ = store.create(prefix + ".gamma", {c});
  init_constant(gamma_, 1.0);
  beta_ = store.create(prefix + ".beta", {c});
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, int c, Rng& rng,
         int ratio)
    : fc1_(store, prefix + ".fc1", c, ratio * c, rng),
      fc2_(store, prefix + ".fc2", ratio * c, c, rng) {}

ResidualConvBlock::ResidualConvBlock(ParamStore& store,
                                     const std::string& prefix, int c,
                                     Rng& rng)
    : conv1_(store, prefix + ".conv1", c, c, 3, 1, 1, rng,
             std::sqrt(Scalar(2))),
      conv2_(store, prefix + ".conv2", c, c, 3, 1, 1, rng) {}

Tensor ResidualConvBlock::forward(const Tensor& x) const {
  Tensor h = ops::leaky_relu(conv1_.forward(x), 0.2);
  return ops::add(conv2_.forward(h), x);
}

// --- attention ---------------------------------------------------------------

struct WindowContext::State {
  int h = 0, w = 0, ws = 1, shift = 0;
  IndexMap rel_index;
  Tensor mask;
  std::mutex mu;
  std::map<std::pair<int, bool>, std::shared_ptr<Geometry>> cache;
};

WindowContext::WindowContext(int h, int w, int ws)
    : state_(std::make_shared<State>()) {
  const int edge = h < w ? h : w;
  const int eff = effective_window(edge, ws);
  if (h % eff != 0 || w % eff != 0)
    throw std::logic_error("window must divide both feature map edges");
  state_->h = h;
  state_->w = w;
  state_->ws = eff;
  state_->shift = (eff < h || eff < w) ? eff / 2 : 0;
  state_->rel_index = build_rel_index(eff);
  if (state_->shift > 0)
    state_->mask = build_shift_mask(h, w, eff, state_->shift);
}

int WindowContext::window() const { return state_->ws; }
int WindowContext::tokens() const { return state_->ws * state_->ws; }
int WindowContext::rel_table_size() const {
  const int span = 2 * state_->ws - 1;
  return span * span;
}

const WindowContext::Geometry& WindowContext::geometry(int n,
                                                       bool shifted) const {
  State& st = *state_;
  const bool use_shift = shifted && st.shift > 0;
  std::lock_guard<std::mutex> lock(st.mu);
  auto key = std::make_pair(n, use_shift);
  auto it = st.cache.find(key);
  if (it == st.cache.end()) {
    auto g = std::make_shared<Geometry>();
    g->ws = st.ws;
    g->shift = use_shift ? st.shift : 0;
    g->nw = (st.h / st.ws) * (st.w / st.ws);
    g->t = st.ws * st.ws;
    g->rows = build_window_row_maps(n, st.h, st.w, st.ws, g->shift);
    g->rel_index = st.rel_index;
    if (use_shift) g->mask = st.mask;
    it = st.cache.emplace(key, std::move(g)).first;
  }
  return *it->second;
}

WindowAttention::WindowAttention(ParamStore& store, const std::string& prefix,
                                 int c, int heads, Rng& rng)
    : qkv_(store, prefix + ".qkv", c, 3 * c, rng),
      proj_(store, prefix + ".proj", c, c, rng),
      c_(c),
      heads_(heads) {
  if (c % heads != 0)
    throw std::logic_error("attention heads must divide channels");
}

Tensor WindowAttention::attend(const Tensor& q, const Tensor& k,
                               const Tensor& v, int heads,
                               const WindowContext::Geometry& g,
                               const Tensor& rpb) const {
  const int hd = q.dim(2) / heads;
  Tensor logits =
      ops::attn_logits(q, k, heads, 1.0 / std::sqrt(static_cast<Scalar>(hd)));
  logits = ops::add_rel_pos_bias(logits, rpb, g.rel_index);
  if (g.mask.defined()) logits = ops::add_window_mask(logits, g.mask);
  return ops::attn_apply(ops::softmax_lastdim(logits), v, heads);
}

Tensor WindowAttention::forward(const Tensor& x, int n,
                                const WindowContext& ctx, bool shifted,
                                const Tensor& rpb) const {
  const auto& g = ctx.geometry(n, shifted);
  const int m = x.dim(0), b = n * g.nw;
  Tensor xw = ops::permute_rows(x, g.rows.fwd, g.rows.inv);
  Tensor qkv = qkv_.forward(xw);
  Tensor q = ops::reshape(ops::slice_cols(qkv, 0, c_), {b, g.t, c_});
  Tensor k = ops::reshape(ops::slice_cols(qkv, c_, 2 * c_), {b, g.t, c_});
  Tensor v = ops::reshape(ops::slice_cols(qkv, 2 * c_, 3 * c_), {b, g.t, c_});
  Tensor o = ops::reshape(attend(q, k, v, heads_, g, rpb), {m, c_});
  o = proj_.forward(o);
  return ops::permute_rows(o, g.rows.inv, g.rows.fwd);
}

Tensor WindowAttention::forward_split(const Tensor& x, int n,
                                      const WindowContext& ctx,
                                      const Tensor& rpb) const {
  if (heads_ % 2 != 0)
    throw std::logic_error("split attention needs an even head count");
  const int m = x.dim(0), half = c_ / 2, hh = heads_ / 2;
  Tensor qkv = qkv_.forward(x);  // raster rows [m, 3c]
  Tensor halves[2];
  for (int s = 0; s < 2; ++s) {
    const bool shifted = s == 1;
    const auto& g = ctx.geometry(n, shifted);
    const int b = n * g.nw;
    const int c0 = s * half;
    Tensor q = ops::slice_cols(qkv, c0, c0 + half);
    Tensor k = ops::slice_cols(qkv, c_ + c0, c_ + c0 + half);
    Tensor v = ops::slice_cols(qkv, 2 * c_ + c0, 2 * c_ + c0 + half);
    q = ops::reshape(ops::permute_rows(q, g.rows.fwd, g.rows.inv), {b, g.t, half});
    k = ops::reshape(ops::permute_rows(k, g.rows.fwd, g.rows.inv), {b, g.t, half});
    v = ops::reshape(ops::permute_rows(v, g.rows.fwd, g.rows.inv), {b, g.t, half});
    Tensor rpb_half = matrix_rows(rpb, s * hh, (s + 1) * hh);
    Tensor o = ops::reshape(attend(q, k, v, hh, g, rpb_half), {m, half});
    halves[s] = ops::permute_rows(o, g.rows.inv, g.rows.fwd);
  }
  Tensor cat = ops::concat_channels(ops::reshape(halves[0], {m, half, 1, 1}),
                                    ops::reshape(halves[1], {m, half, 1, 1}));
  return proj_.forward(ops::reshape(cat, {m, c_}));
}

SwinLayer::SwinLayer(ParamStore& store, const std::string& prefix, int c,
                     int heads, bool shifted, Rng& rng)
    : ln1_(store, prefix + ".ln1", c),
      ln2_(store, prefix + ".ln2", c),
      attn_(store, prefix + ".attn", c, heads, rng),
      mlp_(store, prefix + ".mlp", c, rng),
      shifted_(shifted) {
  // Construction order above fixes the rng stream; note ln layers hold no
  // random state.
}

Tensor SwinLayer::forward(const Tensor& tokens, int n,
                          const WindowContext& ctx, const Tensor& rpb) const {
  Tensor x =
      ops::add(tokens, attn_.forward(ln1_.forward(tokens), n, ctx, shifted_, rpb));
  return ops::add(x, mlp_.forward(ln2_.forward(x)));
}

Rstb::Rstb(ParamStore& store, const std::string& prefix, int c, int heads,
           int edge, int ws, Rng& rng)
    : ctx_(edge, edge, ws), tokens_(c, edge, edge) {
  rpb_ = store.create(prefix + ".rpb", {heads, ctx_.rel_table_size()});
  init_normal(rpb_, rng, 0.02);
  stl0_ = SwinLayer(store, prefix + ".stl0", c, heads, /*shifted=*/false, rng);
  stl1_ = SwinLayer(store, prefix + ".stl1", c, heads, /*shifted=*/true, rng);
  conv_ = Conv2dLayer(store, prefix + ".conv", c, c, 3, 1, 1, rng);
}

Tensor Rstb::forward(const Tensor& x_nchw) const {
  const int n = x_nchw.dim(0);
  const auto& tm = tokens_.maps(n);
  Tensor t = ops::permute(x_nchw, tm.fwd, tm.inv,
                          {n * tokens_.h() * tokens_.w(), tokens_.c()});
  t = stl0_.forward(t, n, ctx_, rpb_);
  t = stl1_.forward(t, n, ctx_, rpb_);
  Tensor y = ops::permute(t, tm.inv, tm.fwd,
                          {n, tokens_.c(), tokens_.h(), tokens_.w()});
  return ops::add(conv_.forward(y), x_nchw);
}

PatchMerge::PatchMerge(ParamStore& store, const std::string& prefix, int c,
                       int out_c, Rng& rng)
    : lin_(store, prefix, 4 * c, out_c, rng),
      state_(std::make_shared<State>()),
      c_(c),
      out_c_(out_c) {}

const PatchMerge::Maps& PatchMerge::maps(int n, int h, int w) const {
  std::lock_guard<std::mutex> lock(state_->mu);
  const auto key = std::make_tuple(n, h, w);
  auto it = state_->maps.find(key);
  if (it == state_->maps.end()) {
    Maps m;
    m.in_tokens = build_token_maps(n, c_, h, w);
    m.group_rows = build_merge_row_maps(n, h, w);
    m.out_tokens = build_token_maps(n, out_c_, h / 2, w / 2);
    it = state_->maps.emplace(key, std::move(m)).first;
  }
  return it->second;
}

Tensor PatchMerge::forward(const Tensor& x_nchw) const {
  const int n = x_nchw.dim(0), h = x_nchw.dim(2), w = x_nchw.dim(3);
  const auto& m = maps(n, h, w);
  const int rows = n * h * w, orows = rows / 4;
  Tensor t = ops::permute(x_nchw, m.in_tokens.fwd, m.in_tokens.inv, {rows, c_});
  t = ops::permute_rows(t, m.group_rows.fwd, m.group_rows.inv);
  Tensor y = lin_.forward(ops::reshape(t, {orows, 4 * c_}));
  return ops::permute(y, m.out_tokens.inv, m.out_tokens.fwd,
                      {n, out_c_, h / 2, w / 2});
}

StyleTransformerLayer::StyleTransformerLayer(ParamStore& store,
                                             const std::string& prefix, int c,
                                             int heads, int latent_dim,
                                             Rng& rng)
    : affine1_(store, prefix + ".affine1", latent_dim, 2 * c, rng),
      affine2_(store, prefix + ".affine2", latent_dim, 2 * c, rng),
      attn_(store, prefix + ".attn", c, heads, rng),
      mlp_(store, prefix + ".mlp", c, rng),
      c_(c) {
  for (Tensor b : {affine1_.bias(), affine2_.bias()}) {
    auto& v = b.mutable_values();
    for (int j = 0; j < c; ++j) v[j] = 1.0;  // scale half; shift half stays 0
  }
}

Tensor StyleTransformerLayer::modulate(const Tensor& x, const Tensor& w_latent,
                                       const LinearLayer& affine,
                                       int rows_per_sample) const {
  Tensor gb = affine.forward(w_latent);  // [n, 2c]
  Tensor gamma = ops::slice_cols(gb, 0, c_);
  Tensor beta = ops::slice_cols(gb, c_, 2 * c_);
  return ops::scale_shift_rows(x, gamma, beta, rows_per_sample);
}

Tensor StyleTransformerLayer::forward(const Tensor& tokens,
                                      const Tensor& w_latent, int n,
                                      const WindowContext& ctx,
                                      const Tensor& rpb) const {
  const int rps = tokens.dim(0) / n;
  Tensor h = modulate(ops::layer_norm(tokens, Tensor(), Tensor()), w_latent,
                      affine1_, rps);
  Tensor x = ops::add(tokens, attn_.forward_split(h, n, ctx, rpb));
  Tensor h2 = modulate(ops::layer_norm(x, Tensor(), Tensor()), w_latent,
                       affine2_, rps);
  return ops::add(x, mlp_.forward(h2));
}

Cwss::Cwss(ParamStore& store, const std::string& prefix, int enc_c, int dec_c,
           Rng& rng)
    : conv_(store, prefix + ".conv", enc_c, dec_c, 3, 1, 1, rng, /*gain=*/0.0),
      dec_c_(dec_c) {
  if (dec_c % 2 != 0)
    throw std::logic_error("feature fusion needs an even channel count");
  auto& b = conv_.bias().mutable_values();
  for (int j = 0; j < dec_c / 2; ++j) b[j] = 1.0;  // alpha half; beta stays 0
}

Tensor Cwss::forward(const Tensor& f_dec, const Tensor& f_enc) const {
  const int half = dec_c_ / 2;
  Tensor ab = conv_.forward(f_enc);
  Tensor alpha = ops::slice_channels(ab, 0, half);
  Tensor beta = ops::slice_channels(ab, half, dec_c_);
  Tensor keep = ops::slice_channels(f_dec, 0, half);
  Tensor mod =
      ops::add(ops::mul(ops::slice_channels(f_dec, half, dec_c_), alpha), beta);
  return ops::concat_channels(keep, mod);
}

DecoderLevel::DecoderLevel(ParamStore& store, const std::string& prefix, int c,
                           int next_c, int heads, int edge, int ws,
                           int latent_dim, bool final_level, Rng& rng)
    : ctx_(edge, edge, ws), tokens_(c, edge, edge), final_(final_level) {
  rpb_ = store.create(prefix + ".rpb", {heads, ctx_.rel_table_size()});
  init_normal(rpb_, rng, 0.02);
  style0_ = StyleTransformerLayer(store, prefix + ".style0", c, heads,
                                  latent_dim, rng);
  style1_ = StyleTransformerLayer(store, prefix + ".style1", c, heads,
                                  latent_dim, rng);
  if (!final_level)
    up_proj_ = Conv2dLayer(store, prefix + ".up", c, next_c, 1, 1, 0, rng);
}

Tensor DecoderLevel::forward(const Tensor& x_nchw, const Tensor& w0,
                             const Tensor& w1, const Cwss* fusion,
                             const Tensor& f_enc) const {
  const int n = x_nchw.dim(0);
  const auto& tm = tokens_.maps(n);
  Tensor t = ops::permute(x_nchw, tm.fwd, tm.inv,
                          {n * tokens_.h() * tokens_.w(), tokens_.c()});
  t = style0_.forward(t, w0, n, ctx_, rpb_);
  t = style1_.forward(t, w1, n, ctx_, rpb_);
  Tensor y = ops::permute(t, tm.inv, tm.fwd,
                          {n, tokens_.c(), tokens_.h(), tokens_.w()});
  if (fusion != nullptr && f_enc.defined()) y = fusion->forward(y, f_enc);
  if (final_) return y;
  return up_proj_.forward(ops::bilinear_up2(y));
}

}  // namespace tmrsr
