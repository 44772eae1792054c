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

#include "tmrsr/ops.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "tmrsr/common.hpp"
#include "tmrsr/kernels.hpp"

namespace tmrsr::ops {
namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Tensor::Node>;
using Buffer = std::shared_ptr<std::vector<Scalar>>;

Buffer alloc(size_t n) { return std::make_shared<std::vector<Scalar>>(n); }

bool any_requires_grad(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents) {
    if (p && p->requires_grad) return true;
  }
  return false;
}

// Assembles the output node; drops graph links when grads are off so that
// inference runs free of tape overhead.
Tensor make_op(std::vector<int> shape, Buffer values,
               std::vector<NodePtr> parents,
               std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  if (grad_enabled() && any_requires_grad(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor(std::move(n));
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("tensor op: " + what);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined() && a.shape() == b.shape(),
        std::string(op) + ": operands must share a shape");
}

size_t product(const std::vector<int>& dims) {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  return n;
}

}  // namespace

// --------------------------------------------------------------------------
// Elementwise
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  return make_op(a.shape(), out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), n](Node& self) {
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (size_t i = 0; i < n; ++i) pb->grad[i] += self.grad[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
  return make_op(a.shape(), out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), n](Node& self) {
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (size_t i = 0; i < n; ++i) pb->grad[i] -= self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  return make_op(a.shape(), out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), va = a.node()->values,
                  vb = b.node()->values, n](Node& self) {
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     for (size_t i = 0; i < n; ++i)
                       pa->grad[i] += self.grad[i] * (*vb)[i];
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (size_t i = 0; i < n; ++i)
                       pb->grad[i] += self.grad[i] * (*va)[i];
                   }
                 });
}

Tensor scale(const Tensor& a, Scalar s) {
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] * s;
  return make_op(a.shape(), out, {a.node()},
                 [pa = a.node(), s, n](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (size_t i = 0; i < n; ++i)
                     pa->grad[i] += self.grad[i] * s;
                 });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] + s;
  return make_op(a.shape(), out, {a.node()}, [pa = a.node(), n](Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
  });
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) ov[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  return make_op(a.shape(), out, {a.node()},
                 [pa = a.node(), va = a.node()->values, slope, n](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (size_t i = 0; i < n; ++i)
                     pa->grad[i] +=
                         self.grad[i] * ((*va)[i] > 0.0 ? 1.0 : slope);
                 });
}

Tensor gelu(const Tensor& a) {
  constexpr Scalar kInvSqrt2 = 0.7071067811865475244;
  constexpr Scalar kInvSqrt2Pi = 0.3989422804014326779;
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) {
    const Scalar x = av[i];
    ov[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_op(a.shape(), out, {a.node()},
                 [pa = a.node(), va = a.node()->values, n](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (size_t i = 0; i < n; ++i) {
                     const Scalar x = (*va)[i];
                     const Scalar cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                     const Scalar pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                     pa->grad[i] += self.grad[i] * (cdf + x * pdf);
                   }
                 });
}

Tensor softplus(const Tensor& a) {
  const size_t n = a.numel();
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (size_t i = 0; i < n; ++i) {
    const Scalar x = av[i];
    ov[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return make_op(a.shape(), out, {a.node()},
                 [pa = a.node(), va = a.node()->values, n](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (size_t i = 0; i < n; ++i) {
                     const Scalar x = (*va)[i];
                     const Scalar sig = x >= 0.0
                                            ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x));
                     pa->grad[i] += self.grad[i] * sig;
                   }
                 });
}

// --------------------------------------------------------------------------
// Reductions
// --------------------------------------------------------------------------

Tensor mean_all(const Tensor& a) {
  const size_t n = a.numel();
  check(n > 0, "mean_all: empty tensor");
  const Scalar* av = a.values().data();
  Scalar sum = 0.0;
  for (size_t i = 0; i < n; ++i) sum += av[i];
  auto out = alloc(1);
  (*out)[0] = sum / static_cast<Scalar>(n);
  return make_op({1}, out, {a.node()}, [pa = a.node(), n](Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const Scalar g = self.grad[0] / static_cast<Scalar>(n);
    for (size_t i = 0; i < n; ++i) pa->grad[i] += g;
  });
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  check_same_shape("l1_loss", a, b);
  const size_t n = a.numel();
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar sum = 0.0;
  for (size_t i = 0; i < n; ++i) sum += std::abs(av[i] - bv[i]);
  auto out = alloc(1);
  (*out)[0] = sum / static_cast<Scalar>(n);
  return make_op({1}, out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), va = a.node()->values,
                  vb = b.node()->values, n](Node& self) {
                   const Scalar g = self.grad[0] / static_cast<Scalar>(n);
                   for (size_t i = 0; i < n; ++i) {
                     const Scalar d = (*va)[i] - (*vb)[i];
                     const Scalar s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                     if (pa->requires_grad) {
                       pa->ensure_grad();
                       pa->grad[i] += g * s;
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       pb->grad[i] -= g * s;
                     }
                   }
                 });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check_same_shape("mse_loss", a, b);
  const size_t n = a.numel();
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Scalar d = av[i] - bv[i];
    sum += d * d;
  }
  auto out = alloc(1);
  (*out)[0] = sum / static_cast<Scalar>(n);
  return make_op({1}, out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), va = a.node()->values,
                  vb = b.node()->values, n](Node& self) {
                   const Scalar g = 2.0 * self.grad[0] / static_cast<Scalar>(n);
                   for (size_t i = 0; i < n; ++i) {
                     const Scalar d = (*va)[i] - (*vb)[i];
                     if (pa->requires_grad) {
                       pa->ensure_grad();
                       pa->grad[i] += g * d;
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       pb->grad[i] -= g * d;
                     }
                   }
                 });
}

// --------------------------------------------------------------------------
// Structure
// --------------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  check(product(shape) == a.numel(), "reshape: element count mismatch");
  // Zero-copy view: shares the value buffer with the parent.
  return make_op(std::move(shape), a.node()->values, {a.node()},
                 [pa = a.node(), n = a.numel()](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
                 });
}

Tensor permute(const Tensor& a, IndexMap out_to_in, IndexMap in_to_out,
               std::vector<int> out_shape) {
  const size_t n = a.numel();
  check(product(out_shape) == n && out_to_in && in_to_out &&
            out_to_in->size() == n && in_to_out->size() == n,
        "permute: map/shape mismatch");
  auto out = alloc(n);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  const int* fwd = out_to_in->data();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    ov[i] = av[fwd[i]];
  return make_op(std::move(out_shape), out, {a.node()},
                 [pa = a.node(), in_to_out, n](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   const int* inv = in_to_out->data();
#pragma omp parallel for schedule(static)
                   for (long long j = 0; j < static_cast<long long>(n); ++j)
                     pa->grad[j] += self.grad[inv[j]];
                 });
}

Tensor permute_rows(const Tensor& a, IndexMap out_to_in, IndexMap in_to_out) {
  check(a.ndim() == 2, "permute_rows: expects a matrix");
  const int m = a.dim(0);
  const int c = a.dim(1);
  check(out_to_in && in_to_out && static_cast<int>(out_to_in->size()) == m &&
            static_cast<int>(in_to_out->size()) == m,
        "permute_rows: map size mismatch");
  auto out = alloc(a.numel());
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  const int* fwd = out_to_in->data();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r)
    std::memcpy(ov + static_cast<size_t>(r) * c,
                av + static_cast<size_t>(fwd[r]) * c, sizeof(Scalar) * c);
  return make_op(a.shape(), out, {a.node()},
                 [pa = a.node(), in_to_out, m, c](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   const int* inv = in_to_out->data();
#pragma omp parallel for schedule(static)
                   for (int r = 0; r < m; ++r) {
                     Scalar* dst = pa->grad.data() + static_cast<size_t>(r) * c;
                     const Scalar* src =
                         self.grad.data() + static_cast<size_t>(inv[r]) * c;
                     for (int j = 0; j < c; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) &&
            a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels: incompatible shapes");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const size_t hw = static_cast<size_t>(a.dim(2)) * a.dim(3);
  const size_t sa = ca * hw, sb = cb * hw, so = sa + sb;
  auto out = alloc(a.numel() + b.numel());
  const Scalar* av = a.values().data();
  const Scalar* bv = b.values().data();
  Scalar* ov = out->data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(ov + i * so, av + i * sa, sizeof(Scalar) * sa);
    std::memcpy(ov + i * so + sa, bv + i * sb, sizeof(Scalar) * sb);
  }
  return make_op({n, ca + cb, a.dim(2), a.dim(3)}, out, {a.node(), b.node()},
                 [pa = a.node(), pb = b.node(), n, sa, sb, so](Node& self) {
                   for (int i = 0; i < n; ++i) {
                     const Scalar* g = self.grad.data() + i * so;
                     if (pa->requires_grad) {
                       pa->ensure_grad();
                       Scalar* dst = pa->grad.data() + i * sa;
                       for (size_t j = 0; j < sa; ++j) dst[j] += g[j];
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       Scalar* dst = pb->grad.data() + i * sb;
                       for (size_t j = 0; j < sb; ++j) dst[j] += g[sa + j];
                     }
                   }
                 });
}

Tensor slice_channels(const Tensor& a, int c0, int c1) {
  check(a.ndim() == 4 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1),
        "slice_channels: bad range");
  const int n = a.dim(0), c = a.dim(1), cs = c1 - c0;
  const size_t hw = static_cast<size_t>(a.dim(2)) * a.dim(3);
  auto out = alloc(static_cast<size_t>(n) * cs * hw);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
  for (int i = 0; i < n; ++i)
    std::memcpy(ov + i * cs * hw, av + (static_cast<size_t>(i) * c + c0) * hw,
                sizeof(Scalar) * cs * hw);
  return make_op({n, cs, a.dim(2), a.dim(3)}, out, {a.node()},
                 [pa = a.node(), n, c, c0, cs, hw](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (int i = 0; i < n; ++i) {
                     Scalar* dst =
                         pa->grad.data() + (static_cast<size_t>(i) * c + c0) * hw;
                     const Scalar* g =
                         self.grad.data() + static_cast<size_t>(i) * cs * hw;
                     for (size_t j = 0; j < cs * hw; ++j) dst[j] += g[j];
                   }
                 });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check(a.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1),
        "slice_cols: bad range");
  const int m = a.dim(0), c = a.dim(1), cs = c1 - c0;
  auto out = alloc(static_cast<size_t>(m) * cs);
  const Scalar* av = a.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r)
    std::memcpy(ov + static_cast<size_t>(r) * cs,
                av + static_cast<size_t>(r) * c + c0, sizeof(Scalar) * cs);
  return make_op({m, cs}, out, {a.node()},
                 [pa = a.node(), m, c, c0, cs](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
#pragma omp parallel for schedule(static)
                   for (int r = 0; r < m; ++r) {
                     Scalar* dst =
                         pa->grad.data() + static_cast<size_t>(r) * c + c0;
                     const Scalar* g =
                         self.grad.data() + static_cast<size_t>(r) * cs;
                     for (int j = 0; j < cs; ++j) dst[j] += g[j];
                   }
                 });
}

Tensor broadcast_batch(const Tensor& a, int n) {
  check(n >= 1, "broadcast_batch: n must be positive");
  const size_t sz = a.numel();
  auto out = alloc(sz * n);
  Scalar* ov = out->data();
  for (int i = 0; i < n; ++i)
    std::memcpy(ov + i * sz, a.values().data(), sizeof(Scalar) * sz);
  std::vector<int> shape;
  shape.push_back(n);
  for (int d : a.shape()) shape.push_back(d);
  return make_op(std::move(shape), out, {a.node()},
                 [pa = a.node(), n, sz](Node& self) {
                   if (!pa->requires_grad) return;
                   pa->ensure_grad();
                   for (int i = 0; i < n; ++i) {
                     const Scalar* g = self.grad.data() + i * sz;
                     for (size_t j = 0; j < sz; ++j) pa->grad[j] += g[j];
                   }
                 });
}

// --------------------------------------------------------------------------
// Dense / normalization
// --------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(0),
        "linear: shape mismatch");
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  check(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == n),
        "linear: bias shape mismatch");
  auto out = alloc(static_cast<size_t>(m) * n);
  kern::gemm_nn(m, n, k, 1.0, x.values().data(), w.values().data(), 0.0,
                out->data());
  if (bias.defined()) {
    const Scalar* bv = bias.values().data();
    Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < n; ++j) ov[static_cast<size_t>(r) * n + j] += bv[j];
  }
  std::vector<NodePtr> parents = {x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  NodePtr pbias = bias.defined() ? bias.node() : nullptr;
  return make_op(
      {m, n}, out, std::move(parents),
      [px = x.node(), pw = w.node(), pbias, vx = x.node()->values,
       vw = w.node()->values, m, n, k](Node& self) {
        const Scalar* g = self.grad.data();
        if (px->requires_grad) {
          px->ensure_grad();
          kern::gemm_nt(m, k, n, 1.0, g, vw->data(), 1.0, px->grad.data());
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          kern::gemm_tn(k, n, m, 1.0, vx->data(), g, 1.0, pw->grad.data());
        }
        if (pbias && pbias->requires_grad) {
          pbias->ensure_grad();
          for (int r = 0; r < m; ++r)
            for (int j = 0; j < n; ++j)
              pbias->grad[j] += g[static_cast<size_t>(r) * n + j];
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Scalar eps) {
  check(x.ndim() >= 1, "layer_norm: rank");
  const int c = x.dim(x.ndim() - 1);
  const int m = static_cast<int>(x.numel()) / c;
  const bool affine = gamma.defined();
  check(affine == beta.defined(), "layer_norm: gamma/beta must pair");
  if (affine)
    check(gamma.numel() == static_cast<size_t>(c) &&
              beta.numel() == static_cast<size_t>(c),
          "layer_norm: affine shape mismatch");
  auto out = alloc(x.numel());
  auto xhat = alloc(x.numel());
  auto inv_std = alloc(m);
  const Scalar* xv = x.values().data();
  const Scalar* gv = affine ? gamma.values().data() : nullptr;
  const Scalar* bv = affine ? beta.values().data() : nullptr;
  Scalar* ov = out->data();
  Scalar* hv = xhat->data();
  Scalar* sv = inv_std->data();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    const Scalar* row = xv + static_cast<size_t>(r) * c;
    Scalar mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    Scalar var = 0.0;
    for (int j = 0; j < c; ++j) {
      const Scalar d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    const Scalar inv = 1.0 / std::sqrt(var + eps);
    sv[r] = inv;
    Scalar* hrow = hv + static_cast<size_t>(r) * c;
    Scalar* orow = ov + static_cast<size_t>(r) * c;
    for (int j = 0; j < c; ++j) {
      hrow[j] = (row[j] - mean) * inv;
      orow[j] = affine ? hrow[j] * gv[j] + bv[j] : hrow[j];
    }
  }
  std::vector<NodePtr> parents = {x.node()};
  NodePtr pg = nullptr, pb = nullptr;
  if (affine) {
    pg = gamma.node();
    pb = beta.node();
    parents.push_back(pg);
    parents.push_back(pb);
  }
  Buffer vgamma = affine ? gamma.node()->values : nullptr;
  return make_op(
      x.shape(), out, std::move(parents),
      [px = x.node(), pg, pb, vgamma, xhat, inv_std, m, c](Node& self) {
        const Scalar* g = self.grad.data();
        const Scalar* hv = xhat->data();
        if (pg && pg->requires_grad) {
          pg->ensure_grad();
          pb->ensure_grad();
          for (int r = 0; r < m; ++r) {
            const Scalar* grow = g + static_cast<size_t>(r) * c;
            const Scalar* hrow = hv + static_cast<size_t>(r) * c;
            for (int j = 0; j < c; ++j) {
              pg->grad[j] += grow[j] * hrow[j];
              pb->grad[j] += grow[j];
            }
          }
        }
        if (!px->requires_grad) return;
        px->ensure_grad();
        const Scalar* gv = vgamma ? vgamma->data() : nullptr;
#pragma omp parallel for schedule(static)
        for (int r = 0; r < m; ++r) {
          const Scalar* grow = g + static_cast<size_t>(r) * c;
          const Scalar* hrow = hv + static_cast<size_t>(r) * c;
          Scalar sum_g = 0.0, sum_gh = 0.0;
          for (int j = 0; j < c; ++j) {
            const Scalar gh = gv ? grow[j] * gv[j] : grow[j];
            sum_g += gh;
            sum_gh += gh * hrow[j];
          }
          const Scalar mg = sum_g / c;
          const Scalar mgh = sum_gh / c;
          const Scalar inv = (*inv_std)[r];
          Scalar* dst = px->grad.data() + static_cast<size_t>(r) * c;
          for (int j = 0; j < c; ++j) {
            const Scalar gh = gv ? grow[j] * gv[j] : grow[j];
            dst[j] += inv * (gh - mg - hrow[j] * mgh);
          }
        }
      });
}

Tensor scale_shift_rows(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, int rows_per_sample) {
  check(x.ndim() == 2 && gamma.ndim() == 2 && beta.ndim() == 2,
        "scale_shift_rows: rank");
  const int m = x.dim(0), c = x.dim(1);
  check(rows_per_sample > 0 && m % rows_per_sample == 0,
        "scale_shift_rows: row grouping mismatch");
  const int ns = m / rows_per_sample;
  check(gamma.dim(0) == ns && gamma.dim(1) == c && beta.dim(0) == ns &&
            beta.dim(1) == c,
        "scale_shift_rows: modulation shape mismatch");
  auto out = alloc(x.numel());
  const Scalar* xv = x.values().data();
  const Scalar* gv = gamma.values().data();
  const Scalar* bv = beta.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m; ++r) {
    const int s = r / rows_per_sample;
    const Scalar* grow = gv + static_cast<size_t>(s) * c;
    const Scalar* brow = bv + static_cast<size_t>(s) * c;
    const Scalar* xrow = xv + static_cast<size_t>(r) * c;
    Scalar* orow = ov + static_cast<size_t>(r) * c;
    for (int j = 0; j < c; ++j) orow[j] = xrow[j] * grow[j] + brow[j];
  }
  return make_op(
      x.shape(), out, {x.node(), gamma.node(), beta.node()},
      [px = x.node(), pg = gamma.node(), pb = beta.node(),
       vx = x.node()->values, vg = gamma.node()->values, m, c,
       rows_per_sample, ns](Node& self) {
        const Scalar* g = self.grad.data();
        if (px->requires_grad) {
          px->ensure_grad();
          const Scalar* gv = vg->data();
#pragma omp parallel for schedule(static)
          for (int r = 0; r < m; ++r) {
            const int s = r / rows_per_sample;
            const Scalar* grow = g + static_cast<size_t>(r) * c;
            const Scalar* mrow = gv + static_cast<size_t>(s) * c;
            Scalar* dst = px->grad.data() + static_cast<size_t>(r) * c;
            for (int j = 0; j < c; ++j) dst[j] += grow[j] * mrow[j];
          }
        }
        if (pg->requires_grad || pb->requires_grad) {
          if (pg->requires_grad) pg->ensure_grad();
          if (pb->requires_grad) pb->ensure_grad();
          const Scalar* xv = vx->data();
#pragma omp parallel for schedule(static)
          for (int s = 0; s < ns; ++s) {
            for (int r = s * rows_per_sample; r < (s + 1) * rows_per_sample;
                 ++r) {
              const Scalar* grow = g + static_cast<size_t>(r) * c;
              const Scalar* xrow = xv + static_cast<size_t>(r) * c;
              for (int j = 0; j < c; ++j) {
                if (pg->requires_grad)
                  pg->grad[static_cast<size_t>(s) * c + j] += grow[j] * xrow[j];
                if (pb->requires_grad)
                  pb->grad[static_cast<size_t>(s) * c + j] += grow[j];
              }
            }
          }
        }
      });
}

Tensor softmax_lastdim(const Tensor& x) {
  check(x.ndim() >= 1, "softmax_lastdim: rank");
  const int c = x.dim(x.ndim() - 1);
  const int m = static_cast<int>(x.numel()) / c;
  auto out = alloc(x.numel());
  kern::softmax_rows(x.values().data(), m, c, out->data());
  return make_op(x.shape(), out, {x.node()},
                 [px = x.node(), pvals = out, m, c](Node& self) {
                   if (!px->requires_grad) return;
                   px->ensure_grad();
                   const Scalar* p = pvals->data();
                   const Scalar* g = self.grad.data();
#pragma omp parallel for schedule(static)
                   for (int r = 0; r < m; ++r) {
                     const Scalar* prow = p + static_cast<size_t>(r) * c;
                     const Scalar* grow = g + static_cast<size_t>(r) * c;
                     Scalar dot = 0.0;
                     for (int j = 0; j < c; ++j) dot += prow[j] * grow[j];
                     Scalar* dst = px->grad.data() + static_cast<size_t>(r) * c;
                     for (int j = 0; j < c; ++j)
                       dst[j] += prow[j] * (grow[j] - dot);
                   }
                 });
}

// --------------------------------------------------------------------------
// Convolution / spatial
// --------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad) {
  check(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1),
        "conv2d: shape mismatch");
  const int n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(!bias.defined() || bias.numel() == static_cast<size_t>(oc),
        "conv2d: bias shape mismatch");
  const int oh = kern::conv_out_size(h, kh, stride, pad);
  const int ow = kern::conv_out_size(wd, kw, stride, pad);
  check(oh > 0 && ow > 0, "conv2d: output collapses to zero size");
  const size_t in_sz = static_cast<size_t>(ic) * h * wd;
  const size_t out_sz = static_cast<size_t>(oc) * oh * ow;
  const int p = oh * ow;
  const int ckk = ic * kh * kw;
  const bool fast1x1 = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
  auto out = alloc(static_cast<size_t>(n) * out_sz);
  const Scalar* xv = x.values().data();
  const Scalar* wv = w.values().data();
  {
    std::vector<Scalar> cols;
    if (!fast1x1) cols.resize(static_cast<size_t>(p) * ckk);
    for (int i = 0; i < n; ++i) {
      const Scalar* xi = xv + i * in_sz;
      Scalar* yi = out->data() + i * out_sz;
      if (fast1x1) {
        kern::gemm_nn(oc, p, ic, 1.0, wv, xi, 0.0, yi);
      } else {
        kern::im2col(xi, ic, h, wd, kh, kw, stride, pad, cols.data());
        kern::gemm_nt(oc, p, ckk, 1.0, wv, cols.data(), 0.0, yi);
      }
    }
  }
  if (bias.defined()) {
    const Scalar* bv = bias.values().data();
    Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n) * oc; ++i) {
      Scalar* row = ov + i * p;
      const Scalar b = bv[i % oc];
      for (int j = 0; j < p; ++j) row[j] += b;
    }
  }
  std::vector<NodePtr> parents = {x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  NodePtr pbias = bias.defined() ? bias.node() : nullptr;
  return make_op(
      {n, oc, oh, ow}, out, std::move(parents),
      [px = x.node(), pw = w.node(), pbias, vx = x.node()->values,
       vw = w.node()->values, n, ic, h, wd, oc, kh, kw, stride, pad, oh, ow,
       in_sz, out_sz, p, ckk, fast1x1](Node& self) {
        const Scalar* g = self.grad.data();
        const Scalar* xv = vx->data();
        const Scalar* wv = vw->data();
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        std::vector<Scalar> cols, dcols;
        if (!fast1x1) {
          cols.resize(static_cast<size_t>(p) * ckk);
          dcols.resize(static_cast<size_t>(p) * ckk);
        }
        for (int i = 0; i < n; ++i) {
          const Scalar* gi = g + i * out_sz;
          const Scalar* xi = xv + i * in_sz;
          if (fast1x1) {
            if (px->requires_grad)
              kern::gemm_tn(ic, p, oc, 1.0, wv, gi, 1.0,
                            px->grad.data() + i * in_sz);
            if (pw->requires_grad)
              kern::gemm_nt(oc, ic, p, 1.0, gi, xi, 1.0, pw->grad.data());
          } else {
            if (pw->requires_grad || px->requires_grad) {
              // Recompute the unfolded input rather than keeping it alive
              // from the forward pass: trades FLOPs for tape memory.
              if (pw->requires_grad) {
                kern::im2col(xi, ic, h, wd, kh, kw, stride, pad, cols.data());
                kern::gemm_nn(oc, ckk, p, 1.0, gi, cols.data(), 1.0,
                              pw->grad.data());
              }
              if (px->requires_grad) {
                kern::gemm_tn(p, ckk, oc, 1.0, gi, wv, 0.0, dcols.data());
                kern::col2im(dcols.data(), ic, h, wd, kh, kw, stride, pad,
                             px->grad.data() + i * in_sz);
              }
            }
          }
        }
        if (pbias && pbias->requires_grad) {
          pbias->ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int c = 0; c < oc; ++c) {
              const Scalar* row = g + i * out_sz + static_cast<size_t>(c) * p;
              Scalar s = 0.0;
              for (int j = 0; j < p; ++j) s += row[j];
              pbias->grad[c] += s;
            }
        }
      });
}

Tensor conv2d_transpose(const Tensor& g, const Tensor& w, int stride, int pad,
                        int out_h, int out_w) {
  check(g.ndim() == 4 && w.ndim() == 4 && g.dim(1) == w.dim(0),
        "conv2d_transpose: shape mismatch");
  const int n = g.dim(0), oc = w.dim(0), ic = w.dim(1);
  const int kh = w.dim(2), kw = w.dim(3);
  const int gh = g.dim(2), gw = g.dim(3);
  check(kern::conv_out_size(out_h, kh, stride, pad) == gh &&
            kern::conv_out_size(out_w, kw, stride, pad) == gw,
        "conv2d_transpose: geometry inconsistent with forward convolution");
  const size_t g_sz = static_cast<size_t>(oc) * gh * gw;
  const size_t z_sz = static_cast<size_t>(ic) * out_h * out_w;
  const int gp = gh * gw;
  const int ckk = ic * kh * kw;
  auto out = alloc(static_cast<size_t>(n) * z_sz);  // zero-initialized
  const Scalar* gv = g.values().data();
  const Scalar* wv = w.values().data();
  {
    std::vector<Scalar> dcols(static_cast<size_t>(gp) * ckk);
    for (int i = 0; i < n; ++i) {
      kern::gemm_tn(gp, ckk, oc, 1.0, gv + i * g_sz, wv, 0.0, dcols.data());
      kern::col2im(dcols.data(), ic, out_h, out_w, kh, kw, stride, pad,
                   out->data() + i * z_sz);
    }
  }
  return make_op(
      {n, ic, out_h, out_w}, out, {g.node(), w.node()},
      [pg = g.node(), pw = w.node(), vg = g.node()->values,
       vw = w.node()->values, n, oc, ic, kh, kw, stride, pad, out_h, out_w,
       g_sz, z_sz, gp, ckk](Node& self) {
        const Scalar* dz = self.grad.data();
        if (pg->requires_grad) pg->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        std::vector<Scalar> cols(static_cast<size_t>(gp) * ckk);
        for (int i = 0; i < n; ++i) {
          kern::im2col(dz + i * z_sz, ic, out_h, out_w, kh, kw, stride, pad,
                       cols.data());
          if (pg->requires_grad)
            kern::gemm_nt(oc, gp, ckk, 1.0, vw->data(), cols.data(), 1.0,
                          pg->grad.data() + i * g_sz);
          if (pw->requires_grad)
            kern::gemm_nn(oc, ckk, gp, 1.0, vg->data() + i * g_sz, cols.data(),
                          1.0, pw->grad.data());
        }
      });
}

Tensor maxpool2x2(const Tensor& x) {
  check(x.ndim() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
        "maxpool2x2: spatial dims must be even");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  const size_t osz = static_cast<size_t>(n) * c * oh * ow;
  auto out = alloc(osz);
  auto argmax = std::make_shared<std::vector<int>>(osz);
  const Scalar* xv = x.values().data();
  Scalar* ov = out->data();
  int* am = argmax->data();
#pragma omp parallel for schedule(static)
  for (long long pc = 0; pc < static_cast<long long>(n) * c; ++pc) {
    const Scalar* plane = xv + pc * h * w;
    Scalar* oplane = ov + pc * oh * ow;
    int* aplane = am + pc * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        int best = (2 * oy) * w + 2 * ox;
        Scalar bv = plane[best];
        const int cand[3] = {(2 * oy) * w + 2 * ox + 1,
                             (2 * oy + 1) * w + 2 * ox,
                             (2 * oy + 1) * w + 2 * ox + 1};
        for (int idx : cand)
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        oplane[oy * ow + ox] = bv;
        aplane[oy * ow + ox] = static_cast<int>(pc * h * w) + best;
      }
  }
  return make_op({n, c, oh, ow}, out, {x.node()},
                 [px = x.node(), argmax, osz](Node& self) {
                   if (!px->requires_grad) return;
                   px->ensure_grad();
                   const int* am = argmax->data();
                   for (size_t i = 0; i < osz; ++i)
                     px->grad[am[i]] += self.grad[i];
                 });
}

namespace {

// Half-pixel 2x upsampling stencils along one axis: out o draws from inputs
// (i0, i1) with weights (w0, w1); indices are edge-clamped.
struct UpAxis {
  std::vector<std::array<int, 2>> idx;
  std::vector<std::array<Scalar, 2>> wgt;
  // For backward: per input index, the (output, weight) pairs that read it.
  std::vector<std::vector<std::pair<int, Scalar>>> inverse;
};

UpAxis build_up_axis(int in) {
  UpAxis ax;
  const int out = 2 * in;
  ax.idx.resize(out);
  ax.wgt.resize(out);
  ax.inverse.resize(in);
  for (int o = 0; o < out; ++o) {
    const Scalar s = 0.5 * (o + 0.5) - 0.5;
    int i0 = static_cast<int>(std::floor(s));
    const Scalar f = s - i0;
    int i1 = i0 + 1;
    i0 = std::min(std::max(i0, 0), in - 1);
    i1 = std::min(std::max(i1, 0), in - 1);
    ax.idx[o] = {i0, i1};
    ax.wgt[o] = {1.0 - f, f};
  }
  for (int o = 0; o < out; ++o)
    for (int t = 0; t < 2; ++t)
      if (ax.wgt[o][t] != 0.0)
        ax.inverse[ax.idx[o][t]].push_back({o, ax.wgt[o][t]});
  return ax;
}

}  // namespace

Tensor bilinear_up2(const Tensor& x) {
  check(x.ndim() == 4, "bilinear_up2: rank");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  auto ay = std::make_shared<UpAxis>(build_up_axis(h));
  auto axx = std::make_shared<UpAxis>(build_up_axis(w));
  auto out = alloc(static_cast<size_t>(n) * c * oh * ow);
  const Scalar* xv = x.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (long long pc = 0; pc < static_cast<long long>(n) * c; ++pc) {
    const Scalar* plane = xv + pc * h * w;
    Scalar* oplane = ov + pc * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& iy = ay->idx[oy];
      const auto& wy = ay->wgt[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const auto& ix = axx->idx[ox];
        const auto& wx = axx->wgt[ox];
        oplane[static_cast<size_t>(oy) * ow + ox] =
            wy[0] * (wx[0] * plane[iy[0] * w + ix[0]] +
                     wx[1] * plane[iy[0] * w + ix[1]]) +
            wy[1] * (wx[0] * plane[iy[1] * w + ix[0]] +
                     wx[1] * plane[iy[1] * w + ix[1]]);
      }
    }
  }
  return make_op(
      {n, c, oh, ow}, out, {x.node()},
      [px = x.node(), ay, axx, n, c, h, w, oh, ow](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const Scalar* g = self.grad.data();
#pragma omp parallel for schedule(static)
        for (long long pc = 0; pc < static_cast<long long>(n) * c; ++pc) {
          const Scalar* gplane = g + pc * oh * ow;
          Scalar* dplane = px->grad.data() + pc * h * w;
          for (int y = 0; y < h; ++y)
            for (int x2 = 0; x2 < w; ++x2) {
              Scalar acc = 0.0;
              for (const auto& [oy, wyv] : ay->inverse[y])
                for (const auto& [ox, wxv] : axx->inverse[x2])
                  acc += wyv * wxv * gplane[static_cast<size_t>(oy) * ow + ox];
              dplane[y * w + x2] += acc;
            }
        }
      });
}

// --------------------------------------------------------------------------
// Attention
// --------------------------------------------------------------------------

Tensor attn_logits(const Tensor& q, const Tensor& k, int heads, Scalar s) {
  check(q.ndim() == 3 && k.ndim() == 3 && q.shape() == k.shape(),
        "attn_logits: q/k shape mismatch");
  const int b = q.dim(0), t = q.dim(1), c = q.dim(2);
  check(heads > 0 && c % heads == 0, "attn_logits: heads must divide channels");
  const int hd = c / heads;
  auto out = alloc(static_cast<size_t>(b) * heads * t * t);
  const Scalar* qv = q.values().data();
  const Scalar* kv = k.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    const Scalar* qb = qv + static_cast<size_t>(bi) * t * c;
    const Scalar* kb = kv + static_cast<size_t>(bi) * t * c;
    Scalar* ob = ov + static_cast<size_t>(bi) * heads * t * t;
    for (int hh = 0; hh < heads; ++hh)
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
          const Scalar* qr = qb + static_cast<size_t>(i) * c + hh * hd;
          const Scalar* kr = kb + static_cast<size_t>(j) * c + hh * hd;
          Scalar dot = 0.0;
          for (int d = 0; d < hd; ++d) dot += qr[d] * kr[d];
          ob[(static_cast<size_t>(hh) * t + i) * t + j] = s * dot;
        }
  }
  return make_op(
      {b, heads, t, t}, out, {q.node(), k.node()},
      [pq = q.node(), pk = k.node(), vq = q.node()->values,
       vk = k.node()->values, b, t, c, heads, hd, s](Node& self) {
        if (pq->requires_grad) pq->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        const Scalar* g = self.grad.data();
        const Scalar* qv = vq->data();
        const Scalar* kv = vk->data();
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < b; ++bi) {
          const Scalar* gb = g + static_cast<size_t>(bi) * heads * t * t;
          const Scalar* qb = qv + static_cast<size_t>(bi) * t * c;
          const Scalar* kb = kv + static_cast<size_t>(bi) * t * c;
          for (int hh = 0; hh < heads; ++hh)
            for (int i = 0; i < t; ++i)
              for (int j = 0; j < t; ++j) {
                const Scalar gij =
                    s * gb[(static_cast<size_t>(hh) * t + i) * t + j];
                if (gij == 0.0) continue;
                if (pq->requires_grad) {
                  Scalar* dq = pq->grad.data() +
                               static_cast<size_t>(bi) * t * c +
                               static_cast<size_t>(i) * c + hh * hd;
                  const Scalar* kr =
                      kb + static_cast<size_t>(j) * c + hh * hd;
                  for (int d = 0; d < hd; ++d) dq[d] += gij * kr[d];
                }
                if (pk->requires_grad) {
                  Scalar* dk = pk->grad.data() +
                               static_cast<size_t>(bi) * t * c +
                               static_cast<size_t>(j) * c + hh * hd;
                  const Scalar* qr =
                      qb + static_cast<size_t>(i) * c + hh * hd;
                  for (int d = 0; d < hd; ++d) dk[d] += gij * qr[d];
                }
              }
        }
      });
}

Tensor attn_apply(const Tensor& p, const Tensor& v, int heads) {
  check(p.ndim() == 4 && v.ndim() == 3 && p.dim(0) == v.dim(0) &&
            p.dim(1) == heads && p.dim(2) == v.dim(1) && p.dim(3) == v.dim(1),
        "attn_apply: shape mismatch");
  const int b = v.dim(0), t = v.dim(1), c = v.dim(2);
  check(c % heads == 0, "attn_apply: heads must divide channels");
  const int hd = c / heads;
  auto out = alloc(v.numel());
  const Scalar* pv = p.values().data();
  const Scalar* vv = v.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    const Scalar* pb = pv + static_cast<size_t>(bi) * heads * t * t;
    const Scalar* vb = vv + static_cast<size_t>(bi) * t * c;
    Scalar* ob = ov + static_cast<size_t>(bi) * t * c;
    std::memset(ob, 0, sizeof(Scalar) * t * c);
    for (int hh = 0; hh < heads; ++hh)
      for (int i = 0; i < t; ++i) {
        Scalar* orow = ob + static_cast<size_t>(i) * c + hh * hd;
        for (int j = 0; j < t; ++j) {
          const Scalar pij = pb[(static_cast<size_t>(hh) * t + i) * t + j];
          const Scalar* vr = vb + static_cast<size_t>(j) * c + hh * hd;
          for (int d = 0; d < hd; ++d) orow[d] += pij * vr[d];
        }
      }
  }
  return make_op(
      {b, t, c}, out, {p.node(), v.node()},
      [pp = p.node(), pvn = v.node(), vp = p.node()->values,
       vv = v.node()->values, b, t, c, heads, hd](Node& self) {
        if (pp->requires_grad) pp->ensure_grad();
        if (pvn->requires_grad) pvn->ensure_grad();
        const Scalar* g = self.grad.data();
        const Scalar* pv = vp->data();
        const Scalar* vvd = vv->data();
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < b; ++bi) {
          const Scalar* gb = g + static_cast<size_t>(bi) * t * c;
          const Scalar* pb = pv + static_cast<size_t>(bi) * heads * t * t;
          const Scalar* vb = vvd + static_cast<size_t>(bi) * t * c;
          for (int hh = 0; hh < heads; ++hh)
            for (int i = 0; i < t; ++i) {
              const Scalar* grow = gb + static_cast<size_t>(i) * c + hh * hd;
              for (int j = 0; j < t; ++j) {
                const size_t pidx =
                    static_cast<size_t>(bi) * heads * t * t +
                    (static_cast<size_t>(hh) * t + i) * t + j;
                if (pp->requires_grad) {
                  const Scalar* vr = vb + static_cast<size_t>(j) * c + hh * hd;
                  Scalar dot = 0.0;
                  for (int d = 0; d < hd; ++d) dot += grow[d] * vr[d];
                  pp->grad[pidx] += dot;
                }
                if (pvn->requires_grad) {
                  const Scalar pij = pb[(static_cast<size_t>(hh) * t + i) * t + j];
                  if (pij == 0.0) continue;
                  Scalar* dv = pvn->grad.data() +
                               static_cast<size_t>(bi) * t * c +
                               static_cast<size_t>(j) * c + hh * hd;
                  for (int d = 0; d < hd; ++d) dv[d] += pij * grow[d];
                }
              }
            }
        }
      });
}

Tensor add_rel_pos_bias(const Tensor& logits, const Tensor& table,
                        IndexMap rel_index) {
  check(logits.ndim() == 4 && table.ndim() == 2 &&
            logits.dim(1) == table.dim(0),
        "add_rel_pos_bias: shape mismatch");
  const int b = logits.dim(0), heads = logits.dim(1), t = logits.dim(2);
  check(rel_index && static_cast<int>(rel_index->size()) == t * t,
        "add_rel_pos_bias: index size mismatch");
  const int r = table.dim(1);
  auto out = alloc(logits.numel());
  const Scalar* lv = logits.values().data();
  const Scalar* tv = table.values().data();
  Scalar* ov = out->data();
  const int* rel = rel_index->data();
#pragma omp parallel for schedule(static)
  for (long long bh = 0; bh < static_cast<long long>(b) * heads; ++bh) {
    const int hh = static_cast<int>(bh % heads);
    const Scalar* trow = tv + static_cast<size_t>(hh) * r;
    const Scalar* lrow = lv + bh * t * t;
    Scalar* orow = ov + bh * t * t;
    for (int ij = 0; ij < t * t; ++ij) orow[ij] = lrow[ij] + trow[rel[ij]];
  }
  return make_op(
      logits.shape(), out, {logits.node(), table.node()},
      [pl = logits.node(), pt = table.node(), rel_index, b, heads, t,
       r](Node& self) {
        const Scalar* g = self.grad.data();
        if (pl->requires_grad) {
          pl->ensure_grad();
          const size_t n = static_cast<size_t>(b) * heads * t * t;
          for (size_t i = 0; i < n; ++i) pl->grad[i] += g[i];
        }
        if (pt->requires_grad) {
          pt->ensure_grad();
          const int* rel = rel_index->data();
#pragma omp parallel for schedule(static)
          for (int hh = 0; hh < heads; ++hh) {
            Scalar* trow = pt->grad.data() + static_cast<size_t>(hh) * r;
            for (int bi = 0; bi < b; ++bi) {
              const Scalar* grow =
                  g + (static_cast<size_t>(bi) * heads + hh) * t * t;
              for (int ij = 0; ij < t * t; ++ij) trow[rel[ij]] += grow[ij];
            }
          }
        }
      });
}

Tensor add_window_mask(const Tensor& logits, const Tensor& mask) {
  check(logits.ndim() == 4 && mask.ndim() == 3 &&
            mask.dim(1) == logits.dim(2) && mask.dim(2) == logits.dim(3),
        "add_window_mask: shape mismatch");
  const int b = logits.dim(0), heads = logits.dim(1), t = logits.dim(2);
  const int nw = mask.dim(0);
  check(b % nw == 0, "add_window_mask: batch not a multiple of window count");
  auto out = alloc(logits.numel());
  const Scalar* lv = logits.values().data();
  const Scalar* mv = mask.values().data();
  Scalar* ov = out->data();
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < b; ++bi) {
    const Scalar* mrow = mv + static_cast<size_t>(bi % nw) * t * t;
    for (int hh = 0; hh < heads; ++hh) {
      const size_t off = (static_cast<size_t>(bi) * heads + hh) * t * t;
      for (int ij = 0; ij < t * t; ++ij) ov[off + ij] = lv[off + ij] + mrow[ij];
    }
  }
  return make_op(logits.shape(), out, {logits.node()},
                 [pl = logits.node(), n = logits.numel()](Node& self) {
                   if (!pl->requires_grad) return;
                   pl->ensure_grad();
                   for (size_t i = 0; i < n; ++i) pl->grad[i] += self.grad[i];
                 });
}

// --------------------------------------------------------------------------
// Statistics
// --------------------------------------------------------------------------

Tensor gram(const Tensor& x, bool normalize) {
  check(x.ndim() == 4, "gram: expects an NCHW map");
  const int n = x.dim(0), c = x.dim(1);
  const int ml = x.dim(2) * x.dim(3);
  const Scalar norm = normalize ? 1.0 / static_cast<Scalar>(ml) : 1.0;
  auto out = alloc(static_cast<size_t>(n) * c * c);
  const Scalar* xv = x.values().data();
  for (int i = 0; i < n; ++i)
    kern::gemm_nt(c, c, ml, norm, xv + static_cast<size_t>(i) * c * ml,
                  xv + static_cast<size_t>(i) * c * ml, 0.0,
                  out->data() + static_cast<size_t>(i) * c * c);
  return make_op(
      {n, c, c}, out, {x.node()},
      [px = x.node(), vx = x.node()->values, n, c, ml, norm](Node& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const Scalar* g = self.grad.data();
        const Scalar* xv = vx->data();
        std::vector<Scalar> sym(static_cast<size_t>(c) * c);
        for (int i = 0; i < n; ++i) {
          const Scalar* gi = g + static_cast<size_t>(i) * c * c;
          for (int a = 0; a < c; ++a)
            for (int b2 = 0; b2 < c; ++b2)
              sym[static_cast<size_t>(a) * c + b2] =
                  gi[static_cast<size_t>(a) * c + b2] +
                  gi[static_cast<size_t>(b2) * c + a];
          kern::gemm_nn(c, ml, c, norm, sym.data(),
                        xv + static_cast<size_t>(i) * c * ml, 1.0,
                        px->grad.data() + static_cast<size_t>(i) * c * ml);
        }
      });
}

}  // namespace tmrsr::ops
