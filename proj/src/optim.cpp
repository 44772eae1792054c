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

#include "tmrsr/optim.hpp"

#include <cmath>

namespace tmrsr {

Scalar clip_grad_norm(ParamStore& store, Scalar max_norm) {
  Scalar sq = 0.0;
  for (const std::string& name : store.names()) {
    Tensor p = store.get(name);
    if (!p.requires_grad() || p.grad().size() != p.numel()) continue;
    for (const Scalar g : p.grad()) sq += g * g;
  }
  const Scalar norm = std::sqrt(sq);
  if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return norm;
  const Scalar scale = max_norm / norm;
  for (const std::string& name : store.names()) {
    Tensor p = store.get(name);
    if (!p.requires_grad() || p.grad().size() != p.numel()) continue;
    for (Scalar& g : p.node()->grad) g *= scale;
  }
  return norm;
}

Adam::Adam(ParamStore& store, const AdamConfig& cfg)
    : store_(&store), cfg_(cfg) {
  for (const std::string& name : store.names()) {
    Moments mo;
    const size_t n = store.get(name).numel();
    mo.m.assign(n, 0.0);
    mo.v.assign(n, 0.0);
    moments_.emplace(name, std::move(mo));
  }
}

void Adam::step() {
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
  for (const std::string& name : store_->names()) {
    Tensor p = store_->get(name);
    if (!p.requires_grad() || p.grad().size() != p.numel()) continue;
    Moments& mo = moments_.at(name);
    auto& vals = p.mutable_values();
    const auto& g = p.grad();
    for (size_t i = 0; i < vals.size(); ++i) {
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g[i];
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const Scalar mhat = mo.m[i] / bc1;
      const Scalar vhat = mo.v[i] / bc2;
      vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::restore(int64_t t, std::map<std::string, Moments> moments) {
  t_ = t;
  for (auto& [name, mo] : moments) {
    auto it = moments_.find(name);
    if (it == moments_.end())
      throw ConfigError("optimizer restore: unknown parameter " + name);
    if (mo.m.size() != it->second.m.size() ||
        mo.v.size() != it->second.v.size())
      throw ConfigError("optimizer restore: size mismatch for " + name);
    it->second = std::move(mo);
  }
}

}  // namespace tmrsr
