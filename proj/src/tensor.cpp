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

#include "tmrsr/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace tmrsr {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const std::vector<int>& shape, Scalar value,
                    bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->values = std::make_shared<std::vector<Scalar>>(n->numel(), value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return Tensor(std::move(n));
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<Scalar> data,
                    bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  if (data.size() != n->numel())
    throw ConfigError("tensor payload does not match its shape");
  n->values = std::make_shared<std::vector<Scalar>>(std::move(data));
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return Tensor(std::move(n));
}

Tensor Tensor::randn(const std::vector<int>& shape, Rng& rng, Scalar stddev,
                     bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->values = std::make_shared<std::vector<Scalar>>(n->numel());
  for (auto& v : *n->values) v = rng.normal(0.0, stddev);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return Tensor(std::move(n));
}

void Tensor::backward() {
  if (!node_) throw ConfigError("backward on an undefined tensor");
  if (node_->numel() != 1)
    throw ConfigError("backward requires a scalar root");

  // Iterative post-order DFS to get a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [cur, idx] = stack.back();
    if (idx < cur->parents.size()) {
      Node* p = cur->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

}  // namespace tmrsr
