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

#include <functional>
#include <memory>
#include <vector>

#include "tmrsr/common.hpp"
#include "tmrsr/rng.hpp"

namespace tmrsr {

/// Reverse-mode automatic differentiation over dense double tensors.
///
/// A Tensor is a cheap handle to a graph node holding the value buffer and,
/// when gradients are enabled, the links and closure needed for backward.
/// Ops (see ops.hpp) build the graph as they run; Tensor::backward() walks
/// it in reverse topological order. Gradients accumulate, so a value used
/// twice receives both contributions.
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::shared_ptr<std::vector<Scalar>> values;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    size_t numel() const {
      size_t n = 1;
      for (int d : shape) n *= static_cast<size_t>(d);
      return n;
    }
    void ensure_grad() {
      if (grad.size() != numel()) grad.assign(numel(), 0.0);
    }
  };

  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, Scalar value,
                     bool requires_grad = false);
  static Tensor from(const std::vector<int>& shape, std::vector<Scalar> data,
                     bool requires_grad = false);
  static Tensor randn(const std::vector<int>& shape, Rng& rng, Scalar stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  size_t numel() const { return node_->numel(); }

  const std::vector<Scalar>& values() const { return *node_->values; }
  /// Direct buffer access for leaf updates (optimizer steps, loading).
  std::vector<Scalar>& mutable_values() { return *node_->values; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Freeze/unfreeze a leaf (optimizers skip frozen parameters).
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  const std::vector<Scalar>& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->numel(), 0.0);
  }

  Scalar item() const { return (*node_->values)[0]; }

  /// Backpropagate from this scalar through the recorded graph.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Scoped switch that disables graph recording (inference mode). Ops still
/// compute values but create no backward links, so temporaries free as they
/// go out of scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace tmrsr
