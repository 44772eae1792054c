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
#include <map>
#include <string>
#include <vector>

#include "tmrsr/common.hpp"
#include "tmrsr/nn.hpp"

// Adam optimizer over a ParamStore. Parameters that are frozen
// (requires_grad == false) or that received no gradient in the current
// backward pass are skipped. Moments are exposed by name so checkpoints can
// persist and restore the exact optimizer state.

namespace tmrsr {

/// Rescales the gradients currently held by the store's trainable
/// parameters so their combined L2 norm is at most `max_norm` (no-op when
/// `max_norm` <= 0 or the norm is already within bounds). Frozen parameters
/// and parameters without gradients are ignored, mirroring Adam::step.
/// Returns the pre-clip global norm.
Scalar clip_grad_norm(ParamStore& store, Scalar max_norm);

struct AdamConfig {
  Scalar lr = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

class Adam {
 public:
  struct Moments {
    std::vector<Scalar> m, v;
  };

  Adam(ParamStore& store, const AdamConfig& cfg);

  /// Applies one update from the gradients currently held by the store's
  /// parameters, then advances the step counter. Does not clear gradients.
  void step();

  void set_lr(Scalar lr) { cfg_.lr = lr; }
  Scalar lr() const { return cfg_.lr; }
  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return t_; }

  // Checkpoint access: moment buffers by parameter name plus the counter.
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(int64_t t, std::map<std::string, Moments> moments);

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace tmrsr
