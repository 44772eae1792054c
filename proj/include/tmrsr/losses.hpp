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

#include "tmrsr/ops.hpp"
#include "tmrsr/tensor.hpp"

// Training objectives: pixel reconstruction, perceptual content, and Gram
// style losses over a frozen feature extractor, plus their weighted sum with
// a per-term breakdown for logging.

namespace tmrsr {

struct BackboneConfig {
  // Block widths of the conv stack (four stages). The defaults keep the
  // extractor desk-scale; pass the classic 64/128/256/512 for full width.
  std::vector<int> widths = {8, 16, 32, 64};
  uint64_t seed = 0xF0E1D2C3;
};

/// Frozen VGG19-shaped conv stack over 1-channel images.10 conv layers in
/// four stages with 2x2 max pooling between stages; features are tapped
/// post-activation after conv layers 2, 4, 7, and 10, so the four taps have
/// strictly decreasing spatial size (1, 1/2, 1/4, 1/8 of the input).
/// Weights are seeded-random by default and can be replaced via set_weights;
/// they are never trained (gradients flow through, not into, the stack).
class PerceptualBackbone {
 public:
  explicit PerceptualBackbone(const BackboneConfig& cfg = {});
  std::vector<Tensor> taps(const Tensor& x) const;
  const std::vector<std::string>& names() const { return names_; }
  /// Replaces one tensor (for importing pretrained weights shaped for
  /// 1-channel input); the value count must match.
  void set_weights(const std::string& name, const std::vector<Scalar>& values);

 private:
  struct Layer {
    Tensor w, b;
    bool tap_after = false;
    bool pool_after = false;
  };
  std::vector<Layer> layers_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> by_name_;
};

struct LossWeights {
  Scalar recon = 1.0;
  Scalar cont = 0.5;
  Scalar style = 0.5;
};

struct LossTerms {
  Tensor total;  // carries the graph
  Scalar rec = 0.0, cont = 0.0, style = 0.0;
};

/// Mean absolute error.
Tensor rec_loss(const Tensor& sr, const Tensor& hr);
/// Sum over the four taps of mean squared feature difference. The hr branch
/// is evaluated outside the graph.
Tensor content_loss(const Tensor& sr, const Tensor& hr,
                    const PerceptualBackbone& backbone);
/// Sum over taps of mean squared Gram-matrix difference; `normalize_gram`
/// divides each Gram by h*w (the raw FF^T form is kept available).
Tensor style_loss(const Tensor& sr, const Tensor& hr,
                  const PerceptualBackbone& backbone,
                  bool normalize_gram = true);
/// recon*L_rec + cont*L_cont + style*L_style with the per-term breakdown.
/// Terms with zero weight are skipped entirely.
LossTerms total_loss(const Tensor& sr, const Tensor& hr,
                     const PerceptualBackbone& backbone, const LossWeights& w,
                     bool normalize_gram = true);

}  // namespace tmrsr
