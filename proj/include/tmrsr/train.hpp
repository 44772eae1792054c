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
#include <string>
#include <utility>
#include <vector>

#include "tmrsr/checkpoint.hpp"
#include "tmrsr/config.hpp"
#include "tmrsr/latent.hpp"
#include "tmrsr/model.hpp"
#include "tmrsr/volume.hpp"

// Stage-two training driver: Adam with a step-decay schedule, early stopping
// on validation PSNR, best-checkpoint retention, deterministic seeding, and
// volume-level evaluation.

namespace tmrsr {

/// lr * decay_factor^(epoch / decay_every_epochs), epoch 0-based.
Scalar lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Graph-preserving truncation of every latent in the bundle toward its
/// nearest bank center: phi*f + (1-phi)*center.
LatentHook truncation_hook(const CentroidBank& bank, Scalar phi);

struct EpochStats {
  int epoch = 0;  // 1-based
  Scalar lr = 0.0;
  Scalar train_loss = 0.0;  // mean combined loss over the epoch's steps
  Scalar val_psnr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  Scalar best_val = 0.0;
  int best_epoch = 0;
  bool early_stopped = false;
};

struct TrainData {
  std::vector<SlicePair> train, val;
};

/// Slice-pair extraction over whole volume sets (pad size = the model's
/// image edge).
TrainData make_train_data(const std::vector<Volume>& train_vols,
                          const std::vector<Volume>& val_vols, int r,
                          Plane plane, int pad_size);

/// Mean PSNR of the clamped SR output over pairs, measured on the unpadded
/// region. The early-stop validation metric.
Scalar validation_psnr(const TransMRSR& model,
                       const std::vector<SlicePair>& pairs,
                       const LatentHook& hook = nullptr, int batch = 6);

/// The training loop. Requires a centroid bank iff flags.use_sdt. Writes the
/// best-validation checkpoint to checkpoint_path and the rolling last-epoch
/// state to checkpoint_path + ".last" (no writes when the path is empty);
/// resume_path restarts from such a state. Early stopping: when the best
/// validation PSNR improves by at most early_stop_delta for
/// early_stop_patience consecutive epochs, but never before 10 epochs have
/// completed. Throws NumericError when the loss goes non-finite.
TrainResult train_sr(TransMRSR& model, const TrainConfig& cfg,
                     const TrainData& data, const CentroidBank* bank,
                     const std::string& checkpoint_path,
                     const std::string& resume_path = "",
                     const std::function<void(const EpochStats&)>& on_epoch = {});

/// Copies a pretrained generator's decoder ("gen.decoder.*") over the SR
/// model's decoder ("decoder.*"). Returns the tensor count.
int warm_start_decoder(TransMRSR& model, const Checkpoint& gan_ck);

struct EvalRow {
  std::string volume_id;
  Plane plane = Plane::kXZ;
  int scale = 1;
  Scalar psnr = 0.0, ssim = 0.0;
  Scalar dice_w = 0.0, dice_g = 0.0, dice_csf = 0.0, dice_avg = 0.0;
};

/// Degrades each HR volume along the plane's acquisition axis, restores it
/// through the model, and scores it: PSNR/SSIM over the plane's slices plus
/// per-tissue Dice from threshold segmentation of HR vs SR.
std::vector<EvalRow> evaluate_volumes(
    const TransMRSR& model,
    const std::vector<std::pair<std::string, Volume>>& volumes, int r,
    Plane plane, const LatentHook& hook = nullptr);

/// CSV with the fixed column set and a trailing arithmetic-mean row
/// (volume_id "mean").
std::string metrics_csv(const std::vector<EvalRow>& rows);

}  // namespace tmrsr
