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
#include <string>

#include "tmrsr/model.hpp"
#include "tmrsr/volume.hpp"

// Training configuration: a flat key=value surface shared by config files,
// CLI overrides, and the checkpoint echo. Precedence, lowest to highest:
// built-in defaults, the TMRSR_SEED environment variable (seed only), the
// config file, explicit CLI flags.

namespace tmrsr {

struct TrainConfig {
  // Optimization schedule.
  Scalar lr = 0.1;
  Scalar decay_factor = 0.5;
  int decay_every_epochs = 30;
  int batch_size = 6;
  Scalar adam_beta1 = 0.5;
  Scalar adam_beta2 = 0.999;
  int max_epochs = 100;
  Scalar early_stop_delta = 0.05;   // dB of validation PSNR
  int early_stop_patience = 10;     // epochs without that much improvement

  // Task.
  int scale_r = 4;
  Plane plane = Plane::kXZ;
  AblationFlags flags;
  Scalar phi = 0.7;  // truncation level (1 = no truncation)
  uint64_t seed = 0;

  // Extras beyond the core schedule.
  std::string profile = "toy";  // "toy" or "full"
  Scalar loss_recon = 1.0;
  Scalar loss_cont = 0.5;
  Scalar loss_style = 0.5;
  int epoch_steps = 0;  // optimizer steps per epoch; 0 = one pass over data
  bool freeze_decoder = false;  // keep the warm-started prior fixed
  bool augment = true;
  Scalar clip_norm = 0.0;  // global gradient-norm ceiling; 0 disables

  Profile model_profile() const;
  void validate() const;  // throws ConfigError on out-of-range values
};

/// Applies one key=value assignment (exact field names as keys; flags as
/// use_gp/use_sdt/use_mref/use_sc). Unknown keys or unparsable values throw
/// ConfigError.
void apply_config_kv(TrainConfig& cfg, const std::string& key,
                     const std::string& value);

/// Flat key=value text: # comments and blank lines ignored.
TrainConfig parse_config_text(const std::string& text,
                              const TrainConfig& base = {});
TrainConfig load_config_file(const std::string& path,
                             const TrainConfig& base = {});

/// Serializes every field as key=value lines (the checkpoint echo; feeding
/// it back through parse_config_text reproduces the config).
std::string config_to_text(const TrainConfig& cfg);

/// Overwrites cfg.seed from TMRSR_SEED when the variable is set; a set but
/// unparsable value is a ConfigError.
void apply_env_seed(TrainConfig& cfg);

}  // namespace tmrsr
