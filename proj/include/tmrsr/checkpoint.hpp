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
#include <utility>
#include <vector>

#include "tmrsr/nn.hpp"
#include "tmrsr/optim.hpp"

// Checkpoint archive: a config echo, named f64 tensors, Adam moments, and
// progress counters, in one binary file ("TMCK1"). Values are stored as raw
// 64-bit doubles, so save -> load -> save is byte-identical.

namespace tmrsr {

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
  std::map<std::string, std::vector<Scalar>> tensors;
  std::map<std::string, Adam::Moments> moments;
  int64_t adam_t = 0;
  int64_t epoch = 0;
  int64_t global_step = 0;
  int64_t stall_epochs = 0;   // early-stop streak at save time
  Scalar best_val = 0.0;

  /// Appends every parameter of the store (registration order).
  void add_store(const ParamStore& store);
  const std::vector<int>* shape_of(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

/// Copies checkpoint tensors into same-named store parameters. With
/// `strict`, every store parameter must be present with matching shape
/// (missing/mismatched entries throw ConfigError); otherwise extras on
/// either side are ignored. Returns the number of tensors copied.
int load_store(const Checkpoint& ck, ParamStore& store, bool strict);

/// Prefix-remapped copy: checkpoint tensor "<from><rest>" loads into store
/// parameter "<to><rest>" (shape-checked). Used to warm-start the SR decoder
/// from a generator checkpoint. Returns the number of tensors copied.
int load_store_remapped(const Checkpoint& ck, ParamStore& store,
                        const std::string& from, const std::string& to);

}  // namespace tmrsr
