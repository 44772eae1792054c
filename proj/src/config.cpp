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

#include "tmrsr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tmrsr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Scalar parse_scalar(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const Scalar x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + v +
                      "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

Profile TrainConfig::model_profile() const {
  if (profile == "toy") return Profile::toy();
  if (profile == "full") return Profile::full();
  throw ConfigError("config: unknown profile '" + profile +
                    "' (expected toy or full)");
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("config: lr must be positive");
  if (decay_factor <= 0.0 || decay_factor > 1.0)
    throw ConfigError("config: decay_factor must be in (0, 1]");
  if (decay_every_epochs < 1)
    throw ConfigError("config: decay_every_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
  if (early_stop_delta < 0.0)
    throw ConfigError("config: early_stop_delta must be >= 0");
  if (early_stop_patience < 1)
    throw ConfigError("config: early_stop_patience must be >= 1");
  if (scale_r < 1) throw ConfigError("config: scale_r must be >= 1");
  if (phi < 0.0 || phi > 1.0)
    throw ConfigError("config: phi must be in [0, 1]");
  if (epoch_steps < 0) throw ConfigError("config: epoch_steps must be >= 0");
  if (loss_recon < 0.0 || loss_cont < 0.0 || loss_style < 0.0)
    throw ConfigError("config: loss weights must be >= 0");
  if (clip_norm < 0.0) throw ConfigError("config: clip_norm must be >= 0");
  model_profile().validate();
}

void apply_config_kv(TrainConfig& cfg, const std::string& key,
                     const std::string& value) {
  const std::string v = trim(value);
  if (key == "lr")
    cfg.lr = parse_scalar(key, v);
  else if (key == "decay_factor")
    cfg.decay_factor = parse_scalar(key, v);
  else if (key == "decay_every_epochs")
    cfg.decay_every_epochs = parse_int(key, v);
  else if (key == "batch_size")
    cfg.batch_size = parse_int(key, v);
  else if (key == "adam_beta1")
    cfg.adam_beta1 = parse_scalar(key, v);
  else if (key == "adam_beta2")
    cfg.adam_beta2 = parse_scalar(key, v);
  else if (key == "max_epochs")
    cfg.max_epochs = parse_int(key, v);
  else if (key == "early_stop_delta")
    cfg.early_stop_delta = parse_scalar(key, v);
  else if (key == "early_stop_patience")
    cfg.early_stop_patience = parse_int(key, v);
  else if (key == "scale_r")
    cfg.scale_r = parse_int(key, v);
  else if (key == "plane")
    cfg.plane = plane_from_string(v);
  else if (key == "use_gp")
    cfg.flags.use_gp = parse_bool(key, v);
  else if (key == "use_sdt")
    cfg.flags.use_sdt = parse_bool(key, v);
  else if (key == "use_mref")
    cfg.flags.use_mref = parse_bool(key, v);
  else if (key == "use_sc")
    cfg.flags.use_sc = parse_bool(key, v);
  else if (key == "phi")
    cfg.phi = parse_scalar(key, v);
  else if (key == "seed")
    cfg.seed = parse_u64(key, v);
  else if (key == "profile")
    cfg.profile = v;
  else if (key == "loss_recon")
    cfg.loss_recon = parse_scalar(key, v);
  else if (key == "loss_cont")
    cfg.loss_cont = parse_scalar(key, v);
  else if (key == "loss_style")
    cfg.loss_style = parse_scalar(key, v);
  else if (key == "epoch_steps")
    cfg.epoch_steps = parse_int(key, v);
  else if (key == "freeze_decoder")
    cfg.freeze_decoder = parse_bool(key, v);
  else if (key == "augment")
    cfg.augment = parse_bool(key, v);
  else if (key == "clip_norm")
    cfg.clip_norm = parse_scalar(key, v);
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text,
                              const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not key=value: '" + t + "'");
    apply_config_kv(cfg, trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return parse_config_text(body.str(), base);
}

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "lr=" << cfg.lr << "\n";
  out << "decay_factor=" << cfg.decay_factor << "\n";
  out << "decay_every_epochs=" << cfg.decay_every_epochs << "\n";
  out << "batch_size=" << cfg.batch_size << "\n";
  out << "adam_beta1=" << cfg.adam_beta1 << "\n";
  out << "adam_beta2=" << cfg.adam_beta2 << "\n";
  out << "max_epochs=" << cfg.max_epochs << "\n";
  out << "early_stop_delta=" << cfg.early_stop_delta << "\n";
  out << "early_stop_patience=" << cfg.early_stop_patience << "\n";
  out << "scale_r=" << cfg.scale_r << "\n";
  out << "plane=" << to_string(cfg.plane) << "\n";
  out << "use_gp=" << (cfg.flags.use_gp ? "true" : "false") << "\n";
  out << "use_sdt=" << (cfg.flags.use_sdt ? "true" : "false") << "\n";
  out << "use_mref=" << (cfg.flags.use_mref ? "true" : "false") << "\n";
  out << "use_sc=" << (cfg.flags.use_sc ? "true" : "false") << "\n";
  out << "phi=" << cfg.phi << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "profile=" << cfg.profile << "\n";
  out << "loss_recon=" << cfg.loss_recon << "\n";
  out << "loss_cont=" << cfg.loss_cont << "\n";
  out << "loss_style=" << cfg.loss_style << "\n";
  out << "epoch_steps=" << cfg.epoch_steps << "\n";
  out << "freeze_decoder=" << (cfg.freeze_decoder ? "true" : "false") << "\n";
  out << "augment=" << (cfg.augment ? "true" : "false") << "\n";
  out << "clip_norm=" << cfg.clip_norm << "\n";
  return out.str();
}

void apply_env_seed(TrainConfig& cfg) {
  const char* env = std::getenv("TMRSR_SEED");
  if (!env) return;
  cfg.seed = parse_u64("TMRSR_SEED", env);
}

}  // namespace tmrsr
