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

// Command-line driver for the two-stage volumetric super-resolution
// pipeline: phantom data generation, thick-slice degradation, adversarial
// prior pretraining, latent clustering, supervised training, inference, and
// evaluation. Exit codes: 0 ok, 2 configuration error, 3 data error,
// 4 numeric divergence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "tmrsr/checkpoint.hpp"
#include "tmrsr/config.hpp"
#include "tmrsr/gan.hpp"
#include "tmrsr/phantom.hpp"
#include "tmrsr/train.hpp"

namespace fs = std::filesystem;
using namespace tmrsr;

namespace {

// ---------------------------------------------------------------------------
// shared helpers

/// Volumes in a directory (sorted *.tmrv), paired with their filename stems.
std::vector<std::pair<std::string, Volume>> load_volume_dir(
    const std::string& dir) {
  if (!fs::is_directory(dir))
    throw DataError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".tmrv")
      paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("no .tmrv volumes in " + dir);
  std::vector<std::pair<std::string, Volume>> out;
  out.reserve(paths.size());
  for (const auto& p : paths)
    out.emplace_back(fs::path(p).stem().string(), read_volume(p));
  return out;
}

std::vector<Volume> bare_volumes(
    std::vector<std::pair<std::string, Volume>>&& named) {
  std::vector<Volume> out;
  out.reserve(named.size());
  for (auto& [name, v] : named) out.push_back(std::move(v));
  return out;
}

Axis axis_from_string(const std::string& s) {
  if (s == "x") return Axis::kX;
  if (s == "y") return Axis::kY;
  if (s == "z") return Axis::kZ;
  throw ConfigError("unknown axis '" + s + "' (expected x, y, or z)");
}

/// Config resolution order: defaults < TMRSR_SEED < config file < CLI
/// key=value overrides (applied in command-line order).
TrainConfig resolve_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  apply_env_seed(cfg);
  if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
  for (const auto& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + kv + "' is not key=value");
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

/// Rebuilds the SR model a checkpoint was trained with (config echo decides
/// the profile and ablation flags) and loads its weights.
TransMRSR model_from_checkpoint(const Checkpoint& ck, TrainConfig* cfg_out) {
  const TrainConfig cfg = parse_config_text(ck.config_text);
  TransMRSR model(cfg.model_profile(), cfg.flags, cfg.seed);
  load_store(ck, model.params(), /*strict=*/true);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

/// Truncation hook for a checkpoint config; empty bank path is an error when
/// the config calls for latent truncation.
LatentHook hook_for(const TrainConfig& cfg, const std::string& bank_path,
                    CentroidBank* bank_out) {
  if (!cfg.flags.use_sdt) return nullptr;
  if (bank_path.empty())
    throw ConfigError(
        "this model applies latent truncation: --bank is required");
  *bank_out = read_bank(bank_path);
  return truncation_hook(*bank_out, cfg.phi);
}

/// All nonzero HR slices of every volume in `plane`, zero-padded to
/// size x size: the adversarial pretraining dataset.
std::vector<Slice> gather_hr_slices(const std::vector<Volume>& vols,
                                    Plane plane, int size) {
  std::vector<Slice> out;
  for (const auto& v : vols) {
    for (int i = 0; i < slice_count(v, plane); ++i) {
      Slice s = get_slice(v, plane, i);
      const bool nonzero =
          std::any_of(s.data.begin(), s.data.end(), [](float x) { return x != 0.0f; });
      if (!nonzero) continue;
      PadBox box;
      out.push_back(pad_to(s, size, &box));
    }
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

std::string slice_png_name(const char* stem, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.pgm", stem, index);
  return buf;
}

// ---------------------------------------------------------------------------
// subcommands

struct PhantomArgs {
  std::string out_dir;
  int count = 10;
  int dim = 64;
  int ellipsoids = 6;
  uint64_t seed = 0;
};

void run_phantoms(const PhantomArgs& a) {
  PhantomSpec spec;
  spec.nx = spec.ny = spec.nz = a.dim;
  spec.n_ellipsoids = a.ellipsoids;
  spec.seed = a.seed;
  const auto vols = generate_phantoms(spec, a.count);
  ensure_dir(a.out_dir);
  for (int i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "phantom_%03d.tmrv", i);
    const std::string path = (fs::path(a.out_dir) / name).string();
    write_volume(vols[static_cast<size_t>(i)], path);
    std::cout << path << "\n";
  }
}

struct DegradeArgs {
  std::string in, out, axis = "z";
  int r = 2;
  bool slab = false;
};

void run_degrade(const DegradeArgs& a) {
  const Volume v = read_volume(a.in);
  const Volume d = degrade_volume(v, a.r, axis_from_string(a.axis), a.slab);
  write_volume(d, a.out);
  std::cout << a.out << ": " << d.nx << "x" << d.ny << "x" << d.nz << "\n";
}

struct PretrainArgs {
  std::string data_dir, out, config, sample_dir = ".";
  std::vector<std::string> overrides;
  int steps = 200, batch = 8, ndf = 32, r1_interval = 16, sample_every = 0;
  double lr = 2e-3, r1_weight = 10.0;
};

void run_pretrain(const PretrainArgs& a) {
  const TrainConfig cfg = resolve_config(a.config, a.overrides);
  const Profile profile = cfg.model_profile();
  const auto vols = bare_volumes(load_volume_dir(a.data_dir));
  const auto dataset = gather_hr_slices(vols, cfg.plane, profile.image_size);
  if (dataset.empty()) throw DataError("no nonzero slices in " + a.data_dir);

  Generator gen(profile, derive_seed(cfg.seed, SeedTag::kInit, 1));
  Discriminator disc(profile.image_size, a.ndf,
                     derive_seed(cfg.seed, SeedTag::kInit, 2));
  GanConfig gc;
  gc.steps = a.steps;
  gc.batch = a.batch;
  gc.lr = a.lr;
  gc.r1_weight = a.r1_weight;
  gc.r1_interval = a.r1_interval;
  gc.sample_every = a.sample_every;
  gc.sample_dir = a.sample_dir;
  gc.seed = cfg.seed;
  if (a.sample_every > 0) ensure_dir(a.sample_dir);
  const PretrainResult res = pretrain(gen, disc, dataset, gc);

  Checkpoint ck;
  ck.config_text = config_to_text(cfg);
  ck.add_store(gen.params());
  ck.add_store(disc.params());
  ck.global_step = static_cast<uint64_t>(res.steps_done);
  write_checkpoint(a.out, ck);
  std::cout << "pretrained " << res.steps_done << " steps on "
            << dataset.size() << " slices; d_loss " << res.d_loss
            << ", g_loss " << res.g_loss << "\n"
            << a.out << "\n";
}

struct ClusterArgs {
  std::string gan, out;
  int samples = 4096, clusters = 128;
  uint64_t seed = 0;
  bool seed_set = false;
};

void run_cluster(const ClusterArgs& a) {
  const Checkpoint ck = read_checkpoint(a.gan);
  const TrainConfig cfg = parse_config_text(ck.config_text);
  Generator gen(cfg.model_profile(), 0);
  const int copied = load_store(ck, gen.params(), /*strict=*/false);
  if (copied != static_cast<int>(gen.params().names().size()))
    throw ConfigError("checkpoint " + a.gan +
                      " does not contain a full generator");
  const uint64_t seed = a.seed_set ? a.seed : cfg.seed;
  const CentroidBank bank =
      build_centroid_bank(gen, a.samples, a.clusters, seed);
  write_bank(a.out, bank);
  std::cout << a.out << ": " << bank.n_clusters << " centers, dim "
            << bank.latent_dim << "\n";
}

struct TrainArgs {
  std::string train_dir, val_dir, out, config, gan, bank, resume;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void run_train(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(a.config, a.overrides);
  const Profile profile = cfg.model_profile();

  TransMRSR model(profile, cfg.flags, cfg.seed);
  if (cfg.flags.use_gp && a.resume.empty()) {
    if (a.gan.empty())
      throw ConfigError("use_gp is on: --gan <pretrained checkpoint> needed "
                        "(or disable with use_gp=false)");
    const int n = warm_start_decoder(model, read_checkpoint(a.gan));
    if (!a.quiet) std::cout << "warm-started decoder: " << n << " tensors\n";
  }

  CentroidBank bank;
  const CentroidBank* bank_ptr = nullptr;
  if (cfg.flags.use_sdt) {
    if (a.bank.empty())
      throw ConfigError("use_sdt is on: --bank <centroid bank> needed "
                        "(or disable with use_sdt=false)");
    bank = read_bank(a.bank);
    bank_ptr = &bank;
  }

  const auto train_vols = bare_volumes(load_volume_dir(a.train_dir));
  const auto val_vols = bare_volumes(load_volume_dir(a.val_dir));
  const TrainData data = make_train_data(train_vols, val_vols, cfg.scale_r,
                                         cfg.plane, profile.image_size);
  if (!a.quiet)
    std::cout << "pairs: " << data.train.size() << " train, "
              << data.val.size() << " val\n";

  const auto progress = [&](const EpochStats& st) {
    if (a.quiet) return;
    std::printf("epoch %3d  lr %.6f  loss %.6f  val %.3f dB\n", st.epoch,
                st.lr, st.train_loss, st.val_psnr);
    std::fflush(stdout);
  };
  const TrainResult res =
      train_sr(model, cfg, data, bank_ptr, a.out, a.resume, progress);
  std::cout << "best val " << res.best_val << " dB at epoch " << res.best_epoch
            << (res.early_stopped ? " (early stop)" : "") << "\n"
            << a.out << "\n";
}

struct InferArgs {
  std::string ckpt, in, out, hr, bank, emit_dir, plane, axis;
  int r = 0;           // 0: use the checkpoint config
  int target_len = 0;  // 0: r * input length (or the HR volume's length)
};

void run_infer(const InferArgs& a) {
  const Checkpoint ck = read_checkpoint(a.ckpt);
  TrainConfig cfg;
  const TransMRSR model = model_from_checkpoint(ck, &cfg);
  CentroidBank bank;
  const LatentHook hook = hook_for(cfg, a.bank, &bank);

  const Volume lr = read_volume(a.in);
  const int r = a.r > 0 ? a.r : cfg.scale_r;
  const Plane plane = a.plane.empty() ? cfg.plane : plane_from_string(a.plane);
  const Axis axis =
      a.axis.empty() ? default_degrade_axis(plane) : axis_from_string(a.axis);

  Volume hr;
  const bool have_hr = !a.hr.empty();
  if (have_hr) hr = read_volume(a.hr);
  int target = a.target_len;
  if (target == 0) target = have_hr ? hr.axis_len(axis) : r * lr.axis_len(axis);

  const Volume sr = restore_volume(model, lr, r, plane, axis, target,
                                   /*batch=*/4, hook);
  write_volume(sr, a.out);
  std::cout << a.out << ": " << sr.nx << "x" << sr.ny << "x" << sr.nz << "\n";

  if (!a.emit_dir.empty()) {
    ensure_dir(a.emit_dir);
    if (have_hr && (hr.nx != sr.nx || hr.ny != sr.ny || hr.nz != sr.nz))
      throw DataError("--hr volume dims do not match the restored volume");
    for (int i = 0; i < slice_count(sr, plane); ++i) {
      const Slice s = get_slice(sr, plane, i);
      write_pgm16(s, (fs::path(a.emit_dir) / slice_png_name("slice", i)).string());
      if (have_hr) {
        Slice err = get_slice(hr, plane, i);
        for (size_t j = 0; j < err.data.size(); ++j)
          err.data[j] = std::fabs(s.data[j] - err.data[j]);
        write_pgm16(err,
                    (fs::path(a.emit_dir) / slice_png_name("error", i)).string());
      }
    }
    std::cout << a.emit_dir << ": " << slice_count(sr, plane) << " slice"
              << (have_hr ? " + error" : "") << " maps\n";
  }
}

struct EvalArgs {
  std::string ckpt, data_dir, bank, out, plane;
  int r = 0;
};

void run_evaluate(const EvalArgs& a) {
  const Checkpoint ck = read_checkpoint(a.ckpt);
  TrainConfig cfg;
  const TransMRSR model = model_from_checkpoint(ck, &cfg);
  CentroidBank bank;
  const LatentHook hook = hook_for(cfg, a.bank, &bank);

  const auto volumes = load_volume_dir(a.data_dir);
  const int r = a.r > 0 ? a.r : cfg.scale_r;
  const Plane plane = a.plane.empty() ? cfg.plane : plane_from_string(a.plane);
  const auto rows = evaluate_volumes(model, volumes, r, plane, hook);
  const std::string csv = metrics_csv(rows);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw DataError("cannot write " + a.out);
    f << csv;
    std::cout << a.out << "\n";
  }
}

void add_override_flags(CLI::App* sub, std::vector<std::string>& overrides) {
  sub->add_option("--set", overrides,
                  "config override key=value (repeatable; wins over --config)")
      ->type_name("KEY=VALUE");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tmrsr: transformer-based volumetric super-resolution.\n"
      "Root seed: TMRSR_SEED env var, overridden by config files and --set "
      "seed=N."};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* sp = app.add_subcommand("phantoms", "generate synthetic volumes");
  sp->add_option("--out", pa.out_dir, "output directory")->required();
  sp->add_option("--count", pa.count, "number of volumes")
      ->check(CLI::PositiveNumber);
  sp->add_option("--dim", pa.dim, "cubic edge length")
      ->check(CLI::PositiveNumber);
  sp->add_option("--ellipsoids", pa.ellipsoids, "interior structures")
      ->check(CLI::PositiveNumber);
  sp->add_option("--seed", pa.seed, "phantom seed");
  sp->callback([&] { run_phantoms(pa); });

  DegradeArgs da;
  auto* sd = app.add_subcommand("degrade", "thick-slice degrade a volume");
  sd->add_option("--in", da.in, "input volume")->required();
  sd->add_option("--out", da.out, "output volume")->required();
  sd->add_option("--r", da.r, "decimation factor")->check(CLI::PositiveNumber);
  sd->add_option("--axis", da.axis, "degradation axis (x|y|z)");
  sd->add_flag("--slab", da.slab, "average r-sample slabs instead of decimating");
  sd->callback([&] { run_degrade(da); });

  PretrainArgs ga;
  auto* sg = app.add_subcommand("pretrain",
                                "adversarially pretrain the decoder prior");
  sg->add_option("--data", ga.data_dir, "directory of training volumes")
      ->required();
  sg->add_option("--out", ga.out, "output checkpoint")->required();
  sg->add_option("--config", ga.config, "config file (profile/plane/seed)");
  add_override_flags(sg, ga.overrides);
  sg->add_option("--steps", ga.steps, "training steps")
      ->check(CLI::PositiveNumber);
  sg->add_option("--batch", ga.batch, "batch size")->check(CLI::PositiveNumber);
  sg->add_option("--lr", ga.lr, "Adam learning rate");
  sg->add_option("--ndf", ga.ndf, "critic base width")
      ->check(CLI::PositiveNumber);
  sg->add_option("--r1-weight", ga.r1_weight, "gradient-penalty weight");
  sg->add_option("--r1-interval", ga.r1_interval, "penalty every k steps")
      ->check(CLI::PositiveNumber);
  sg->add_option("--sample-every", ga.sample_every,
                 "write a sample grid every k steps (0 = off)");
  sg->add_option("--sample-dir", ga.sample_dir, "sample grid directory");
  sg->callback([&] { run_pretrain(ga); });

  ClusterArgs ca;
  auto* sc = app.add_subcommand("cluster-latents",
                                "build the truncation centroid bank");
  sc->add_option("--gan", ca.gan, "pretrained prior checkpoint")->required();
  sc->add_option("--out", ca.out, "output bank file")->required();
  sc->add_option("--samples", ca.samples, "latent draws to cluster")
      ->check(CLI::PositiveNumber);
  sc->add_option("--clusters", ca.clusters, "bank size")
      ->check(CLI::PositiveNumber);
  auto* seed_opt = sc->add_option("--seed", ca.seed, "sampling seed");
  sc->callback([&] {
    ca.seed_set = seed_opt->count() > 0;
    run_cluster(ca);
  });

  TrainArgs ta;
  auto* st = app.add_subcommand("train-sr", "train the super-resolution model");
  st->add_option("--train-dir", ta.train_dir, "training volumes")->required();
  st->add_option("--val-dir", ta.val_dir, "validation volumes")->required();
  st->add_option("--out", ta.out, "best-checkpoint path")->required();
  st->add_option("--config", ta.config, "config file");
  add_override_flags(st, ta.overrides);
  st->add_option("--gan", ta.gan, "pretrained prior (needed when use_gp)");
  st->add_option("--bank", ta.bank, "centroid bank (needed when use_sdt)");
  st->add_option("--resume", ta.resume, "resume from a .last state");
  st->add_flag("--quiet", ta.quiet, "suppress per-epoch progress");
  st->callback([&] { run_train(ta); });

  InferArgs ia;
  auto* si = app.add_subcommand("infer", "restore a low-resolution volume");
  si->add_option("--ckpt", ia.ckpt, "trained checkpoint")->required();
  si->add_option("--in", ia.in, "low-resolution input volume")->required();
  si->add_option("--out", ia.out, "restored output volume")->required();
  si->add_option("--r", ia.r, "upsampling factor (default: checkpoint's)");
  si->add_option("--plane", ia.plane, "slice plane (default: checkpoint's)");
  si->add_option("--axis", ia.axis, "upsampling axis (default: plane rule)");
  si->add_option("--target-len", ia.target_len,
                 "output length along the axis (default: r * input)");
  si->add_option("--bank", ia.bank, "centroid bank (for truncation models)");
  si->add_option("--emit-slices", ia.emit_dir,
                 "also write per-slice 16-bit PGM images here");
  si->add_option("--hr", ia.hr,
                 "ground-truth volume: adds |restored - truth| error maps");
  si->callback([&] { run_infer(ia); });

  EvalArgs ea;
  auto* se = app.add_subcommand("evaluate", "score a model on ground truth");
  se->add_option("--ckpt", ea.ckpt, "trained checkpoint")->required();
  se->add_option("--data", ea.data_dir, "ground-truth volumes")->required();
  se->add_option("--r", ea.r, "scale factor (default: checkpoint's)");
  se->add_option("--plane", ea.plane, "slice plane (default: checkpoint's)");
  se->add_option("--bank", ea.bank, "centroid bank (for truncation models)");
  se->add_option("--out", ea.out, "CSV path (default: stdout)");
  se->callback([&] { run_evaluate(ea); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
