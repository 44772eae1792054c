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

#include "tmrsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tmrsr/losses.hpp"
#include "tmrsr/metrics.hpp"
#include "tmrsr/ops.hpp"
#include "tmrsr/optim.hpp"
#include "tmrsr/rng.hpp"

namespace tmrsr {
namespace {

Tensor slices_to_tensor(const std::vector<const Slice*>& batch, int edge) {
  const size_t pix = static_cast<size_t>(edge) * edge;
  std::vector<Scalar> v(batch.size() * pix);
  for (size_t b = 0; b < batch.size(); ++b) {
    const Slice& s = *batch[b];
    if (s.h != edge || s.w != edge)
      throw DataError("training pair does not match the model's image size");
    for (size_t i = 0; i < pix; ++i) v[b * pix + i] = s.data[i];
  }
  return Tensor::from({static_cast<int>(batch.size()), 1, edge, edge}, v);
}

Slice tensor_row_to_slice(const Tensor& t, int row) {
  const int h = t.dim(2), w = t.dim(3);
  const size_t pix = static_cast<size_t>(h) * w;
  Slice s;
  s.h = h;
  s.w = w;
  s.data.resize(pix);
  const Scalar* base = t.values().data() + static_cast<size_t>(row) * pix;
  for (size_t i = 0; i < pix; ++i) s.data[i] = static_cast<float>(base[i]);
  return s;
}

void save_state(const std::string& path, const TrainConfig& cfg,
                const ParamStore& store, const Adam& opt, int64_t epoch,
                int64_t global_step, int64_t stall, Scalar best_val) {
  Checkpoint ck;
  ck.config_text = config_to_text(cfg);
  ck.add_store(store);
  ck.moments = opt.moments();
  ck.adam_t = opt.step_count();
  ck.epoch = epoch;
  ck.global_step = global_step;
  ck.stall_epochs = stall;
  ck.best_val = best_val;
  write_checkpoint(path, ck);
}

}  // namespace

Scalar lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ConfigError("lr schedule: negative epoch");
  return cfg.lr *
         std::pow(cfg.decay_factor, epoch / cfg.decay_every_epochs);
}

LatentHook truncation_hook(const CentroidBank& bank, Scalar phi) {
  if (bank.n_clusters < 1 || bank.centers.empty())
    throw ConfigError("truncation: empty centroid bank");
  if (phi < 0.0 || phi > 1.0)
    throw ConfigError("truncation: phi must be in [0, 1]");
  return [bank, phi](LatentBundle in) {
    LatentBundle out;
    out.reserve(in.size());
    for (const Tensor& f : in) {
      if (f.ndim() != 2 || f.dim(1) != bank.latent_dim)
        throw ConfigError("truncation: latent width does not match the bank");
      const int n = f.dim(0), d = f.dim(1);
      std::vector<Scalar> cv(static_cast<size_t>(n) * d);
      for (int i = 0; i < n; ++i) {
        const Scalar* row = f.values().data() + static_cast<size_t>(i) * d;
        const Scalar* c = bank.center(bank.nearest(row));
        std::copy(c, c + d, cv.begin() + static_cast<size_t>(i) * d);
      }
      const Tensor centers = Tensor::from(f.shape(), cv);
      out.push_back(
          ops::add(ops::scale(f, phi), ops::scale(centers, 1.0 - phi)));
    }
    return out;
  };
}

TrainData make_train_data(const std::vector<Volume>& train_vols,
                          const std::vector<Volume>& val_vols, int r,
                          Plane plane, int pad_size) {
  TrainData data;
  int id = 0;
  for (const Volume& v : train_vols) {
    auto pairs =
        extract_pairs(v, r, plane, pad_size, "train" + std::to_string(id++));
    data.train.insert(data.train.end(), pairs.begin(), pairs.end());
  }
  id = 0;
  for (const Volume& v : val_vols) {
    auto pairs =
        extract_pairs(v, r, plane, pad_size, "val" + std::to_string(id++));
    data.val.insert(data.val.end(), pairs.begin(), pairs.end());
  }
  return data;
}

Scalar validation_psnr(const TransMRSR& model,
                       const std::vector<SlicePair>& pairs,
                       const LatentHook& hook, int batch) {
  if (pairs.empty()) throw DataError("validation: no pairs");
  const int edge = model.profile().image_size;
  NoGradGuard ng;
  double acc = 0.0;
  for (size_t base = 0; base < pairs.size();
       base += static_cast<size_t>(batch)) {
    const size_t nb = std::min(static_cast<size_t>(batch),
                               pairs.size() - base);
    std::vector<const Slice*> lr(nb);
    for (size_t i = 0; i < nb; ++i) lr[i] = &pairs[base + i].lr;
    const Tensor sr =
        model.forward(slices_to_tensor(lr, edge), /*inference=*/true, hook)
            .first;
    for (size_t i = 0; i < nb; ++i) {
      const SlicePair& p = pairs[base + i];
      const Slice sr_slice =
          crop(tensor_row_to_slice(sr, static_cast<int>(i)), p.pad_box);
      acc += psnr(sr_slice, crop(p.hr, p.pad_box));
    }
  }
  return acc / static_cast<double>(pairs.size());
}

TrainResult train_sr(TransMRSR& model, const TrainConfig& cfg,
                     const TrainData& data, const CentroidBank* bank,
                     const std::string& checkpoint_path,
                     const std::string& resume_path,
                     const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training: no training pairs");
  if (data.val.empty()) throw DataError("training: no validation pairs");
  if (cfg.flags.use_sdt && bank == nullptr)
    throw ConfigError("training: latent truncation needs a centroid bank");

  const LatentHook hook = cfg.flags.use_sdt && bank
                              ? truncation_hook(*bank, cfg.phi)
                              : LatentHook(nullptr);
  const PerceptualBackbone backbone;
  LossWeights weights;
  weights.recon = cfg.loss_recon;
  weights.cont = cfg.loss_cont;
  weights.style = cfg.loss_style;

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.adam_beta1;
  ac.beta2 = cfg.adam_beta2;
  Adam opt(model.params(), ac);

  if (cfg.freeze_decoder)
    for (const std::string& name : model.params().names())
      if (name.rfind("decoder.", 0) == 0)
        model.params().get(name).set_requires_grad(false);

  const int edge = model.profile().image_size;
  const int steps_per_epoch =
      cfg.epoch_steps > 0
          ? cfg.epoch_steps
          : static_cast<int>((data.train.size() + cfg.batch_size - 1) /
                             cfg.batch_size);

  TrainResult res;
  int start_epoch = 0;
  int64_t global_step = 0;
  int64_t stall = 0;
  Scalar best = -std::numeric_limits<Scalar>::infinity();
  if (!resume_path.empty()) {
    const Checkpoint ck = read_checkpoint(resume_path);
    load_store(ck, model.params(), /*strict=*/true);
    opt.restore(ck.adam_t, ck.moments);
    start_epoch = static_cast<int>(ck.epoch);
    global_step = ck.global_step;
    stall = ck.stall_epochs;
    best = ck.best_val;
    res.best_val = ck.best_val;
  }

  for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(cfg, epoch));
    double loss_sum = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s, ++global_step) {
      Rng order(derive_seed(cfg.seed, SeedTag::kDataOrder,
                            static_cast<uint64_t>(global_step)));
      Rng aug(derive_seed(cfg.seed, SeedTag::kAugment,
                          static_cast<uint64_t>(global_step)));
      std::vector<SlicePair> batch;
      batch.reserve(static_cast<size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) {
        SlicePair p = data.train[order.below(data.train.size())];
        if (cfg.augment) p = augment(p, aug);
        batch.push_back(std::move(p));
      }
      std::vector<const Slice*> lr(batch.size()), hr(batch.size());
      for (size_t i = 0; i < batch.size(); ++i) {
        lr[i] = &batch[i].lr;
        hr[i] = &batch[i].hr;
      }
      const Tensor lr_t = slices_to_tensor(lr, edge);
      const Tensor hr_t = slices_to_tensor(hr, edge);

      model.params().zero_all_grads();
      const Tensor i_sr = model.forward(lr_t, /*inference=*/false, hook).first;
      LossTerms lt = total_loss(i_sr, hr_t, backbone, weights);
      const Scalar loss = lt.total.item();
      if (!std::isfinite(loss))
        throw NumericError("training diverged: loss is not finite at epoch " +
                           std::to_string(epoch + 1) + ", step " +
                           std::to_string(s + 1));
      lt.total.backward();
      if (cfg.clip_norm > 0.0) clip_grad_norm(model.params(), cfg.clip_norm);
      opt.step();
      loss_sum += loss;
    }

    const Scalar val = validation_psnr(model, data.val, hook, cfg.batch_size);
    EpochStats st;
    st.epoch = epoch + 1;
    st.lr = lr_at_epoch(cfg, epoch);
    st.train_loss = loss_sum / steps_per_epoch;
    st.val_psnr = val;
    res.trace.push_back(st);
    if (on_epoch) on_epoch(st);

    const Scalar improvement = val - best;
    if (val > best) {
      best = val;
      res.best_val = val;
      res.best_epoch = epoch + 1;
      if (!checkpoint_path.empty())
        save_state(checkpoint_path, cfg, model.params(), opt, epoch + 1,
                   global_step, stall, best);
    }
    stall = improvement > cfg.early_stop_delta ? 0 : stall + 1;
    if (!checkpoint_path.empty())
      save_state(checkpoint_path + ".last", cfg, model.params(), opt,
                 epoch + 1, global_step, stall, best);
    if (epoch + 1 >= 10 && stall >= cfg.early_stop_patience) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

int warm_start_decoder(TransMRSR& model, const Checkpoint& gan_ck) {
  return load_store_remapped(gan_ck, model.params(), "gen.decoder.",
                             "decoder.");
}

std::vector<EvalRow> evaluate_volumes(
    const TransMRSR& model,
    const std::vector<std::pair<std::string, Volume>>& volumes, int r,
    Plane plane, const LatentHook& hook) {
  if (volumes.empty()) throw DataError("evaluate: no volumes");
  const Axis axis = default_degrade_axis(plane);
  std::vector<EvalRow> rows;
  rows.reserve(volumes.size());
  for (const auto& [id, hr] : volumes) {
    const Volume lr = degrade_volume(hr, r, axis);
    const Volume sr = restore_volume(model, lr, r, plane, axis,
                                     hr.axis_len(axis), /*batch=*/4, hook);
    EvalRow row;
    row.volume_id = id;
    row.plane = plane;
    row.scale = r;
    row.psnr = volume_psnr(sr, hr, plane);
    row.ssim = volume_ssim(sr, hr, plane);
    const auto m_sr = classify_tissues(sr);
    const auto m_hr = classify_tissues(hr);
    row.dice_csf = dice(m_sr[0], m_hr[0]);
    row.dice_g = dice(m_sr[1], m_hr[1]);
    row.dice_w = dice(m_sr[2], m_hr[2]);
    row.dice_avg = (row.dice_csf + row.dice_g + row.dice_w) / 3.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string metrics_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  out << "volume_id,plane,scale,psnr,ssim,dice_w,dice_g,dice_csf,dice_avg\n";
  const auto emit = [&out](const EvalRow& r) {
    out << r.volume_id << ',' << to_string(r.plane) << ',' << r.scale << ','
        << r.psnr << ',' << r.ssim << ',' << r.dice_w << ',' << r.dice_g
        << ',' << r.dice_csf << ',' << r.dice_avg << '\n';
  };
  for (const EvalRow& r : rows) emit(r);
  if (!rows.empty()) {
    EvalRow mean;
    mean.volume_id = "mean";
    mean.plane = rows.front().plane;
    mean.scale = rows.front().scale;
    for (const EvalRow& r : rows) {
      mean.psnr += r.psnr;
      mean.ssim += r.ssim;
      mean.dice_w += r.dice_w;
      mean.dice_g += r.dice_g;
      mean.dice_csf += r.dice_csf;
      mean.dice_avg += r.dice_avg;
    }
    const Scalar n = static_cast<Scalar>(rows.size());
    mean.psnr /= n;
    mean.ssim /= n;
    mean.dice_w /= n;
    mean.dice_g /= n;
    mean.dice_csf /= n;
    mean.dice_avg /= n;
    emit(mean);
  }
  return out.str();
}

}  // namespace tmrsr
