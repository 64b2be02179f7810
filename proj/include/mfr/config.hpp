#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfr/blocks.hpp"
#include "mfr/dataops.hpp"
#include "mfr/losses.hpp"
#include "mfr/optim.hpp"

namespace mfr {

// Flat dotted-key = value lines, # comments. Every key is schema-checked;
// unknown keys are rejected. All fields carry toy-scale defaults; full-scale
// settings are reachable by overriding them.
struct RunConfig {
  std::string model_preset = "toy";  // toy | resnet34
  bool model_se_enabled = true;
  int model_se_reduction = 16;
  double model_dropblock_prob = 0.1;
  int model_dropblock_block_size = 3;

  std::string loss_family = "arcface";
  double loss_scale = 64.0;
  double loss_margin = 0.5;  // family default applied when the key is absent

  double optim_base_lr = 0.1;
  double optim_momentum = 0.9;
  double optim_weight_decay = 5e-4;
  double optim_warmup_epochs = 0.1;
  double optim_decay_epochs = 6.0;
  double optim_total_epochs = 8.0;
  double optim_lr_min = 1e-5;
  double optim_restart_peak = 0.01;
  double optim_restart_len = 1.0;

  bool ema_enabled = true;
  double ema_decay = 0.999;

  double sampler_mask_ratio_cap = 0.10;
  bool sampler_shuffle = true;

  double aug_p_hflip = 0.5;
  double aug_p_blur = 0.05;
  double aug_p_rgb_shift = 0.05;
  double aug_p_compress = 0.05;
  int aug_crop_pad = 2;

  int train_batch_size = 64;
  std::uint64_t train_seed = 42;
  std::string data_manifest;

  std::vector<double> eval_far_targets = {1e-1, 1e-2, 1e-3};
  double eval_track_far = 1e-4;
  std::string eval_convention = "tar";  // tar | error

  static RunConfig from_map(const std::map<std::string, std::string>& kv);
  static RunConfig load(const std::string& path);
  void validate() const;
  std::string echo_text() const;

  BackboneConfig backbone() const;
  MarginConfig margin(int class_count) const;
  SGDConfig sgd() const;
  ScheduleConfig schedule(int steps_per_epoch) const;
  SamplerConfig sampler(std::uint64_t seed) const;
  AugConfig photometric_aug() const;  // crop disabled; crop runs post-alignment
};

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);

}  // namespace mfr
