#include "mfr/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mfr {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an unsigned integer, got '" + v + "'");
  }
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  bool margin_given = false;
  for (const auto& [key, v] : kv) {
    if (key == "model.preset") c.model_preset = v;
    else if (key == "model.se_enabled") c.model_se_enabled = parse_bool(key, v);
    else if (key == "model.se_reduction") c.model_se_reduction = parse_int(key, v);
    else if (key == "model.dropblock_prob") c.model_dropblock_prob = parse_double(key, v);
    else if (key == "model.dropblock_block_size") c.model_dropblock_block_size = parse_int(key, v);
    else if (key == "loss.family") c.loss_family = v;
    else if (key == "loss.scale") c.loss_scale = parse_double(key, v);
    else if (key == "loss.margin") { c.loss_margin = parse_double(key, v); margin_given = true; }
    else if (key == "optim.base_lr") c.optim_base_lr = parse_double(key, v);
    else if (key == "optim.momentum") c.optim_momentum = parse_double(key, v);
    else if (key == "optim.weight_decay") c.optim_weight_decay = parse_double(key, v);
    else if (key == "optim.warmup_epochs") c.optim_warmup_epochs = parse_double(key, v);
    else if (key == "optim.decay_epochs") c.optim_decay_epochs = parse_double(key, v);
    else if (key == "optim.total_epochs") c.optim_total_epochs = parse_double(key, v);
    else if (key == "optim.lr_min") c.optim_lr_min = parse_double(key, v);
    else if (key == "optim.restart_peak") c.optim_restart_peak = parse_double(key, v);
    else if (key == "optim.restart_len") c.optim_restart_len = parse_double(key, v);
    else if (key == "ema.enabled") c.ema_enabled = parse_bool(key, v);
    else if (key == "ema.decay") c.ema_decay = parse_double(key, v);
    else if (key == "sampler.mask_ratio_cap") c.sampler_mask_ratio_cap = parse_double(key, v);
    else if (key == "sampler.shuffle") c.sampler_shuffle = parse_bool(key, v);
    else if (key == "aug.p_hflip") c.aug_p_hflip = parse_double(key, v);
    else if (key == "aug.p_blur") c.aug_p_blur = parse_double(key, v);
    else if (key == "aug.p_rgb_shift") c.aug_p_rgb_shift = parse_double(key, v);
    else if (key == "aug.p_compress") c.aug_p_compress = parse_double(key, v);
    else if (key == "aug.crop_pad") c.aug_crop_pad = parse_int(key, v);
    else if (key == "train.batch_size") c.train_batch_size = parse_int(key, v);
    else if (key == "train.seed") c.train_seed = parse_u64(key, v);
    else if (key == "data.manifest") c.data_manifest = v;
    else if (key == "eval.far_targets") c.eval_far_targets = parse_double_list(key, v);
    else if (key == "eval.track_far") c.eval_track_far = parse_double(key, v);
    else if (key == "eval.convention") c.eval_convention = v;
    else throw ConfigError("unknown config key: " + key);
  }
  if (!margin_given) {
    if (c.loss_family == "cosface") c.loss_margin = 0.35;
    else if (c.loss_family == "softmax") c.loss_margin = 0.0;
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_map(parse_config_text(buf.str(), path));
}

void RunConfig::validate() const {
  backbone().validate();
  margin(2).validate();
  ScheduleConfig sc = schedule(1);
  sc.validate();
  SGDConfig sg = sgd();
  if (sg.momentum < 0 || sg.momentum >= 1) throw ConfigError("optim.momentum must lie in [0,1)");
  if (sg.weight_decay < 0) throw ConfigError("optim.weight_decay must be non-negative");
  if (ema_decay <= 0 || ema_decay >= 1) throw ConfigError("ema.decay must lie in (0,1)");
  SamplerConfig sm = sampler(0);
  if (sm.mask_ratio_cap < 0 || sm.mask_ratio_cap >= 1)
    throw ConfigError("sampler.mask_ratio_cap must lie in [0,1)");
  photometric_aug().validate();
  if (aug_crop_pad < 0) throw ConfigError("aug.crop_pad must be non-negative");
  if (train_batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  for (double f : eval_far_targets)
    if (f <= 0 || f > 1) throw ConfigError("eval.far_targets entries must lie in (0,1]");
  if (eval_track_far <= 0 || eval_track_far > 1)
    throw ConfigError("eval.track_far must lie in (0,1]");
  if (eval_convention != "tar" && eval_convention != "error")
    throw ConfigError("eval.convention must be 'tar' or 'error'");
}

std::string RunConfig::echo_text() const {
  std::stringstream out;
  out << "# resolved run configuration\n";
  out << "model.preset = " << model_preset << "\n";
  out << "model.se_enabled = " << (model_se_enabled ? "true" : "false") << "\n";
  out << "model.se_reduction = " << model_se_reduction << "\n";
  out << "model.dropblock_prob = " << fmt(model_dropblock_prob) << "\n";
  out << "model.dropblock_block_size = " << model_dropblock_block_size << "\n";
  out << "loss.family = " << loss_family << "\n";
  out << "loss.scale = " << fmt(loss_scale) << "\n";
  out << "loss.margin = " << fmt(loss_margin) << "\n";
  out << "optim.base_lr = " << fmt(optim_base_lr) << "\n";
  out << "optim.momentum = " << fmt(optim_momentum) << "\n";
  out << "optim.weight_decay = " << fmt(optim_weight_decay) << "\n";
  out << "optim.warmup_epochs = " << fmt(optim_warmup_epochs) << "\n";
  out << "optim.decay_epochs = " << fmt(optim_decay_epochs) << "\n";
  out << "optim.total_epochs = " << fmt(optim_total_epochs) << "\n";
  out << "optim.lr_min = " << fmt(optim_lr_min) << "\n";
  out << "optim.restart_peak = " << fmt(optim_restart_peak) << "\n";
  out << "optim.restart_len = " << fmt(optim_restart_len) << "\n";
  out << "ema.enabled = " << (ema_enabled ? "true" : "false") << "\n";
  out << "ema.decay = " << fmt(ema_decay) << "\n";
  out << "sampler.mask_ratio_cap = " << fmt(sampler_mask_ratio_cap) << "\n";
  out << "sampler.shuffle = " << (sampler_shuffle ? "true" : "false") << "\n";
  out << "aug.p_hflip = " << fmt(aug_p_hflip) << "\n";
  out << "aug.p_blur = " << fmt(aug_p_blur) << "\n";
  out << "aug.p_rgb_shift = " << fmt(aug_p_rgb_shift) << "\n";
  out << "aug.p_compress = " << fmt(aug_p_compress) << "\n";
  out << "aug.crop_pad = " << aug_crop_pad << "\n";
  out << "train.batch_size = " << train_batch_size << "\n";
  out << "train.seed = " << train_seed << "\n";
  if (!data_manifest.empty()) out << "data.manifest = " << data_manifest << "\n";
  out << "eval.far_targets = ";
  for (std::size_t i = 0; i < eval_far_targets.size(); ++i)
    out << (i ? "," : "") << fmt(eval_far_targets[i]);
  out << "\n";
  out << "eval.track_far = " << fmt(eval_track_far) << "\n";
  out << "eval.convention = " << eval_convention << "\n";
  return out.str();
}

BackboneConfig RunConfig::backbone() const {
  BackboneConfig b;
  if (model_preset == "toy") b = BackboneConfig::toy();
  else if (model_preset == "resnet34") b = BackboneConfig::resnet34();
  else throw ConfigError("model.preset must be 'toy' or 'resnet34'");
  b.se_enabled = model_se_enabled;
  b.se_reduction = model_se_reduction;
  b.dropblock.drop_prob = model_dropblock_prob;
  b.dropblock.block_size = model_dropblock_block_size;
  return b;
}

MarginConfig RunConfig::margin(int class_count) const {
  MarginConfig m;
  m.family = loss_family_from_string(loss_family);
  m.s = loss_scale;
  m.m = loss_margin;
  m.class_count = class_count;
  return m;
}

SGDConfig RunConfig::sgd() const { return {optim_momentum, optim_weight_decay}; }

ScheduleConfig RunConfig::schedule(int steps_per_epoch) const {
  ScheduleConfig s;
  s.base_lr = optim_base_lr;
  s.warmup_epochs = optim_warmup_epochs;
  s.decay_epochs = optim_decay_epochs;
  s.total_epochs = optim_total_epochs;
  s.lr_min = optim_lr_min;
  s.steps_per_epoch = steps_per_epoch;
  s.restart_peak = optim_restart_peak;
  s.restart_len = optim_restart_len;
  return s;
}

SamplerConfig RunConfig::sampler(std::uint64_t seed) const {
  return {sampler_mask_ratio_cap, seed, sampler_shuffle};
}

AugConfig RunConfig::photometric_aug() const {
  AugConfig a;
  a.p_hflip = aug_p_hflip;
  a.p_blur = aug_p_blur;
  a.p_rgb_shift = aug_p_rgb_shift;
  a.p_compress = aug_p_compress;
  a.crop_pad = 0;
  return a;
}

}  // namespace mfr
