#pragma once

#include <string>

#include "mfr/config.hpp"

namespace mfr {

struct SynthOptions {
  std::string out_dir;
  int identities = 16;
  int images_per_identity = 20;
  double masked_fraction = 0.3;
  int holdout_per_identity = 4;
  std::uint64_t seed = 42;
  bool force = false;
};

// Writes PPM faces, manifest.csv plus train/eval splits, and an evaluation
// pair list into out_dir.
void cmd_synth_data(const SynthOptions& opt);

// Full training loop; writes model.ckpt, model_ema.ckpt, train_log.csv, and
// config_resolved.txt into out_dir.
void cmd_train(const RunConfig& cfg, const std::string& out_dir);

struct ExtractOptions {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  bool use_ema = false;
};

void cmd_extract(const RunConfig& cfg, const ExtractOptions& opt);

void cmd_concat(const std::string& a_path, const std::string& b_path, const std::string& out_path,
                bool normalize_parts);

struct EvalOptions {
  std::string embeddings;
  std::string pairs;
  std::string report;    // JSON output path; empty skips the file
  std::string manifest;  // enables top-1 identification when given
};

void cmd_eval(const RunConfig& cfg, const EvalOptions& opt);

}  // namespace mfr
