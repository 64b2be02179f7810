#include <iostream>

#include "CLI11.hpp"
#include "mfr/commands.hpp"

namespace {

mfr::RunConfig load_config(const std::string& config_path, std::uint64_t seed_override,
                           bool seed_given) {
  mfr::RunConfig cfg =
      config_path.empty() ? mfr::RunConfig() : mfr::RunConfig::load(config_path);
  if (seed_given) cfg.train_seed = seed_override;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked/standard face recognition toolkit"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--seed", seed, "seed override")
        ->each([&](const std::string&) { seed_given = true; });
    cmd->add_flag("--force", force, "overwrite existing outputs");
  };

  mfr::SynthOptions synth;
  CLI::App* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic face dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--identities", synth.identities, "number of identities");
  synth_cmd->add_option("--images", synth.images_per_identity, "images per identity");
  synth_cmd->add_option("--masked-fraction", synth.masked_fraction,
                        "fraction of images with a mask overlay");
  synth_cmd->add_option("--holdout", synth.holdout_per_identity,
                        "held-out images per identity for evaluation");
  add_common(synth_cmd);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a manifest");
  train_cmd->add_option("--out", out, "run output directory")->required();
  std::string manifest_flag;
  train_cmd->add_option("--manifest", manifest_flag,
                        "training manifest (overrides data.manifest)");
  add_common(train_cmd);

  mfr::ExtractOptions extract;
  std::vector<std::string> concat_inputs;
  CLI::App* extract_cmd = app.add_subcommand("extract", "compute embeddings for a manifest");
  extract_cmd->add_option("--checkpoint", extract.checkpoint, "weight checkpoint");
  extract_cmd->add_option("--manifest", extract.manifest, "manifest to embed");
  extract_cmd->add_option("--out", extract.out, "output embedding file")->required();
  extract_cmd->add_flag("--use-ema", extract.use_ema, "load the EMA sibling checkpoint");
  extract_cmd
      ->add_option("--concat", concat_inputs,
                   "join two embedding files instead of running a model")
      ->expected(2);
  add_common(extract_cmd);

  mfr::EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "verification and identification metrics");
  eval_cmd->add_option("--embeddings", eval.embeddings, "embedding file")->required();
  eval_cmd->add_option("--pairs", eval.pairs, "pair list CSV")->required();
  eval_cmd->add_option("--report", eval.report, "JSON report output path");
  eval_cmd->add_option("--manifest", eval.manifest,
                       "manifest enabling top-1 identification (first image per identity is "
                       "the gallery)");
  add_common(eval_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad usage is a validation failure
  }

  try {
    if (synth_cmd->parsed()) {
      if (seed_given) synth.seed = seed;
      synth.force = force;
      mfr::cmd_synth_data(synth);
    } else if (train_cmd->parsed()) {
      mfr::RunConfig cfg = load_config(config_path, seed, seed_given);
      if (!manifest_flag.empty()) cfg.data_manifest = manifest_flag;
      mfr::cmd_train(cfg, out);
    } else if (extract_cmd->parsed()) {
      if (!concat_inputs.empty()) {
        mfr::cmd_concat(concat_inputs[0], concat_inputs[1], extract.out, true);
      } else {
        if (extract.checkpoint.empty() || extract.manifest.empty())
          throw mfr::ValidationError(
              "extract: either --concat A B or both --checkpoint and --manifest are required");
        mfr::cmd_extract(load_config(config_path, seed, seed_given), extract);
      }
    } else if (eval_cmd->parsed()) {
      mfr::cmd_eval(load_config(config_path, seed, seed_given), eval);
    }
  } catch (const mfr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mfr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mfr::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
