#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "mfr/checkpoint.hpp"
#include "mfr/commands.hpp"
#include "mfr/dataops.hpp"
#include "mfr/evalkit.hpp"

namespace mfr {

namespace {

namespace fs = std::filesystem;

std::string resolve_rel(const std::string& dir, const std::string& p) {
  if (!p.empty() && p.front() == '/') return p;
  return dir.empty() ? p : dir + "/" + p;
}

// Pixels to network range: (v - 127.5)/128, CHW.
void image_into_tensor(const Image& img, Tensor<float>& batch, int slot) {
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  float* dst = batch.data().data() + static_cast<std::int64_t>(slot) * 3 * plane;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        dst[c * plane + y * img.width + x] = (img.at(x, y)[c] - 127.5f) / 128.0f;
}

Image load_aligned(const std::string& path, const Landmarks& lm) {
  const Image raw = read_ppm(path);
  const Transform t = estimate_similarity(lm, kCanonicalLandmarks);
  return warp_to_template(raw, t, 112);
}

std::string ema_sibling(const std::string& checkpoint) {
  const std::string suffix = ".ckpt";
  if (checkpoint.size() > suffix.size() &&
      checkpoint.compare(checkpoint.size() - suffix.size(), suffix.size(), suffix) == 0)
    return checkpoint.substr(0, checkpoint.size() - suffix.size()) + "_ema" + suffix;
  return checkpoint + "_ema";
}

int count_identities(const std::vector<ManifestRecord>& records) {
  int max_id = -1;
  for (const auto& r : records) max_id = std::max(max_id, r.identity);
  return max_id + 1;
}

}  // namespace

void cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.data_manifest.empty()) throw ConfigError("train: data.manifest is required");
  const double epochs_round = std::round(cfg.optim_total_epochs);
  if (std::abs(cfg.optim_total_epochs - epochs_round) > 1e-9)
    throw ConfigError("train: optim.total_epochs must be a whole number of epochs");
  const int epochs = static_cast<int>(epochs_round);

  const auto records = load_manifest(cfg.data_manifest);
  if (records.empty()) throw ValidationError("train: manifest has no records");
  const std::string data_dir = fs::path(cfg.data_manifest).parent_path().string();
  const int num_ids = count_identities(records);
  const std::uint64_t seed = cfg.train_seed;

  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "config_resolved.txt", std::ios::trunc);
    echo << cfg.echo_text();
    if (!echo) throw IoError("train: cannot write config echo into " + out_dir);
  }

  Rng init_rng(mix_seed(seed, "init"));
  Backbone<float> net;
  net.init(cfg.backbone(), init_rng);
  Tensor<float> class_w = Tensor<float>::randn({num_ids, cfg.backbone().embedding_dim}, init_rng,
                                               0.01f);
  class_w.set_requires_grad(true);
  const MarginConfig margin_cfg = cfg.margin(num_ids);
  margin_cfg.validate();

  auto params = net.params();
  params.push_back({"loss.weight", class_w});
  SGD<float> opt;
  opt.init(params, cfg.sgd());
  EMAState<float> ema;
  if (cfg.ema_enabled) ema.init(params, cfg.ema_decay);

  // plan size is seed-independent, so the schedule length holds across epochs
  const std::size_t plan_len = plan_epoch(records, cfg.sampler(mix_seed(seed, "plan", 0))).size();
  const int batch = std::min<int>(cfg.train_batch_size, static_cast<int>(plan_len));
  int steps_per_epoch = static_cast<int>((plan_len + batch - 1) / batch);
  if (plan_len % batch == 1 && plan_len > 1) --steps_per_epoch;  // skip a size-1 tail batch
  const ScheduleConfig sched = cfg.schedule(steps_per_epoch);
  sched.validate();

  std::ofstream log(fs::path(out_dir) / "train_log.csv", std::ios::trunc);
  log << "step,epoch,lr,loss,masked_fraction\n";
  std::deque<std::string> history;
  const AugConfig photo = cfg.photometric_aug();
  AugConfig crop_only;
  crop_only.p_hflip = crop_only.p_blur = crop_only.p_rgb_shift = crop_only.p_compress = 0;
  crop_only.crop_pad = cfg.aug_crop_pad;

  long long gstep = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto plan = plan_epoch(records, cfg.sampler(mix_seed(seed, "plan", epoch)));
    std::size_t masked_in_plan = 0;
    for (int idx : plan) masked_in_plan += records[idx].masked;
    const double masked_fraction = static_cast<double>(masked_in_plan) / plan.size();

    double epoch_loss = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = static_cast<std::size_t>(step) * batch;
      const std::size_t end = std::min(begin + batch, plan.size());
      const int bsz = static_cast<int>(end - begin);
      Tensor<float> x = Tensor<float>::zeros({bsz, 3, 112, 112});
      std::vector<int> labels(bsz);
      for (int i = 0; i < bsz; ++i) {
        const ManifestRecord& rec = records[plan[begin + i]];
        Rng srng(mix_seed(seed, "sample", static_cast<std::uint64_t>(epoch), begin + i));
        const Image raw = read_ppm(resolve_rel(data_dir, rec.path));
        AugResult aug = augment(raw, rec.landmarks, photo, srng);
        const Transform t = estimate_similarity(aug.landmarks, kCanonicalLandmarks);
        Image aligned = warp_to_template(aug.image, t, 112);
        if (crop_only.crop_pad > 0)
          aligned = augment(aligned, kCanonicalLandmarks, crop_only, srng).image;
        image_into_tensor(aligned, x, i);
        labels[i] = rec.identity;
      }

      const double lr = lr_at(gstep, sched);
      Rng drop_rng(mix_seed(seed, "drop", static_cast<std::uint64_t>(gstep)));
      Tape<float> tape;
      Tensor<float> emb = net.forward(x, Mode::train, drop_rng, &tape);
      Tensor<float> loss = margin_loss(emb, class_w, labels, margin_cfg, &tape);
      const double loss_v = loss.item();

      char row[160];
      std::snprintf(row, sizeof(row), "%lld,%d,%.10g,%.6f,%.6f", gstep, epoch, lr, loss_v,
                    masked_fraction);
      log << row << "\n";
      history.push_back(row);
      if (history.size() > 10) history.pop_front();
      if (!std::isfinite(loss_v)) {
        std::string diag = "train: non-finite loss at step " + std::to_string(gstep) +
                           "; recent (step,epoch,lr,loss,masked) history:";
        for (const auto& h : history) diag += "\n  " + h;
        throw Error(diag);
      }

      backward(loss, tape);
      opt.step(params, lr);
      for (auto& p : params) p.tensor.zero_grad();
      if (cfg.ema_enabled) ema_update(ema, params);
      epoch_loss += loss_v;
      ++gstep;
    }
    std::cout << "epoch " << epoch << ": mean loss " << epoch_loss / steps_per_epoch
              << ", masked fraction " << masked_fraction << "\n";
  }
  if (!log) throw IoError("train: failure writing train_log.csv");

  write_weights((fs::path(out_dir) / "model.ckpt").string(),
                collect_weights(params, net.buffers()));
  if (cfg.ema_enabled) {
    ema_swap(ema, params);
    write_weights((fs::path(out_dir) / "model_ema.ckpt").string(),
                  collect_weights(params, net.buffers()));
    ema_swap(ema, params);
  }
  std::cout << "train: wrote checkpoints to " << out_dir << "\n";
}

void cmd_extract(const RunConfig& cfg, const ExtractOptions& opt) {
  const auto records = load_manifest(opt.manifest);
  if (records.empty()) throw ValidationError("extract: manifest has no records");
  const std::string data_dir = fs::path(opt.manifest).parent_path().string();

  std::string ckpt_path = opt.checkpoint;
  if (opt.use_ema) {
    ckpt_path = ema_sibling(ckpt_path);
    if (!fs::exists(ckpt_path))
      throw IoError("extract: EMA checkpoint not found: " + ckpt_path);
  }
  const auto weights = read_weights(ckpt_path);

  Rng init_rng(0);
  Backbone<float> net;
  net.init(cfg.backbone(), init_rng);
  auto params = net.params();
  for (const auto& t : weights)  // absorb the classification head if present
    if (t.name == "loss.weight") {
      Tensor<float> w = Tensor<float>::zeros(t.shape);
      params.push_back({"loss.weight", w});
      break;
    }
  apply_weights(weights, params, net.buffers());

  EmbeddingSet set;
  std::vector<std::string> failures;
  const int batch = 32;
  Rng unused_rng(0);
  for (std::size_t at = 0; at < records.size();) {
    std::vector<const ManifestRecord*> chunk;
    std::vector<Image> aligned;
    while (at < records.size() && static_cast<int>(chunk.size()) < batch) {
      const ManifestRecord& rec = records[at++];
      try {
        aligned.push_back(load_aligned(resolve_rel(data_dir, rec.path), rec.landmarks));
        chunk.push_back(&rec);
      } catch (const IoError&) {
        failures.push_back(rec.path);
      } catch (const ParseError&) {
        failures.push_back(rec.path);
      }
    }
    if (chunk.empty()) continue;
    Tensor<float> x = Tensor<float>::zeros({static_cast<int>(chunk.size()), 3, 112, 112});
    for (std::size_t i = 0; i < chunk.size(); ++i) image_into_tensor(aligned[i], x, i);
    Tensor<float> emb = net.forward(x, Mode::eval, unused_rng, nullptr);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      set.add(chunk[i]->path, emb.data().data() + i * emb.dim(1), emb.dim(1));
  }
  if (!failures.empty()) {
    std::cerr << "extract: skipped " << failures.size() << " unreadable record(s):";
    for (const auto& f : failures) std::cerr << " " << f;
    std::cerr << "\n";
  }
  write_embeddings(opt.out, set);
  std::cout << "extract: wrote " << set.count() << " embeddings of dim " << set.dim << " to "
            << opt.out << "\n";
}

void cmd_concat(const std::string& a_path, const std::string& b_path, const std::string& out_path,
                bool normalize_parts) {
  const EmbeddingSet joined =
      concat_features(read_embeddings(a_path), read_embeddings(b_path), normalize_parts);
  write_embeddings(out_path, joined);
  std::cout << "concat: wrote " << joined.count() << " embeddings of dim " << joined.dim << " to "
            << out_path << "\n";
}

namespace {

nlohmann::json far_points_json(const std::vector<FarPoint>& pts, const std::string& convention) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) {
    nlohmann::json row{{"far_target", p.far_target},
                       {"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold)
                                                                : nlohmann::json()},
                       {"tar", p.tar}};
    if (convention == "error") row["error"] = 1.0 - p.tar;
    arr.push_back(row);
  }
  return arr;
}

void print_far_points(const std::string& label, const std::vector<FarPoint>& pts,
                      const std::string& convention) {
  for (const auto& p : pts) {
    std::printf("  %-9s FAR<=%-8g TAR %.5f", label.c_str(), p.far_target, p.tar);
    if (convention == "error") std::printf("  err %.5f", 1.0 - p.tar);
    if (std::isfinite(p.threshold))
      std::printf("  (threshold %.5f)\n", p.threshold);
    else
      std::printf("  (no qualifying threshold)\n");
  }
}

}  // namespace

void cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
  const EmbeddingSet set = read_embeddings(opt.embeddings);
  const auto pairs = load_pairs(opt.pairs);
  if (pairs.empty()) throw ValidationError("eval: pair list is empty");
  std::string missing;
  for (const auto& p : pairs)
    for (const auto& k : {p.a, p.b})
      if (!set.has(k)) missing += (missing.empty() ? "" : ", ") + k;
  if (!missing.empty())
    throw KeyError("eval: pair paths missing from the embedding set: " + missing);

  const auto scores = verification_scores(set, pairs);
  auto subset_points = [&](auto keep) -> std::vector<FarPoint> {
    std::vector<double> s;
    std::vector<char> l;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (keep(pairs[i])) {
        s.push_back(scores[i]);
        l.push_back(pairs[i].same ? 1 : 0);
      }
    return tar_at_far(s, l, cfg.eval_far_targets);
  };
  auto subset_track = [&](auto keep) -> double {
    std::vector<double> s;
    std::vector<char> l;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (keep(pairs[i])) {
        s.push_back(scores[i]);
        l.push_back(pairs[i].same ? 1 : 0);
      }
    return tar_at_far(s, l, {cfg.eval_track_far})[0].tar;
  };

  const auto all_pts = subset_points([](const PairRecord&) { return true; });
  const auto masked_pts = subset_points([](const PairRecord& p) { return p.masked; });
  const auto unmasked_pts = subset_points([](const PairRecord& p) { return !p.masked; });
  const double mfr_masked_old = subset_track([](const PairRecord& p) { return p.masked; });
  const double sfr_all = subset_track([](const PairRecord& p) { return !p.masked; });
  const double mfr_w = weighted_mfr(mfr_masked_old, sfr_all);

  std::printf("verification over %zu pairs (convention: %s)\n", pairs.size(),
              cfg.eval_convention.c_str());
  print_far_points("all", all_pts, cfg.eval_convention);
  print_far_points("masked", masked_pts, cfg.eval_convention);
  print_far_points("unmasked", unmasked_pts, cfg.eval_convention);
  std::printf("weighted composite at FAR<=%g:\n", cfg.eval_track_far);
  std::printf("  mfr_masked_old %.5f\n  sfr_all %.5f\n  mfr_weighted %.5f\n", mfr_masked_old,
              sfr_all, mfr_w);

  nlohmann::json report{{"pairs", pairs.size()},
                        {"convention", cfg.eval_convention},
                        {"far_points",
                         {{"all", far_points_json(all_pts, cfg.eval_convention)},
                          {"masked", far_points_json(masked_pts, cfg.eval_convention)},
                          {"unmasked", far_points_json(unmasked_pts, cfg.eval_convention)}}},
                        {"track_far", cfg.eval_track_far},
                        {"mfr_masked_old", mfr_masked_old},
                        {"sfr_all", sfr_all},
                        {"mfr_weighted", mfr_w}};

  if (!opt.manifest.empty()) {
    const auto records = load_manifest(opt.manifest);
    std::map<std::string, int> identity_of;
    std::map<int, std::string> gallery_key;
    for (const auto& r : records) {
      identity_of[r.path] = r.identity;
      gallery_key.emplace(r.identity, r.path);  // first record per identity
    }
    EmbeddingSet gallery, probe;
    for (const auto& r : records) {
      if (!set.has(r.path)) continue;
      auto it = gallery_key.find(r.identity);
      if (it != gallery_key.end() && it->second == r.path)
        gallery.add(r.path, set.vec(r.path), set.dim);
      else
        probe.add(r.path, set.vec(r.path), set.dim);
    }
    const double top1 = identification_top1(gallery, probe, identity_of);
    std::printf("top-1 identification: %.5f (%d gallery, %d probe)\n", top1, gallery.count(),
                probe.count());
    report["top1"] = top1;
    report["gallery_count"] = gallery.count();
    report["probe_count"] = probe.count();
  }

  if (!opt.report.empty()) {
    std::ofstream out(opt.report, std::ios::trunc);
    if (!out) throw IoError("eval: cannot write report file " + opt.report);
    out << report.dump(2) << "\n";
  }
}

}  // namespace mfr
