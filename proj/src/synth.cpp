#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "mfr/commands.hpp"
#include "mfr/dataops.hpp"
#include "mfr/evalkit.hpp"

namespace mfr {

namespace {

struct Color {
  double r, g, b;
};

Color pick_color(Rng& rng, double lo, double hi) {
  return {uniform_range(rng, lo, hi), uniform_range(rng, lo, hi), uniform_range(rng, lo, hi)};
}

// Everything that makes one synthetic identity look like itself. Cues live in
// both the upper face (hair, stripes, eyes) and the lower face (mouth, chin)
// so masked variants stay recognizable.
struct IdentityStyle {
  Color background, checker, skin, hair, eye, stripe, mouth, chin;
  double stripe_x[3];
  int checker_period;

  static IdentityStyle make(std::uint64_t seed, int identity) {
    Rng rng(mix_seed(seed, "identity", static_cast<std::uint64_t>(identity)));
    IdentityStyle s;
    s.background = pick_color(rng, 20, 120);
    s.checker = pick_color(rng, 60, 200);
    s.skin = {uniform_range(rng, 120, 230), uniform_range(rng, 90, 190),
              uniform_range(rng, 70, 170)};
    s.hair = pick_color(rng, 10, 150);
    s.eye = pick_color(rng, 0, 255);
    s.stripe = pick_color(rng, 0, 255);
    s.mouth = pick_color(rng, 40, 220);
    s.chin = pick_color(rng, 0, 255);
    for (double& x : s.stripe_x) x = uniform_range(rng, 24, 88);
    s.checker_period = 6 + static_cast<int>(uniform_below(rng, 9));
    return s;
  }
};

// Procedural face in the canonical 112x112 frame.
Color sample_canonical(const IdentityStyle& s, double x, double y) {
  const double fx = (x - 56.0) / 38.0, fy = (y - 60.0) / 48.0;
  const bool face = fx * fx + fy * fy <= 1.0;
  if (!face) {
    const int cx = static_cast<int>(std::floor(x / s.checker_period));
    const int cy = static_cast<int>(std::floor(y / s.checker_period));
    return ((cx + cy) & 1) ? s.checker : s.background;
  }
  Color c = s.skin;
  if (y < 28) c = s.hair;
  if (y < 45)
    for (double sx : s.stripe_x)
      if (std::abs(x - sx) < 3) c = s.stripe;
  for (int e = 0; e < 2; ++e)
    if (std::abs(x - kCanonicalLandmarks.x(e)) < 5 && std::abs(y - kCanonicalLandmarks.y(e)) < 5)
      c = s.eye;
  if (y >= 58 && y <= 72 && std::abs(x - 56.0) < (y - 56.0) / 4.0)
    c = {s.skin.r * 0.7, s.skin.g * 0.7, s.skin.b * 0.7};
  if (std::abs(x - 56.0) < 17 && std::abs(y - 88.0) < 5) c = s.mouth;
  if (std::abs(x - 56.0) < 6 && std::abs(y - 103.0) < 4) c = s.chin;
  return c;
}

std::uint8_t quant(double v, double noise) {
  return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(v + noise))));
}

// Identity pattern warped by a per-image nuisance similarity; landmarks are
// the transformed canonical points.
void render_face(const IdentityStyle& style, std::uint64_t seed, int identity, int index,
                 Image* out, Landmarks* lm) {
  Rng rng(mix_seed(seed, "image", static_cast<std::uint64_t>(identity),
                   static_cast<std::uint64_t>(index)));
  const double scale = uniform_range(rng, 0.88, 1.10);
  const double angle = uniform_range(rng, -10.0, 10.0) * M_PI / 180.0;
  const double tx = uniform_range(rng, -5.0, 5.0), ty = uniform_range(rng, -5.0, 5.0);
  const double ca = scale * std::cos(angle), sa = scale * std::sin(angle);
  const double cx = 56.0, cy = 56.0;
  Transform t;  // canonical -> image, rotation about the frame center
  t << ca, -sa, cx + tx - (ca * cx - sa * cy), sa, ca, cy + ty - (sa * cx + ca * cy);
  const Transform inv = invert_similarity(t);

  *out = Image::solid(112, 112, 0, 0, 0);
  for (int y = 0; y < 112; ++y)
    for (int x = 0; x < 112; ++x) {
      const auto p = apply_transform(inv, x, y);
      const Color c = sample_canonical(style, p[0], p[1]);
      std::uint8_t* px = out->at(x, y);
      px[0] = quant(c.r, uniform_range(rng, -6, 6));
      px[1] = quant(c.g, uniform_range(rng, -6, 6));
      px[2] = quant(c.b, uniform_range(rng, -6, 6));
    }
  for (int i = 0; i < 5; ++i) {
    const auto p = apply_transform(t, kCanonicalLandmarks.x(i), kCanonicalLandmarks.y(i));
    lm->pts[i] = {p[0], p[1]};
  }
}

// Evenly spread flags hitting floor(n * fraction) exactly.
bool masked_slot(int index, double fraction) {
  return std::floor((index + 1) * fraction) - std::floor(index * fraction) >= 1.0;
}

}  // namespace

void cmd_synth_data(const SynthOptions& opt) {
  if (opt.identities < 2) throw ValidationError("synth-data: need at least 2 identities");
  if (opt.images_per_identity < 2)
    throw ValidationError("synth-data: need at least 2 images per identity");
  if (opt.masked_fraction < 0 || opt.masked_fraction >= 1)
    throw ValidationError("synth-data: masked fraction must lie in [0,1)");
  if (opt.holdout_per_identity < 0 || opt.holdout_per_identity >= opt.images_per_identity)
    throw ValidationError("synth-data: holdout must leave at least one training image");

  namespace fs = std::filesystem;
  const fs::path dir(opt.out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !opt.force)
    throw ValidationError("synth-data: output directory " + opt.out_dir +
                          " is not empty (use --force to overwrite)");
  fs::create_directories(dir);

  const MaskTemplate tmpl = MaskTemplate::standard();
  std::vector<ManifestRecord> all, train, eval_split;
  char name[64];
  for (int id = 0; id < opt.identities; ++id) {
    const IdentityStyle style = IdentityStyle::make(opt.seed, id);
    for (int idx = 0; idx < opt.images_per_identity; ++idx) {
      Image img;
      Landmarks lm;
      render_face(style, opt.seed, id, idx, &img, &lm);
      ManifestRecord rec;
      rec.identity = id;
      rec.landmarks = lm;
      rec.masked = masked_slot(idx, opt.masked_fraction);
      if (rec.masked) {
        Rng mask_rng(mix_seed(opt.seed, "mask", static_cast<std::uint64_t>(id),
                              static_cast<std::uint64_t>(idx)));
        img = apply_mask_overlay(img, lm, tmpl, mask_rng);
      }
      std::snprintf(name, sizeof(name), "id%03d_img%02d.ppm", id, idx);
      rec.path = name;
      write_ppm((dir / name).string(), img);
      all.push_back(rec);
      const bool holdout = idx >= opt.images_per_identity - opt.holdout_per_identity;
      (holdout ? eval_split : train).push_back(rec);
    }
  }
  write_manifest((dir / "manifest.csv").string(), all);
  write_manifest((dir / "manifest_train.csv").string(), train);
  if (!eval_split.empty()) write_manifest((dir / "manifest_eval.csv").string(), eval_split);

  // evaluation pairs: every same-identity pair in the holdout plus a seeded
  // draw of impostor pairs
  if (!eval_split.empty() && opt.holdout_per_identity >= 2) {
    const int per = opt.holdout_per_identity;
    std::vector<PairRecord> pairs;
    for (int id = 0; id < opt.identities; ++id)
      for (int i = 0; i < per; ++i)
        for (int j = i + 1; j < per; ++j) {
          const ManifestRecord& a = eval_split[id * per + i];
          const ManifestRecord& b = eval_split[id * per + j];
          pairs.push_back({a.path, b.path, true, a.masked || b.masked});
        }
    const std::size_t n_neg = 4 * pairs.size();
    Rng pair_rng(mix_seed(opt.seed, "pairs"));
    for (std::size_t k = 0; k < n_neg; ++k) {
      const int id_a = static_cast<int>(uniform_below(pair_rng, opt.identities));
      int id_b = static_cast<int>(uniform_below(pair_rng, opt.identities - 1));
      if (id_b >= id_a) ++id_b;
      const ManifestRecord& a = eval_split[id_a * per + uniform_below(pair_rng, per)];
      const ManifestRecord& b = eval_split[id_b * per + uniform_below(pair_rng, per)];
      pairs.push_back({a.path, b.path, false, a.masked || b.masked});
    }
    write_pairs((dir / "pairs_eval.csv").string(), pairs);
  }

  std::cout << "synth-data: wrote " << all.size() << " images over " << opt.identities
            << " identities to " << opt.out_dir << "\n";
}

}  // namespace mfr
