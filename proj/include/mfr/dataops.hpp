#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "mfr/image.hpp"

namespace mfr {

// Five points ordered: left eye, right eye, nose tip, left mouth corner,
// right mouth corner.
struct Landmarks {
  std::array<std::array<double, 2>, 5> pts{};

  double x(int i) const { return pts[i][0]; }
  double y(int i) const { return pts[i][1]; }
};

// Canonical 112x112 alignment template.
extern const Landmarks kCanonicalLandmarks;

struct ManifestRecord {
  std::string path;
  int identity = 0;
  bool masked = false;
  Landmarks landmarks;
};

// CSV with header `path,identity,masked,lx1,ly1,...,lx5,ly5`. Loading
// validates landmark bounds against each referenced image's header and the
// contiguity of identity labels.
std::vector<ManifestRecord> load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

struct SamplerConfig {
  double mask_ratio_cap = 0.10;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

// One epoch's record indices: every unmasked record once, masked records
// subsampled so their planned share never exceeds the cap.
std::vector<int> plan_epoch(const std::vector<ManifestRecord>& records, const SamplerConfig& cfg);

struct MaskTemplate {
  std::vector<std::array<double, 2>> polygon;  // canonical-frame vertices
  std::array<std::uint8_t, 3> fill{70, 90, 170};
  double opacity = 1.0;
  double color_jitter = 0.0;  // max per-channel offset drawn per sample
  double shape_jitter = 0.0;  // max vertex offset, canonical pixels

  static MaskTemplate standard();
  void validate() const;
};

// Paints the template polygon, mapped through the landmark-anchored
// similarity, over the lower face.
Image apply_mask_overlay(const Image& img, const Landmarks& lm, const MaskTemplate& tmpl, Rng& rng);

struct AugConfig {
  double p_hflip = 0.5;
  double p_blur = 0.05;
  double p_rgb_shift = 0.05;
  double p_compress = 0.05;
  int crop_pad = 0;  // 0 disables the pad-then-crop step

  void validate() const;
};

struct AugResult {
  Image image;
  Landmarks landmarks;
};

AugResult augment(const Image& img, const Landmarks& lm, const AugConfig& cfg, Rng& rng);

using Transform = Eigen::Matrix<double, 2, 3>;

// Least-squares similarity (rotation + uniform scale + translation) mapping
// src points onto dst points.
Transform estimate_similarity(const Landmarks& src, const Landmarks& dst);

Transform invert_similarity(const Transform& t);
std::array<double, 2> apply_transform(const Transform& t, double x, double y);

// Resample through the inverse transform into an out_size square, bilinear,
// black fill outside the source.
Image warp_to_template(const Image& img, const Transform& t, int out_size = 112);

}  // namespace mfr
