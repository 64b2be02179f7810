#include "mfr/dataops.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mfr {

const Landmarks kCanonicalLandmarks = {
    {{{38.2946, 51.6963}, {73.5318, 51.5014}, {56.0252, 71.7366}, {41.5493, 92.3655},
      {70.7299, 92.2041}}}};

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string resolve(const std::string& dir, const std::string& p) {
  if (!p.empty() && p.front() == '/') return p;
  return dir.empty() ? p : dir + "/" + p;
}

// Even-odd rule; vertices in order, coordinates continuous.
bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double px, double py) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i][0], yi = poly[i][1];
    const double xj = poly[j][0], yj = poly[j][1];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  const std::string dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty manifest, header expected");
  if (split_csv(line) !=
      std::vector<std::string>{"path", "identity", "masked", "lx1", "ly1", "lx2", "ly2", "lx3",
                               "ly3", "lx4", "ly4", "lx5", "ly5"})
    throw ParseError(path + ":1: unexpected manifest header");

  std::vector<ManifestRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 13)
      throw ParseError(where + ": expected 13 fields, got " + std::to_string(f.size()));
    ManifestRecord r;
    r.path = f[0];
    try {
      r.identity = std::stoi(f[1]);
      if (f[2] != "0" && f[2] != "1") throw std::invalid_argument("masked");
      r.masked = f[2] == "1";
      for (int i = 0; i < 5; ++i) {
        r.landmarks.pts[i][0] = std::stod(f[3 + 2 * i]);
        r.landmarks.pts[i][1] = std::stod(f[4 + 2 * i]);
      }
    } catch (const std::exception&) {
      throw ParseError(where + ": malformed field values");
    }
    if (r.identity < 0) throw ValidationError(where + ": negative identity label");
    int w = 0, h = 0;
    read_ppm_size(resolve(dir, r.path), &w, &h);
    for (int i = 0; i < 5; ++i)
      if (r.landmarks.x(i) < 0 || r.landmarks.x(i) > w - 1 || r.landmarks.y(i) < 0 ||
          r.landmarks.y(i) > h - 1)
        throw ValidationError(where + ": landmark " + std::to_string(i + 1) +
                              " outside image bounds");
    records.push_back(std::move(r));
  }

  if (!records.empty()) {
    int max_id = 0;
    for (const auto& r : records) max_id = std::max(max_id, r.identity);
    std::vector<char> seen(max_id + 1, 0);
    for (const auto& r : records) seen[r.identity] = 1;
    for (int i = 0; i <= max_id; ++i)
      if (!seen[i])
        throw ValidationError(path + ": identity labels not contiguous, label " +
                              std::to_string(i) + " missing");
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << "path,identity,masked,lx1,ly1,lx2,ly2,lx3,ly3,lx4,ly4,lx5,ly5\n";
  char buf[64];
  for (const auto& r : records) {
    out << r.path << "," << r.identity << "," << (r.masked ? 1 : 0);
    for (int i = 0; i < 5; ++i) {
      std::snprintf(buf, sizeof(buf), ",%.4f,%.4f", r.landmarks.x(i), r.landmarks.y(i));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("short write on manifest: " + path);
}

std::vector<int> plan_epoch(const std::vector<ManifestRecord>& records, const SamplerConfig& cfg) {
  if (cfg.mask_ratio_cap < 0 || cfg.mask_ratio_cap >= 1)
    throw ParameterError("sampler: mask_ratio_cap must lie in [0,1)");
  std::vector<int> unmasked, masked;
  for (int i = 0; i < static_cast<int>(records.size()); ++i)
    (records[i].masked ? masked : unmasked).push_back(i);
  if (unmasked.empty()) throw ParameterError("sampler: need at least one unmasked record");

  const auto quota = static_cast<std::size_t>(
      std::floor(cfg.mask_ratio_cap / (1.0 - cfg.mask_ratio_cap) * unmasked.size()));
  const std::size_t take = std::min(masked.size(), quota);

  Rng pick_rng(mix_seed(cfg.seed, "mask-pick"));
  for (std::size_t i = 0; i < take; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + uniform_below(pick_rng, masked.size() - i);
    std::swap(masked[i], masked[j]);
  }

  std::vector<int> plan = unmasked;
  plan.insert(plan.end(), masked.begin(), masked.begin() + take);
  if (cfg.shuffle) {
    Rng shuf_rng(mix_seed(cfg.seed, "plan-shuffle"));
    for (std::size_t i = plan.size(); i > 1; --i) {
      const std::size_t j = uniform_below(shuf_rng, i);
      std::swap(plan[i - 1], plan[j]);
    }
  }
  return plan;
}

MaskTemplate MaskTemplate::standard() {
  MaskTemplate t;
  t.polygon = {{{20, 65}}, {{92, 65}}, {{96, 85}}, {{76, 108}}, {{36, 108}}, {{16, 85}}};
  t.color_jitter = 18;
  t.shape_jitter = 1.5;
  return t;
}

void MaskTemplate::validate() const {
  if (polygon.size() < 3) throw ParameterError("mask template: polygon needs at least 3 vertices");
  if (opacity < 0 || opacity > 1) throw ParameterError("mask template: opacity must lie in [0,1]");
  if (color_jitter < 0 || shape_jitter < 0)
    throw ParameterError("mask template: jitter amounts must be non-negative");
  for (int i : {2, 3, 4})
    if (!point_in_polygon(polygon, kCanonicalLandmarks.x(i), kCanonicalLandmarks.y(i)))
      throw ParameterError("mask template: polygon must cover nose and mouth landmarks");
  for (int i : {0, 1})
    if (point_in_polygon(polygon, kCanonicalLandmarks.x(i), kCanonicalLandmarks.y(i)))
      throw ParameterError("mask template: polygon must not cover the eye landmarks");
}

Image apply_mask_overlay(const Image& img, const Landmarks& lm, const MaskTemplate& tmpl,
                         Rng& rng) {
  tmpl.validate();
  const double ex = lm.x(1) - lm.x(0), ey = lm.y(1) - lm.y(0);
  const double nx = lm.x(2) - lm.x(0), ny = lm.y(2) - lm.y(0);
  if (std::abs(ex * ny - ey * nx) < 1e-6)
    throw GeometryError("mask overlay: eyes and nose are collinear");

  double fill[3];
  for (int c = 0; c < 3; ++c)
    fill[c] = tmpl.fill[c] + uniform_range(rng, -tmpl.color_jitter, tmpl.color_jitter);
  std::vector<std::array<double, 2>> poly = tmpl.polygon;
  const Transform t = estimate_similarity(kCanonicalLandmarks, lm);
  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  for (auto& v : poly) {
    v[0] += uniform_range(rng, -tmpl.shape_jitter, tmpl.shape_jitter);
    v[1] += uniform_range(rng, -tmpl.shape_jitter, tmpl.shape_jitter);
    const auto p = apply_transform(t, v[0], v[1]);
    v = {p[0], p[1]};
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }

  Image out = img;
  const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(max_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(max_y)));
  const double a = tmpl.opacity;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!point_in_polygon(poly, x, y)) continue;
      std::uint8_t* p = out.at(x, y);
      for (int c = 0; c < 3; ++c) p[c] = clamp_byte((1.0 - a) * p[c] + a * fill[c]);
    }
  return out;
}

void AugConfig::validate() const {
  for (double p : {p_hflip, p_blur, p_rgb_shift, p_compress})
    if (p < 0 || p > 1) throw ParameterError("augment: probabilities must lie in [0,1]");
  if (crop_pad < 0) throw ParameterError("augment: crop_pad must be non-negative");
}

namespace {

void hflip(Image& img, Landmarks& lm) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x) {
      std::uint8_t* a = img.at(x, y);
      std::uint8_t* b = img.at(img.width - 1 - x, y);
      for (int c = 0; c < 3; ++c) std::swap(a[c], b[c]);
    }
  for (auto& p : lm.pts) p[0] = (img.width - 1) - p[0];
  std::swap(lm.pts[0], lm.pts[1]);  // eye identities
  std::swap(lm.pts[3], lm.pts[4]);  // mouth corners
}

void convolve3(Image& img, const double k[3][3]) {
  const Image src = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = std::clamp(x + dx, 0, img.width - 1);
            const int sy = std::clamp(y + dy, 0, img.height - 1);
            acc += k[dy + 1][dx + 1] * src.at(sx, sy)[c];
          }
        img.at(x, y)[c] = clamp_byte(acc);
      }
}

void compress_proxy(Image& img) {
  const int dw = std::max(1, img.width / 2), dh = std::max(1, img.height / 2);
  std::vector<std::array<double, 3>> down(static_cast<std::size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x) {
      std::array<double, 3> acc{};
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < img.width && sy < img.height) {
            for (int c = 0; c < 3; ++c) acc[c] += img.at(sx, sy)[c];
            ++n;
          }
        }
      for (int c = 0; c < 3; ++c) acc[c] /= n;
      down[static_cast<std::size_t>(y) * dw + x] = acc;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto& v = down[static_cast<std::size_t>(std::min(y / 2, dh - 1)) * dw +
                           std::min(x / 2, dw - 1)];
      for (int c = 0; c < 3; ++c) img.at(x, y)[c] = clamp_byte(v[c]);
    }
}

}  // namespace

AugResult augment(const Image& img, const Landmarks& lm, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  AugResult r{img, lm};
  if (uniform_unit(rng) < cfg.p_hflip) hflip(r.image, r.landmarks);
  if (uniform_unit(rng) < cfg.p_blur) {
    if (uniform_below(rng, 2) == 0) {
      const double box[3][3] = {{1.0 / 9, 1.0 / 9, 1.0 / 9},
                                {1.0 / 9, 1.0 / 9, 1.0 / 9},
                                {1.0 / 9, 1.0 / 9, 1.0 / 9}};
      convolve3(r.image, box);
    } else {
      const double gauss[3][3] = {{1.0 / 16, 2.0 / 16, 1.0 / 16},
                                  {2.0 / 16, 4.0 / 16, 2.0 / 16},
                                  {1.0 / 16, 2.0 / 16, 1.0 / 16}};
      convolve3(r.image, gauss);
    }
  }
  if (uniform_unit(rng) < cfg.p_rgb_shift) {
    double off[3];
    for (double& o : off) o = std::round(uniform_range(rng, -25.0, 25.0));
    for (std::size_t i = 0; i < r.image.pix.size(); i += 3)
      for (int c = 0; c < 3; ++c)
        r.image.pix[i + c] = clamp_byte(r.image.pix[i + c] + off[c]);
  }
  if (uniform_unit(rng) < cfg.p_compress) compress_proxy(r.image);
  if (cfg.crop_pad > 0) {
    const int pad = cfg.crop_pad;
    const int ox = static_cast<int>(uniform_below(rng, 2 * pad + 1));
    const int oy = static_cast<int>(uniform_below(rng, 2 * pad + 1));
    Image cropped = Image::solid(r.image.width, r.image.height, 0, 0, 0);
    for (int y = 0; y < cropped.height; ++y)
      for (int x = 0; x < cropped.width; ++x) {
        const int sx = x + ox - pad, sy = y + oy - pad;
        if (r.image.in_bounds(sx, sy))
          std::copy_n(r.image.at(sx, sy), 3, cropped.at(x, y));
      }
    for (auto& p : r.landmarks.pts) {
      p[0] += pad - ox;
      p[1] += pad - oy;
    }
    r.image = std::move(cropped);
  }
  return r;
}

Transform estimate_similarity(const Landmarks& src, const Landmarks& dst) {
  double mpx = 0, mpy = 0, mqx = 0, mqy = 0;
  for (int i = 0; i < 5; ++i) {
    mpx += src.x(i);
    mpy += src.y(i);
    mqx += dst.x(i);
    mqy += dst.y(i);
  }
  mpx /= 5;
  mpy /= 5;
  mqx /= 5;
  mqy /= 5;
  double sp = 0, dot = 0, cross = 0;
  for (int i = 0; i < 5; ++i) {
    const double px = src.x(i) - mpx, py = src.y(i) - mpy;
    const double qx = dst.x(i) - mqx, qy = dst.y(i) - mqy;
    sp += px * px + py * py;
    dot += px * qx + py * qy;
    cross += px * qy - py * qx;
  }
  if (sp < 1e-12) throw GeometryError("estimate_similarity: source points are all coincident");
  const double a = dot / sp, b = cross / sp;
  Transform t;
  t << a, -b, mqx - (a * mpx - b * mpy), b, a, mqy - (b * mpx + a * mpy);
  return t;
}

Transform invert_similarity(const Transform& t) {
  const double det = t(0, 0) * t(1, 1) - t(0, 1) * t(1, 0);
  if (std::abs(det) < 1e-12) throw GeometryError("transform is not invertible");
  Transform inv;
  const double i00 = t(1, 1) / det, i01 = -t(0, 1) / det;
  const double i10 = -t(1, 0) / det, i11 = t(0, 0) / det;
  inv << i00, i01, -(i00 * t(0, 2) + i01 * t(1, 2)), i10, i11, -(i10 * t(0, 2) + i11 * t(1, 2));
  return inv;
}

std::array<double, 2> apply_transform(const Transform& t, double x, double y) {
  return {t(0, 0) * x + t(0, 1) * y + t(0, 2), t(1, 0) * x + t(1, 1) * y + t(1, 2)};
}

Image warp_to_template(const Image& img, const Transform& t, int out_size) {
  if (out_size <= 0) throw ParameterError("warp: output size must be positive");
  const Transform inv = invert_similarity(t);
  Image out = Image::solid(out_size, out_size, 0, 0, 0);
  for (int y = 0; y < out_size; ++y)
    for (int x = 0; x < out_size; ++x) {
      const auto s = apply_transform(inv, x, y);
      const int x0 = static_cast<int>(std::floor(s[0])), y0 = static_cast<int>(std::floor(s[1]));
      const double fx = s[0] - x0, fy = s[1] - y0;
      double acc[3] = {0, 0, 0};
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int px[4] = {x0, x0 + 1, x0, x0 + 1};
      const int py[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k)
        if (w[k] > 0 && img.in_bounds(px[k], py[k]))
          for (int c = 0; c < 3; ++c) acc[c] += w[k] * img.at(px[k], py[k])[c];
      for (int c = 0; c < 3; ++c) out.at(x, y)[c] = clamp_byte(acc[c]);
    }
  return out;
}

}  // namespace mfr
