#include "mfr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace mfr {

namespace {

constexpr std::uint32_t kEmbVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated embedding file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double dot_normalized(const float* a, const float* b, int d) {
  double na = 0, nb = 0, ab = 0;
  for (int i = 0; i < d; ++i) {
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
    ab += static_cast<double>(a[i]) * b[i];
  }
  return ab / std::sqrt((na + 1e-24) * (nb + 1e-24));
}

}  // namespace

void EmbeddingSet::add(const std::string& key, const float* v, int d) {
  if (count() == 0)
    dim = d;
  else if (d != dim)
    throw DimensionError("embedding set: dimension " + std::to_string(d) +
                         " does not match set dimension " + std::to_string(dim));
  if (!index.emplace(key, count()).second)
    throw KeyError("embedding set: duplicate key " + key);
  keys.push_back(key);
  values.insert(values.end(), v, v + d);
}

const float* EmbeddingSet::vec(const std::string& key) const {
  auto it = index.find(key);
  if (it == index.end()) throw KeyError("embedding set: missing key " + key);
  return vec_at(it->second);
}

void write_embeddings(const std::string& path, const EmbeddingSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out.write("MFRE", 4);
  put_u32(out, kEmbVersion);
  put_u32(out, static_cast<std::uint32_t>(set.dim));
  put_u32(out, static_cast<std::uint32_t>(set.count()));
  for (int i = 0; i < set.count(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(set.keys[i].size()));
    out.write(set.keys[i].data(), static_cast<std::streamsize>(set.keys[i].size()));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(set.vec_at(i)),
              static_cast<std::streamsize>(set.dim) * 4);
  }
  if (!out) throw IoError("short write on embedding file: " + path);
}

EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MFRE", 4) != 0)
    throw ParseError(path + ": not an embedding file (bad magic)");
  const std::uint32_t version = get_u32(in, path);
  if (version != kEmbVersion)
    throw ParseError(path + ": unsupported embedding format version " + std::to_string(version));
  const std::uint32_t dim = get_u32(in, path);
  const std::uint32_t count = get_u32(in, path);
  if (dim == 0 || dim > 1u << 20) throw ParseError(path + ": implausible embedding dimension");
  EmbeddingSet set;
  std::vector<float> buf(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t klen = get_u32(in, path);
    if (klen > 1u << 20) throw ParseError(path + ": implausible key length");
    std::string key(klen, '\0');
    in.read(key.data(), klen);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim) * 4);
    if (!in) throw ParseError(path + ": truncated embedding file");
    set.add(key, buf.data(), static_cast<int>(dim));
  }
  return set;
}

EmbeddingSet concat_features(const EmbeddingSet& a, const EmbeddingSet& b, bool normalize_parts) {
  std::string missing;
  for (const auto& k : a.keys)
    if (!b.has(k)) missing += (missing.empty() ? "" : ", ") + k;
  for (const auto& k : b.keys)
    if (!a.has(k)) missing += (missing.empty() ? "" : ", ") + k;
  if (!missing.empty())
    throw KeyError("concat_features: key sets differ, unmatched: " + missing);

  EmbeddingSet out;
  std::vector<float> joined(static_cast<std::size_t>(a.dim) + b.dim);
  for (const auto& k : a.keys) {
    const float* va = a.vec(k);
    const float* vb = b.vec(k);
    auto put = [&](const float* v, int d, float* dst) {
      if (normalize_parts) {
        double n = 0;
        for (int i = 0; i < d; ++i) n += static_cast<double>(v[i]) * v[i];
        const float inv = static_cast<float>(1.0 / std::sqrt(n + 1e-24));
        for (int i = 0; i < d; ++i) dst[i] = v[i] * inv;
      } else {
        std::copy_n(v, d, dst);
      }
    };
    put(va, a.dim, joined.data());
    put(vb, b.dim, joined.data() + a.dim);
    out.add(k, joined.data(), static_cast<int>(joined.size()));
  }
  return out;
}

std::vector<PairRecord> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair list: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty pair list, header expected");
  auto strip_cr = [](std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  };
  if (strip_cr(line) != "path_a,path_b,same_identity,masked_pair")
    throw ParseError(path + ":1: unexpected pair list header");
  std::vector<PairRecord> pairs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::stringstream ss(line);
    PairRecord p;
    std::string same, masked;
    if (!std::getline(ss, p.a, ',') || !std::getline(ss, p.b, ',') ||
        !std::getline(ss, same, ',') || !std::getline(ss, masked) ||
        (same != "0" && same != "1") || (masked != "0" && masked != "1"))
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed pair row");
    p.same = same == "1";
    p.masked = masked == "1";
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_pairs(const std::string& path, const std::vector<PairRecord>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write pair list: " + path);
  out << "path_a,path_b,same_identity,masked_pair\n";
  for (const auto& p : pairs)
    out << p.a << "," << p.b << "," << (p.same ? 1 : 0) << "," << (p.masked ? 1 : 0) << "\n";
  if (!out) throw IoError("short write on pair list: " + path);
}

std::vector<double> verification_scores(const EmbeddingSet& set,
                                        const std::vector<PairRecord>& pairs) {
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) scores.push_back(dot_normalized(set.vec(p.a), set.vec(p.b), set.dim));
  return scores;
}

std::vector<FarPoint> tar_at_far(const std::vector<double>& scores,
                                 const std::vector<char>& is_positive,
                                 const std::vector<double>& far_targets) {
  if (scores.size() != is_positive.size())
    throw DimensionError("tar_at_far: scores and labels differ in length");
  std::size_t npos = 0, nneg = 0;
  for (char l : is_positive) (l ? npos : nneg)++;
  if (nneg == 0) throw MetricError("tar_at_far: no negative pairs");
  if (npos == 0) throw MetricError("tar_at_far: no positive pairs");

  // Candidate thresholds are the observed scores, ascending; counts of
  // entries >= each candidate come from suffix sums over the sorted order.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t l, std::size_t r) { return scores[l] < scores[r]; });
  std::vector<std::size_t> pos_ge(order.size() + 1, 0), neg_ge(order.size() + 1, 0);
  for (std::size_t i = order.size(); i-- > 0;) {
    pos_ge[i] = pos_ge[i + 1] + (is_positive[order[i]] ? 1 : 0);
    neg_ge[i] = neg_ge[i + 1] + (is_positive[order[i]] ? 0 : 1);
  }

  std::vector<FarPoint> out;
  for (double f : far_targets) {
    FarPoint pt;
    pt.far_target = f;
    pt.threshold = std::numeric_limits<double>::infinity();
    pt.tar = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      // ties share the count of the first equal score
      if (i > 0 && scores[order[i]] == scores[order[i - 1]]) continue;
      const double far = static_cast<double>(neg_ge[i]) / static_cast<double>(nneg);
      if (far <= f) {
        pt.threshold = scores[order[i]];
        pt.tar = static_cast<double>(pos_ge[i]) / static_cast<double>(npos);
        break;
      }
    }
    out.push_back(pt);
  }
  return out;
}

double identification_top1(const EmbeddingSet& gallery, const EmbeddingSet& probe,
                           const std::map<std::string, int>& identity_of) {
  if (probe.count() == 0) throw MetricError("identification: empty probe set");
  if (gallery.count() == 0) throw MetricError("identification: empty gallery");
  if (gallery.dim != probe.dim)
    throw DimensionError("identification: gallery and probe dimensions differ");
  auto ident = [&](const std::string& k) {
    auto it = identity_of.find(k);
    if (it == identity_of.end()) throw KeyError("identification: no identity for key " + k);
    return it->second;
  };
  std::size_t correct = 0;
  for (int p = 0; p < probe.count(); ++p) {
    double best = -2;
    int best_g = -1;
    for (int g = 0; g < gallery.count(); ++g) {
      const double s = dot_normalized(probe.vec_at(p), gallery.vec_at(g), probe.dim);
      if (s > best || (s == best && best_g >= 0 && gallery.keys[g] < gallery.keys[best_g])) {
        best = s;
        best_g = g;
      }
    }
    if (ident(gallery.keys[best_g]) == ident(probe.keys[p])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probe.count());
}

double weighted_mfr(double old_masked, double sfr) {
  if (old_masked < 0 || old_masked > 1 || sfr < 0 || sfr > 1)
    throw ParameterError("weighted_mfr: inputs must lie in [0,1]");
  return 0.25 * old_masked + 0.75 * sfr;
}

}  // namespace mfr
