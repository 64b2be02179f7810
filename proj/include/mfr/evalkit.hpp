#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfr/common.hpp"

namespace mfr {

// Keyed fixed-dimension float vectors, insertion-ordered.
struct EmbeddingSet {
  int dim = 0;
  std::vector<std::string> keys;
  std::vector<float> values;  // keys.size() * dim
  std::map<std::string, int> index;

  int count() const { return static_cast<int>(keys.size()); }
  void add(const std::string& key, const float* vec, int d);
  bool has(const std::string& key) const { return index.count(key) != 0; }
  const float* vec(const std::string& key) const;
  const float* vec_at(int i) const { return values.data() + static_cast<std::size_t>(i) * dim; }
};

// Binary format: magic "MFRE", version u32, dim u32, count u32, then per
// record key length u32 + key bytes + dim float32 values. Little-endian.
void write_embeddings(const std::string& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::string& path);

// Per key, parts are optionally L2-normalized and then joined.
EmbeddingSet concat_features(const EmbeddingSet& a, const EmbeddingSet& b, bool normalize_parts);

struct PairRecord {
  std::string a, b;
  bool same = false;
  bool masked = false;
};

// CSV with header `path_a,path_b,same_identity,masked_pair`.
std::vector<PairRecord> load_pairs(const std::string& path);
void write_pairs(const std::string& path, const std::vector<PairRecord>& pairs);

// Cosine similarity per pair, in pair order.
std::vector<double> verification_scores(const EmbeddingSet& set,
                                        const std::vector<PairRecord>& pairs);

struct FarPoint {
  double far_target = 0;
  double threshold = 0;
  double tar = 0;
};

// For each target f: the smallest observed score t with FAR(t) <= f, and the
// TAR at that threshold. No qualifying score leaves threshold +inf, TAR 0.
std::vector<FarPoint> tar_at_far(const std::vector<double>& scores,
                                 const std::vector<char>& is_positive,
                                 const std::vector<double>& far_targets);

// Max-cosine nearest gallery neighbor; ties broken by lowest gallery key.
double identification_top1(const EmbeddingSet& gallery, const EmbeddingSet& probe,
                           const std::map<std::string, int>& identity_of);

double weighted_mfr(double old_masked, double sfr);

}  // namespace mfr
