#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfr/nn_ops.hpp"

namespace mfr {

enum class LossFamily { arcface, cosface, softmax };

inline LossFamily loss_family_from_string(const std::string& s) {
  if (s == "arcface") return LossFamily::arcface;
  if (s == "cosface") return LossFamily::cosface;
  if (s == "softmax") return LossFamily::softmax;
  throw ConfigError("unknown loss family '" + s + "' (expected arcface, cosface, or softmax)");
}

inline const char* to_string(LossFamily f) {
  switch (f) {
    case LossFamily::arcface: return "arcface";
    case LossFamily::cosface: return "cosface";
    default: return "softmax";
  }
}

struct MarginConfig {
  LossFamily family = LossFamily::arcface;
  double s = 64.0;
  double m = 0.5;
  int class_count = 0;

  void validate() const {
    if (s <= 0) throw ConfigError("loss scale must be positive");
    if (m < 0) throw ConfigError("loss margin must be non-negative");
    if (class_count <= 0) throw ConfigError("class count must be positive");
    if (family == LossFamily::arcface && m >= M_PI)
      throw ConfigError("arcface margin must be below pi");
    if (family == LossFamily::cosface && m >= 1.0)
      throw ConfigError("cosface margin must be below 1");
  }
};

namespace detail {
template <typename S>
void check_labels(const std::vector<int>& labels, int b, int n) {
  if (static_cast<int>(labels.size()) != b)
    throw DimensionError("labels count " + std::to_string(labels.size()) +
                         " does not match batch size " + std::to_string(b));
  for (int lab : labels)
    if (lab < 0 || lab >= n)
      throw IndexError("label " + std::to_string(lab) + " outside [0," + std::to_string(n) + ")");
}
}  // namespace detail

// <normalized embedding, normalized class weight> for every pair; [b,n] in
// [-1,1]. Normalization happens here, the stored weights stay raw.
template <typename S>
Tensor<S> cosine_logits(const Tensor<S>& embeddings, const Tensor<S>& weights,
                        Tape<S>* tape = nullptr) {
  if (embeddings.rank() != 2 || weights.rank() != 2 || embeddings.dim(1) != weights.dim(1))
    throw DimensionError("cosine_logits: expected embeddings[b,d] and weights[n,d]");
  Tensor<S> e = l2_normalize(embeddings, 1, S(1e-12), tape);
  Tensor<S> w = l2_normalize(weights, 1, S(1e-12), tape);
  return fully_connected(e, w, Tensor<S>(), tape);
}

// Target entries become s*cos(theta + m), theta + m clamped at pi; the rest
// are scaled unchanged.
template <typename S>
Tensor<S> arcface_logits(const Tensor<S>& cosines, const std::vector<int>& labels, S s, S m,
                         Tape<S>* tape = nullptr) {
  if (cosines.rank() != 2) throw DimensionError("arcface_logits: expected [b,n] cosines");
  const int b = cosines.dim(0), n = cosines.dim(1);
  detail::check_labels<S>(labels, b, n);
  const S cos_m = std::cos(m), sin_m = std::sin(m);
  const S clamp_c = -cos_m;  // cos(pi - m); below this theta+m exceeds pi

  Tensor<S> out = Tensor<S>::zeros(cosines.shape());
  out.data() = cosines.data() * s;
  for (int i = 0; i < b; ++i) {
    const std::int64_t idx = static_cast<std::int64_t>(i) * n + labels[i];
    const S c = std::min(std::max(cosines.data()[idx], S(-1)), S(1));
    if (c < clamp_c) {
      out.data()[idx] = -s;  // theta + m clamped at pi
    } else {
      const S sin_t = std::sqrt(std::max(S(1) - c * c, S(0)));
      out.data()[idx] = s * (c * cos_m - sin_t * sin_m);
    }
  }

  if (tape && tape->tracks(cosines)) {
    auto ci = cosines.impl(), oi = out.impl();
    auto labs = labels;
    tape->record(oi, [=] {
      ArrayX<S> dx = oi->grad * s;
      for (int i = 0; i < b; ++i) {
        const std::int64_t idx = static_cast<std::int64_t>(i) * n + labs[i];
        const S c = std::min(std::max(ci->data[idx], S(-1)), S(1));
        if (c < clamp_c) {
          dx[idx] = S(0);  // clamped logit is constant
        } else {
          const S sin_t = std::sqrt(std::max(S(1) - c * c, S(1e-12)));
          dx[idx] = oi->grad[idx] * s * (cos_m + sin_m * c / sin_t);
        }
      }
      detail::accumulate(ci, dx);
    });
  }
  return out;
}

// Target entries become s*(cosine - m); the rest are scaled unchanged.
template <typename S>
Tensor<S> cosface_logits(const Tensor<S>& cosines, const std::vector<int>& labels, S s, S m,
                         Tape<S>* tape = nullptr) {
  if (cosines.rank() != 2) throw DimensionError("cosface_logits: expected [b,n] cosines");
  const int b = cosines.dim(0), n = cosines.dim(1);
  detail::check_labels<S>(labels, b, n);
  Tensor<S> out = Tensor<S>::zeros(cosines.shape());
  out.data() = cosines.data() * s;
  for (int i = 0; i < b; ++i)
    out.data()[static_cast<std::int64_t>(i) * n + labels[i]] -= s * m;
  if (tape && tape->tracks(cosines)) {
    auto ci = cosines.impl(), oi = out.impl();
    tape->record(oi, [=] { detail::accumulate<S>(ci, oi->grad * s); });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                                Tape<S>* tape = nullptr) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: expected [b,n] logits");
  const int b = logits.dim(0), n = logits.dim(1);
  if (b == 0) throw ParameterError("softmax_cross_entropy: empty batch");
  detail::check_labels<S>(labels, b, n);

  auto probs = std::make_shared<ArrayX<S>>(logits.size());
  S total = 0;
  for (int i = 0; i < b; ++i) {
    const std::int64_t base = static_cast<std::int64_t>(i) * n;
    const S mx = logits.data().segment(base, n).maxCoeff();
    ArrayX<S> e = (logits.data().segment(base, n) - mx).exp();
    const S z = e.sum();
    probs->segment(base, n) = e / z;
    total += mx + std::log(z) - logits.data()[base + labels[i]];
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(b));

  if (tape && tape->tracks(logits)) {
    auto li = logits.impl(), oi = out.impl();
    auto labs = labels;
    tape->record(oi, [=] {
      ArrayX<S> dx = *probs;
      for (int i = 0; i < b; ++i) dx[static_cast<std::int64_t>(i) * n + labs[i]] -= S(1);
      dx *= oi->grad[0] / static_cast<S>(b);
      detail::accumulate(li, dx);
    });
  }
  return out;
}

// Full head: cosine logits, family margin, cross-entropy.
template <typename S>
Tensor<S> margin_loss(const Tensor<S>& embeddings, const Tensor<S>& weights,
                      const std::vector<int>& labels, const MarginConfig& cfg,
                      Tape<S>* tape = nullptr) {
  Tensor<S> cosines = cosine_logits(embeddings, weights, tape);
  Tensor<S> logits;
  switch (cfg.family) {
    case LossFamily::arcface:
      logits = arcface_logits(cosines, labels, static_cast<S>(cfg.s), static_cast<S>(cfg.m), tape);
      break;
    case LossFamily::cosface:
      logits = cosface_logits(cosines, labels, static_cast<S>(cfg.s), static_cast<S>(cfg.m), tape);
      break;
    case LossFamily::softmax:
      logits = scale(cosines, static_cast<S>(cfg.s), tape);
      break;
  }
  return softmax_cross_entropy(logits, labels, tape);
}

}  // namespace mfr
