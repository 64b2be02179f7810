#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mfr {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Shape = std::vector<int>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct GraphError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct GeometryError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct KeyError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

enum class Mode { train, eval };

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Seed derivation: hash a tag plus stream indices into a master seed so every
// consumer (init, sampler, per-sample augmentation, per-step dropout) gets an
// independent, reproducible stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag,
                              std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ seed;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  feed(a);
  feed(b);
  // splitmix64 finalizer
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

using Rng = std::mt19937_64;

// The mt19937_64 engine is fully specified by the standard; only the library
// distributions are implementation-defined. These helpers keep every drawn
// sequence identical across standard libraries.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  if (n == 0) throw ParameterError("uniform_below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

inline double normal_sample(Rng& rng) {
  // Box-Muller, cacheless
  double u1 = uniform_unit(rng);
  double u2 = uniform_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace mfr
