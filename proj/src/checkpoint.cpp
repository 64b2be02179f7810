#include "mfr/checkpoint.hpp"

namespace mfr {

namespace {

constexpr std::uint32_t kWeightVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated weight file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_weights(const std::string& path, const std::vector<NamedTensorData>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write weight file: " + path);
  out.write("MFRW", 4);
  put_u32(out, kWeightVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (numel(t.shape) != static_cast<std::int64_t>(t.data.size()))
      throw DimensionError("weight tensor " + t.name + ": shape/data size mismatch");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size()) * 4);
  }
  if (!out) throw IoError("short write on weight file: " + path);
}

std::vector<NamedTensorData> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MFRW", 4) != 0)
    throw ParseError(path + ": not a weight file (bad magic)");
  const std::uint32_t version = get_u32(in, path);
  if (version != kWeightVersion)
    throw ParseError(path + ": unsupported weight format version " + std::to_string(version));
  const std::uint32_t count = get_u32(in, path);
  std::vector<NamedTensorData> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensorData t;
    const std::uint32_t nlen = get_u32(in, path);
    if (nlen > 1u << 16) throw ParseError(path + ": implausible tensor name length");
    t.name.resize(nlen);
    in.read(t.name.data(), nlen);
    const std::uint32_t rank = get_u32(in, path);
    if (rank > 8) throw ParseError(path + ": implausible tensor rank");
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<int>(get_u32(in, path)));
      n *= t.shape.back();
    }
    if (n < 0 || n > (std::int64_t(1) << 31)) throw ParseError(path + ": implausible tensor size");
    t.data.resize(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n) * 4);
    if (!in) throw ParseError(path + ": truncated weight file");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace mfr
