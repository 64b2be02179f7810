#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <map>

#include "mfr/blocks.hpp"

namespace mfr {

struct NamedTensorData {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Binary format: magic "MFRW", version u32, tensor count u32, then per tensor
// name length u32 + name bytes, rank u32, dims u32 each, float32 payload.
// Little-endian throughout.
void write_weights(const std::string& path, const std::vector<NamedTensorData>& tensors);
std::vector<NamedTensorData> read_weights(const std::string& path);

// Snapshot of the model's learnable parameters plus persistent buffers.
template <typename S>
std::vector<NamedTensorData> collect_weights(const std::vector<ParamRef<S>>& params,
                                             const std::vector<BufferRef<S>>& buffers) {
  std::vector<NamedTensorData> out;
  for (const auto& p : params) {
    NamedTensorData t;
    t.name = p.name;
    t.shape = p.tensor.shape();
    t.data.resize(p.tensor.size());
    for (std::int64_t i = 0; i < p.tensor.size(); ++i)
      t.data[i] = static_cast<float>(p.tensor.data()[i]);
    out.push_back(std::move(t));
  }
  for (const auto& b : buffers) {
    NamedTensorData t;
    t.name = b.name;
    t.shape = {static_cast<int>(b.array->size())};
    t.data.resize(b.array->size());
    for (Eigen::Index i = 0; i < b.array->size(); ++i)
      t.data[i] = static_cast<float>((*b.array)[i]);
    out.push_back(std::move(t));
  }
  return out;
}

// Loads a snapshot back into a model. Every model tensor must be present with
// a matching shape; loading marks all normalizer states initialized.
template <typename S>
void apply_weights(const std::vector<NamedTensorData>& tensors,
                   const std::vector<ParamRef<S>>& params,
                   const std::vector<BufferRef<S>>& buffers) {
  std::map<std::string, const NamedTensorData*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto take = [&](const std::string& name, const Shape& want) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw KeyError("checkpoint: missing tensor " + name);
    const NamedTensorData* t = it->second;
    if (t->shape != want)
      throw DimensionError("checkpoint: tensor " + name + " has shape " + shape_str(t->shape) +
                           ", model expects " + shape_str(want));
    by_name.erase(it);
    return t;
  };
  for (const auto& p : params) {
    const NamedTensorData* t = take(p.name, p.tensor.shape());
    for (std::int64_t i = 0; i < p.tensor.size(); ++i)
      p.tensor.impl()->data[i] = static_cast<S>(t->data[i]);
  }
  for (const auto& b : buffers) {
    const NamedTensorData* t = take(b.name, {static_cast<int>(b.array->size())});
    for (Eigen::Index i = 0; i < b.array->size(); ++i) (*b.array)[i] = static_cast<S>(t->data[i]);
    b.state->initialized = true;
  }
  if (!by_name.empty())
    throw KeyError("checkpoint: unexpected tensor " + by_name.begin()->first);
}

}  // namespace mfr
