#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "mfr/common.hpp"

namespace mfr {

// Dense row-major tensor with optional gradient storage. Tensor is a cheap
// handle over shared storage; copies alias the same data, clone() deep-copies.
// 4-D data uses [batch, channel, height, width] order.

template <typename S>
struct TensorImpl {
  Shape shape;
  ArrayX<S> data;
  ArrayX<S> grad;  // size 0 until first use
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // tape that produced this tensor, 0 for leaves
};

template <typename S>
class Tape;

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), S(0));
  }
  static Tensor ones(Shape shape) {
    return filled(std::move(shape), S(1));
  }
  static Tensor filled(Shape shape, S value) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    const auto n = numel(t.impl_->shape);
    if (n < 0) throw DimensionError("negative dimension in shape " + shape_str(t.impl_->shape));
    t.impl_->data = ArrayX<S>::Constant(n, value);
    return t;
  }
  static Tensor from(std::vector<S> values, Shape shape) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t.impl_->data[i] = values[static_cast<std::size_t>(i)];
    return t;
  }
  static Tensor scalar(S value) { return filled({1}, value); }
  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1)) {
    Tensor t = zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i)
      t.impl_->data[i] = static_cast<S>(normal_sample(rng)) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return impl_->data.size(); }

  ArrayX<S>& data() { return impl_->data; }
  const ArrayX<S>& data() const { return impl_->data; }
  ArrayX<S>& grad() { return impl_->grad; }
  const ArrayX<S>& grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (v) ensure_grad();
    return *this;
  }

  void ensure_grad() {
    if (!has_grad()) impl_->grad = ArrayX<S>::Zero(impl_->data.size());
  }
  void zero_grad() {
    if (has_grad()) impl_->grad.setZero();
  }

  S item() const {
    if (size() != 1) throw DimensionError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
  }

  S& at(std::initializer_list<int> idx) { return impl_->data[flat_index(idx)]; }
  S at(std::initializer_list<int> idx) const { return impl_->data[flat_index(idx)]; }

  bool all_finite() const {
    return impl_->data.isFinite().all();
  }

  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<S>>(*impl_);
    t.impl_->tape_id = 0;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t = Tensor<T>::zeros(shape());
    for (std::int64_t i = 0; i < size(); ++i) t.data()[i] = static_cast<T>(impl_->data[i]);
    return t;
  }

  std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }

 private:
  std::int64_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
    std::int64_t flat = 0;
    auto it = idx.begin();
    for (int d = 0; d < rank(); ++d, ++it) {
      if (*it < 0 || *it >= dim(d)) throw IndexError("index out of bounds");
      flat = flat * dim(d) + *it;
    }
    return flat;
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

// Ordered record of executed operations. Nodes are appended in execution
// order, so every node follows the producers of its inputs; the reverse sweep
// in backward() is therefore a valid adjoint traversal that touches each node
// exactly once.
template <typename S>
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  void record(const std::shared_ptr<TensorImpl<S>>& produced, std::function<void()> fn) {
    produced->tape_id = id_;
    produced_.push_back(produced);
    nodes_.push_back(std::move(fn));
  }

  // True when an op whose inputs include `t` must be recorded.
  bool tracks(const Tensor<S>& t) const {
    return t.requires_grad() || t.impl()->tape_id == id_;
  }

  void run_backward(Tensor<S>& loss) {
    if (loss.size() != 1)
      throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (loss.impl()->tape_id != id_)
      throw GraphError("backward through a tensor not produced on this tape");
    // Adjoints of tape-produced tensors are scratch per traversal; leaf grads
    // accumulate across calls.
    for (auto& p : produced_) p->grad = ArrayX<S>::Zero(p->data.size());
    loss.grad()[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  static std::uint64_t next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<TensorImpl<S>>> produced_;
  std::uint64_t id_;
};

template <typename S>
void backward(Tensor<S> loss, Tape<S>& tape) {
  tape.run_backward(loss);
}

namespace detail {

template <typename S>
void accumulate(const std::shared_ptr<TensorImpl<S>>& impl, const ArrayX<S>& g) {
  if (impl->grad.size() != impl->data.size()) impl->grad = ArrayX<S>::Zero(impl->data.size());
  impl->grad += g;
}

}  // namespace detail

// ---- composition ops: add / mul / concat / flatten / reshape / l2_normalize / sum ----

template <typename S>
Tensor<S> add(const Tensor<S>& x, const Tensor<S>& y, Tape<S>* tape = nullptr) {
  if (x.shape() != y.shape())
    throw DimensionError("add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = x.data() + y.data();
  if (tape && (tape->tracks(x) || tape->tracks(y))) {
    auto xi = x.impl(), yi = y.impl(), oi = out.impl();
    bool nx = tape->tracks(x), ny = tape->tracks(y);
    tape->record(oi, [=] {
      if (nx) detail::accumulate(xi, oi->grad);
      if (ny) detail::accumulate(yi, oi->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& x, const Tensor<S>& y, Tape<S>* tape = nullptr) {
  if (x.shape() != y.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = x.data() * y.data();
  if (tape && (tape->tracks(x) || tape->tracks(y))) {
    auto xi = x.impl(), yi = y.impl(), oi = out.impl();
    bool nx = tape->tracks(x), ny = tape->tracks(y);
    tape->record(oi, [=] {
      if (nx) detail::accumulate<S>(xi, oi->grad * yi->data);
      if (ny) detail::accumulate<S>(yi, oi->grad * xi->data);
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = x.data() * factor;
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] { detail::accumulate<S>(xi, oi->grad * factor); });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::scalar(x.data().sum());
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      detail::accumulate<S>(xi, ArrayX<S>::Constant(xi->data.size(), oi->grad[0]));
    });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape, Tape<S>* tape = nullptr) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<S> out = Tensor<S>::zeros(std::move(shape));
  out.data() = x.data();
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] { detail::accumulate(xi, oi->grad); });
  }
  return out;
}

// [b, ...] -> [b, prod(rest)]
template <typename S>
Tensor<S> flatten(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  if (x.rank() < 1) throw DimensionError("flatten requires rank >= 1");
  const int b = x.dim(0);
  const int rest = static_cast<int>(x.size() / b);
  return reshape(x, Shape{b, rest}, tape);
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis, Tape<S>* tape = nullptr) {
  if (xs.empty()) throw ParameterError("concat: empty input list");
  const int rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (xs[i].dim(d) != xs[0].dim(d))
        throw DimensionError("concat: shape mismatch off axis " + shape_str(xs[i].shape()) +
                             " vs " + shape_str(xs[0].shape()));
    }
    out_shape[static_cast<std::size_t>(axis)] += xs[i].dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xs[0].dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= xs[0].dim(d);
  const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const std::int64_t ax = x.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o)
      out.data().segment((o * out_axis + offset) * inner, ax * inner) =
          x.data().segment(o * ax * inner, ax * inner);
    offset += ax;
  }

  bool any = false;
  if (tape)
    for (const auto& x : xs) any = any || tape->tracks(x);
  if (tape && any) {
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    std::vector<bool> need;
    std::vector<std::int64_t> axes;
    for (const auto& x : xs) {
      impls.push_back(x.impl());
      need.push_back(tape->tracks(x));
      axes.push_back(x.dim(axis));
    }
    auto oi = out.impl();
    tape->record(oi, [=] {
      std::int64_t off = 0;
      for (std::size_t i = 0; i < impls.size(); ++i) {
        const std::int64_t ax = axes[i];
        if (need[i]) {
          ArrayX<S> g = ArrayX<S>::Zero(impls[i]->data.size());
          for (std::int64_t o = 0; o < outer; ++o)
            g.segment(o * ax * inner, ax * inner) =
                oi->grad.segment((o * out_axis + off) * inner, ax * inner);
          detail::accumulate(impls[i], g);
        }
        off += ax;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, int axis, Tape<S>* tape = nullptr) {
  return concat(std::vector<Tensor<S>>{a, b}, axis, tape);
}

// Unit Euclidean norm along `axis`; the norm is sqrt(sum(v^2) + eps) so the
// op stays finite and differentiable at v = 0.
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, int axis, S eps = S(1e-12), Tape<S>* tape = nullptr) {
  if (axis < 0 || axis >= x.rank()) throw DimensionError("l2_normalize: axis out of range");
  std::int64_t outer = 1, inner = 1;
  const std::int64_t n = x.dim(axis);
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  ArrayX<S> inv_norm(outer * inner);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      S ss = 0;
      for (std::int64_t k = 0; k < n; ++k) {
        const S v = x.data()[(o * n + k) * inner + i];
        ss += v * v;
      }
      const S r = std::sqrt(ss + eps);
      inv_norm[o * inner + i] = S(1) / r;
      for (std::int64_t k = 0; k < n; ++k)
        out.data()[(o * n + k) * inner + i] = x.data()[(o * n + k) * inner + i] / r;
    }

  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      // y = v / r, r = sqrt(v.v + eps)  =>  dv = g/r - v (v.g) / r^3
      ArrayX<S> g = ArrayX<S>::Zero(xi->data.size());
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const S ir = inv_norm[o * inner + i];
          S dot = 0;
          for (std::int64_t k = 0; k < n; ++k) {
            const std::int64_t idx = (o * n + k) * inner + i;
            dot += xi->data[idx] * oi->grad[idx];
          }
          for (std::int64_t k = 0; k < n; ++k) {
            const std::int64_t idx = (o * n + k) * inner + i;
            g[idx] = oi->grad[idx] * ir - xi->data[idx] * dot * ir * ir * ir;
          }
        }
      detail::accumulate(xi, g);
    });
  }
  return out;
}

}  // namespace mfr
