#pragma once

#include <memory>

#include "mfr/tensor.hpp"

namespace mfr {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

template <typename S>
void check_4d(const Tensor<S>& x, const char* op) {
  if (!x.defined() || x.rank() != 4)
    throw DimensionError(std::string(op) + ": expected a 4-D [b,c,h,w] tensor");
}

// Unpack x[b,c,h,w] patches into a (c*kh*kw) x (b*oh*ow) matrix.
template <typename S>
void im2col(const ArrayX<S>& x, int b, int c, int h, int w, int kh, int kw,
            int stride, int padding, int oh, int ow, ColMat<S>& col) {
  col.resize(static_cast<Eigen::Index>(c) * kh * kw, static_cast<Eigen::Index>(b) * oh * ow);
  Eigen::Index j = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++j) {
        Eigen::Index i = 0;
        for (int ci = 0; ci < c; ++ci) {
          const std::int64_t plane = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++i) {
              const int ix = ox * stride - padding + kx;
              col(i, j) = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                              ? x[plane + static_cast<std::int64_t>(iy) * w + ix]
                              : S(0);
            }
          }
        }
      }
}

template <typename S>
void col2im_add(const ColMat<S>& col, int b, int c, int h, int w, int kh, int kw,
                int stride, int padding, int oh, int ow, ArrayX<S>& x_grad) {
  Eigen::Index j = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++j) {
        Eigen::Index i = 0;
        for (int ci = 0; ci < c; ++ci) {
          const std::int64_t plane = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++i) {
              const int ix = ox * stride - padding + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                x_grad[plane + static_cast<std::int64_t>(iy) * w + ix] += col(i, j);
            }
          }
        }
      }
}

}  // namespace detail

// 2-D convolution, im2col + GEMM. weight is [c_out, c_in, kh, kw]; bias may be
// an undefined Tensor.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride, int padding, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "conv2d");
  if (weight.rank() != 4) throw DimensionError("conv2d: weight must be 4-D [c_out,c_in,kh,kw]");
  if (stride < 1) throw ParameterError("conv2d: stride must be positive");
  if (padding < 0) throw ParameterError("conv2d: padding must be non-negative");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c)
    throw DimensionError("conv2d: input has " + std::to_string(c) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw DimensionError("conv2d: kernel larger than padded input");
  if (bias.defined() && bias.size() != c_out)
    throw DimensionError("conv2d: bias size must equal c_out");
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  const Eigen::Index k_len = static_cast<Eigen::Index>(c) * kh * kw;
  const Eigen::Index n_cols = static_cast<Eigen::Index>(b) * oh * ow;

  auto col = std::make_shared<detail::ColMat<S>>();
  detail::im2col(x.data(), b, c, h, w, kh, kw, stride, padding, oh, ow, *col);

  Eigen::Map<const detail::RowMat<S>> w_mat(weight.data().data(), c_out, k_len);
  detail::ColMat<S> y_mat = w_mat * (*col);  // c_out x (b*oh*ow)

  Tensor<S> out = Tensor<S>::zeros({b, c_out, oh, ow});
  const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
  for (int bi = 0; bi < b; ++bi)
    for (int co = 0; co < c_out; ++co) {
      const S bv = bias.defined() ? bias.data()[co] : S(0);
      S* dst = out.data().data() + (static_cast<std::int64_t>(bi) * c_out + co) * plane;
      for (std::int64_t p = 0; p < plane; ++p)
        dst[p] = y_mat(co, static_cast<Eigen::Index>(bi) * plane + p) + bv;
    }

  const bool nb = bias.defined() && tape && tape->tracks(bias);
  if (tape && (tape->tracks(x) || tape->tracks(weight) || nb)) {
    auto xi = x.impl(), wi = weight.impl(), oi = out.impl();
    auto bi_impl = bias.defined() ? bias.impl() : nullptr;
    const bool nx = tape->tracks(x), nw = tape->tracks(weight);
    tape->record(oi, [=] {
      detail::ColMat<S> g_mat(c_out, n_cols);
      for (int bb = 0; bb < b; ++bb)
        for (int co = 0; co < c_out; ++co) {
          const S* src = oi->grad.data() + (static_cast<std::int64_t>(bb) * c_out + co) * plane;
          for (std::int64_t p = 0; p < plane; ++p)
            g_mat(co, static_cast<Eigen::Index>(bb) * plane + p) = src[p];
        }
      if (nw) {
        detail::RowMat<S> dw = g_mat * col->transpose();
        Eigen::Map<ArrayX<S>> dw_flat(dw.data(), dw.size());
        detail::accumulate<S>(wi, dw_flat);
      }
      if (nb) {
        ArrayX<S> db = g_mat.rowwise().sum().array();
        detail::accumulate<S>(bi_impl, db);
      }
      if (nx) {
        Eigen::Map<const detail::RowMat<S>> w_m(wi->data.data(), c_out, k_len);
        detail::ColMat<S> dcol = w_m.transpose() * g_mat;
        ArrayX<S> dx = ArrayX<S>::Zero(xi->data.size());
        detail::col2im_add(dcol, b, c, h, w, kh, kw, stride, padding, oh, ow, dx);
        detail::accumulate(xi, dx);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int k, int stride, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "avg_pool2d");
  if (k < 1 || stride < 1) throw ParameterError("avg_pool2d: kernel and stride must be positive");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k || w < k) throw DimensionError("avg_pool2d: window larger than input");
  const int oh = (h - k) / stride + 1;
  const int ow = (w - k) / stride + 1;
  const S inv = S(1) / static_cast<S>(k * k);

  Tensor<S> out = Tensor<S>::zeros({b, c, oh, ow});
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const std::int64_t in_plane = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
      const std::int64_t out_plane = (static_cast<std::int64_t>(bi) * c + ci) * oh * ow;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S acc = 0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              acc += x.data()[in_plane + static_cast<std::int64_t>(oy * stride + ky) * w + ox * stride + kx];
          out.data()[out_plane + static_cast<std::int64_t>(oy) * ow + ox] = acc * inv;
        }
    }

  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      ArrayX<S> dx = ArrayX<S>::Zero(xi->data.size());
      for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
          const std::int64_t in_plane = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
          const std::int64_t out_plane = (static_cast<std::int64_t>(bi) * c + ci) * oh * ow;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const S g = oi->grad[out_plane + static_cast<std::int64_t>(oy) * ow + ox] * inv;
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  dx[in_plane + static_cast<std::int64_t>(oy * stride + ky) * w + ox * stride + kx] += g;
            }
        }
      detail::accumulate(xi, dx);
    });
  }
  return out;
}

// [b,c,h,w] -> [b,4c,h/2,w/2]; channel blocks ordered (even-h,even-w),
// (even-h,odd-w), (odd-h,even-w), (odd-h,odd-w).
template <typename S>
Tensor<S> space_to_depth(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "space_to_depth");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("space_to_depth: spatial dims must be even, got " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<S> out = Tensor<S>::zeros({b, 4 * c, oh, ow});
  for (int bi = 0; bi < b; ++bi)
    for (int q = 0; q < 4; ++q) {
      const int qy = q / 2, qx = q % 2;
      for (int ci = 0; ci < c; ++ci) {
        const std::int64_t src = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
        const std::int64_t dst = (static_cast<std::int64_t>(bi) * 4 * c + q * c + ci) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            out.data()[dst + static_cast<std::int64_t>(y) * ow + xx] =
                x.data()[src + static_cast<std::int64_t>(2 * y + qy) * w + 2 * xx + qx];
      }
    }
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      ArrayX<S> dx = ArrayX<S>::Zero(xi->data.size());
      for (int bi = 0; bi < b; ++bi)
        for (int q = 0; q < 4; ++q) {
          const int qy = q / 2, qx = q % 2;
          for (int ci = 0; ci < c; ++ci) {
            const std::int64_t src = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
            const std::int64_t dst = (static_cast<std::int64_t>(bi) * 4 * c + q * c + ci) * oh * ow;
            for (int y = 0; y < oh; ++y)
              for (int xx = 0; xx < ow; ++xx)
                dx[src + static_cast<std::int64_t>(2 * y + qy) * w + 2 * xx + qx] =
                    oi->grad[dst + static_cast<std::int64_t>(y) * ow + xx];
          }
        }
      detail::accumulate(xi, dx);
    });
  }
  return out;
}

// Inverse of space_to_depth.
template <typename S>
Tensor<S> depth_to_space(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "depth_to_space");
  const int b = x.dim(0), c4 = x.dim(1), oh = x.dim(2), ow = x.dim(3);
  if (c4 % 4 != 0) throw DimensionError("depth_to_space: channels must be divisible by 4");
  const int c = c4 / 4, h = 2 * oh, w = 2 * ow;
  Tensor<S> out = Tensor<S>::zeros({b, c, h, w});
  for (int bi = 0; bi < b; ++bi)
    for (int q = 0; q < 4; ++q) {
      const int qy = q / 2, qx = q % 2;
      for (int ci = 0; ci < c; ++ci) {
        const std::int64_t dst = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
        const std::int64_t src = (static_cast<std::int64_t>(bi) * c4 + q * c + ci) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            out.data()[dst + static_cast<std::int64_t>(2 * y + qy) * w + 2 * xx + qx] =
                x.data()[src + static_cast<std::int64_t>(y) * ow + xx];
      }
    }
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      ArrayX<S> dx = ArrayX<S>::Zero(xi->data.size());
      for (int bi = 0; bi < b; ++bi)
        for (int q = 0; q < 4; ++q) {
          const int qy = q / 2, qx = q % 2;
          for (int ci = 0; ci < c; ++ci) {
            const std::int64_t dst = (static_cast<std::int64_t>(bi) * c + ci) * h * w;
            const std::int64_t src = (static_cast<std::int64_t>(bi) * c4 + q * c + ci) * oh * ow;
            for (int y = 0; y < oh; ++y)
              for (int xx = 0; xx < ow; ++xx)
                dx[src + static_cast<std::int64_t>(y) * ow + xx] =
                    oi->grad[dst + static_cast<std::int64_t>(2 * y + qy) * w + 2 * xx + qx];
          }
        }
      detail::accumulate(xi, dx);
    });
  }
  return out;
}

// Running statistics and their init flag; gamma/beta live alongside as
// ordinary parameters.
template <typename S>
struct BatchNormState {
  ArrayX<S> running_mean;
  ArrayX<S> running_var;
  bool initialized = false;
  S momentum = S(0.1);

  explicit BatchNormState(int channels = 0)
      : running_mean(ArrayX<S>::Zero(channels)), running_var(ArrayX<S>::Ones(channels)) {}
};

// Per-channel batch normalization over [b,c,h,w] or [b,c]. Train mode uses
// batch statistics (biased variance) and updates the running state; eval mode
// uses the running state and requires it to be initialized.
template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       BatchNormState<S>& state, Mode mode, S eps = S(1e-5),
                       Tape<S>* tape = nullptr) {
  if (x.rank() != 4 && x.rank() != 2)
    throw DimensionError("batch_norm2d: expected [b,c,h,w] or [b,c] input");
  const int b = x.dim(0);
  const int c = x.dim(1);
  const std::int64_t spatial = x.rank() == 4 ? static_cast<std::int64_t>(x.dim(2)) * x.dim(3) : 1;
  const std::int64_t n = b * spatial;
  if (gamma.size() != c || beta.size() != c)
    throw DimensionError("batch_norm2d: gamma/beta length must equal channel count " + std::to_string(c));
  if (state.running_mean.size() != c)
    throw StateError("batch_norm2d: state channel count mismatch");

  ArrayX<S> mean(c), invstd(c);
  if (mode == Mode::train) {
    ArrayX<S> var(c);
    for (int ci = 0; ci < c; ++ci) {
      S m = 0;
      for (int bi = 0; bi < b; ++bi) {
        const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ci) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) m += x.data()[base + s];
      }
      m /= static_cast<S>(n);
      S v = 0;
      for (int bi = 0; bi < b; ++bi) {
        const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ci) * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) {
          const S d = x.data()[base + s] - m;
          v += d * d;
        }
      }
      v /= static_cast<S>(n);
      mean[ci] = m;
      var[ci] = v;
      invstd[ci] = S(1) / std::sqrt(v + eps);
    }
    state.running_mean = (S(1) - state.momentum) * state.running_mean + state.momentum * mean;
    state.running_var = (S(1) - state.momentum) * state.running_var + state.momentum * var;
    state.initialized = true;
  } else {
    if (!state.initialized)
      throw StateError("batch_norm2d: eval mode before any running-state update");
    mean = state.running_mean;
    invstd = (state.running_var + eps).sqrt().inverse();
  }

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto xhat = std::make_shared<ArrayX<S>>(x.size());
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ci) * spatial;
      for (std::int64_t s = 0; s < spatial; ++s) {
        const S xh = (x.data()[base + s] - mean[ci]) * invstd[ci];
        (*xhat)[base + s] = xh;
        out.data()[base + s] = gamma.data()[ci] * xh + beta.data()[ci];
      }
    }

  const bool train = mode == Mode::train;
  if (tape && (tape->tracks(x) || tape->tracks(gamma) || tape->tracks(beta))) {
    auto xi = x.impl(), gi = gamma.impl(), bi_ = beta.impl(), oi = out.impl();
    const bool nx = tape->tracks(x), ng = tape->tracks(gamma), nb = tape->tracks(beta);
    tape->record(oi, [=] {
      ArrayX<S> dgamma = ArrayX<S>::Zero(c), dbeta = ArrayX<S>::Zero(c);
      ArrayX<S> gsum = ArrayX<S>::Zero(c), gxsum = ArrayX<S>::Zero(c);
      for (int bb = 0; bb < b; ++bb)
        for (int ci = 0; ci < c; ++ci) {
          const std::int64_t base = (static_cast<std::int64_t>(bb) * c + ci) * spatial;
          for (std::int64_t s = 0; s < spatial; ++s) {
            const S g = oi->grad[base + s];
            gsum[ci] += g;
            gxsum[ci] += g * (*xhat)[base + s];
          }
        }
      if (ng) detail::accumulate<S>(gi, gxsum);
      if (nb) detail::accumulate<S>(bi_, gsum);
      if (nx) {
        ArrayX<S> dx(xi->data.size());
        const S inv_n = S(1) / static_cast<S>(n);
        for (int bb = 0; bb < b; ++bb)
          for (int ci = 0; ci < c; ++ci) {
            const std::int64_t base = (static_cast<std::int64_t>(bb) * c + ci) * spatial;
            const S k = gi->data[ci] * invstd[ci];
            for (std::int64_t s = 0; s < spatial; ++s) {
              const S g = oi->grad[base + s];
              dx[base + s] = train
                                 ? k * (g - gsum[ci] * inv_n - (*xhat)[base + s] * gxsum[ci] * inv_n)
                                 : k * g;
            }
          }
        detail::accumulate(xi, dx);
      }
    });
  }
  return out;
}

// y = x for x >= 0, a*x otherwise; slope has one entry or one per channel.
template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope, Tape<S>* tape = nullptr) {
  const bool shared = slope.size() == 1;
  int c = 1;
  std::int64_t spatial = x.size();
  if (!shared) {
    if (x.rank() < 2 || slope.size() != x.dim(1))
      throw DimensionError("prelu: slope count must be 1 or equal the channel count");
    c = x.dim(1);
    spatial = x.size() / (static_cast<std::int64_t>(x.dim(0)) * c);
  }
  const int b = shared ? 1 : x.dim(0);
  const std::int64_t block = spatial;

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const S a = shared ? slope.data()[0] : slope.data()[ci];
      const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ci) * block;
      for (std::int64_t s = 0; s < block; ++s) {
        const S v = x.data()[base + s];
        out.data()[base + s] = v >= S(0) ? v : a * v;
      }
    }

  if (tape && (tape->tracks(x) || tape->tracks(slope))) {
    auto xi = x.impl(), si = slope.impl(), oi = out.impl();
    const bool nx = tape->tracks(x), ns = tape->tracks(slope);
    tape->record(oi, [=] {
      ArrayX<S> dx = nx ? ArrayX<S>(xi->data.size()) : ArrayX<S>();
      ArrayX<S> da = ArrayX<S>::Zero(si->data.size());
      for (int bi = 0; bi < b; ++bi)
        for (int ci = 0; ci < c; ++ci) {
          const S a = shared ? si->data[0] : si->data[ci];
          const std::int64_t base = (static_cast<std::int64_t>(bi) * c + ci) * block;
          for (std::int64_t s = 0; s < block; ++s) {
            const S v = xi->data[base + s];
            const S g = oi->grad[base + s];
            if (nx) dx[base + s] = v >= S(0) ? g : a * g;
            if (v < S(0)) da[shared ? 0 : ci] += g * v;
          }
        }
      if (nx) detail::accumulate(xi, dx);
      if (ns) detail::accumulate(si, da);
    });
  }
  return out;
}

// x[b,n] @ W[m,n]^T + bias[m]; bias may be undefined.
template <typename S>
Tensor<S> fully_connected(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                          Tape<S>* tape = nullptr) {
  if (x.rank() != 2 || weight.rank() != 2)
    throw DimensionError("fully_connected: expected x[b,n] and weight[m,n]");
  const int b = x.dim(0), n = x.dim(1), m = weight.dim(0);
  if (weight.dim(1) != n)
    throw DimensionError("fully_connected: inner dimensions disagree, x " + shape_str(x.shape()) +
                         " vs weight " + shape_str(weight.shape()));
  if (bias.defined() && bias.size() != m)
    throw DimensionError("fully_connected: bias size must equal output features");

  Eigen::Map<const detail::RowMat<S>> x_mat(x.data().data(), b, n);
  Eigen::Map<const detail::RowMat<S>> w_mat(weight.data().data(), m, n);
  Tensor<S> out = Tensor<S>::zeros({b, m});
  Eigen::Map<detail::RowMat<S>> y_mat(out.data().data(), b, m);
  y_mat.noalias() = x_mat * w_mat.transpose();
  if (bias.defined())
    for (int bi = 0; bi < b; ++bi)
      for (int mi = 0; mi < m; ++mi) out.data()[static_cast<std::int64_t>(bi) * m + mi] += bias.data()[mi];

  const bool nb = bias.defined() && tape && tape->tracks(bias);
  if (tape && (tape->tracks(x) || tape->tracks(weight) || nb)) {
    auto xi = x.impl(), wi = weight.impl(), oi = out.impl();
    auto bi_impl = bias.defined() ? bias.impl() : nullptr;
    const bool nx = tape->tracks(x), nw = tape->tracks(weight);
    tape->record(oi, [=] {
      Eigen::Map<const detail::RowMat<S>> g_mat(oi->grad.data(), b, m);
      Eigen::Map<const detail::RowMat<S>> xm(xi->data.data(), b, n);
      Eigen::Map<const detail::RowMat<S>> wm(wi->data.data(), m, n);
      if (nx) {
        detail::RowMat<S> dx = g_mat * wm;
        Eigen::Map<ArrayX<S>> dx_flat(dx.data(), dx.size());
        detail::accumulate<S>(xi, dx_flat);
      }
      if (nw) {
        detail::RowMat<S> dw = g_mat.transpose() * xm;
        Eigen::Map<ArrayX<S>> dw_flat(dw.data(), dw.size());
        detail::accumulate<S>(wi, dw_flat);
      }
      if (nb) {
        ArrayX<S> db = g_mat.colwise().sum().array().transpose();
        detail::accumulate<S>(bi_impl, db);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = x.data().max(S(0));
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      detail::accumulate<S>(xi, (xi->data >= S(0)).template cast<S>() * oi->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.data() = (S(1) / (S(1) + (-x.data()).exp()));
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      detail::accumulate<S>(xi, oi->grad * oi->data * (S(1) - oi->data));
    });
  }
  return out;
}

// [b,c,h,w] -> [b,c], spatial mean.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "global_avg_pool");
  const int b = x.dim(0), c = x.dim(1);
  const std::int64_t spatial = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const S inv = S(1) / static_cast<S>(spatial);
  Tensor<S> out = Tensor<S>::zeros({b, c});
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * c; ++i)
    out.data()[i] = x.data().segment(i * spatial, spatial).sum() * inv;
  if (tape && tape->tracks(x)) {
    auto xi = x.impl(), oi = out.impl();
    tape->record(oi, [=] {
      ArrayX<S> dx(xi->data.size());
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * c; ++i)
        dx.segment(i * spatial, spatial).setConstant(oi->grad[i] * inv);
      detail::accumulate(xi, dx);
    });
  }
  return out;
}

// x[b,c,h,w] scaled per channel by s[b,c].
template <typename S>
Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& s, Tape<S>* tape = nullptr) {
  detail::check_4d(x, "channel_scale");
  if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw DimensionError("channel_scale: scale must be [b,c] matching the input");
  const int b = x.dim(0), c = x.dim(1);
  const std::int64_t spatial = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * c; ++i)
    out.data().segment(i * spatial, spatial) = x.data().segment(i * spatial, spatial) * s.data()[i];
  if (tape && (tape->tracks(x) || tape->tracks(s))) {
    auto xi = x.impl(), si = s.impl(), oi = out.impl();
    const bool nx = tape->tracks(x), ns = tape->tracks(s);
    tape->record(oi, [=] {
      if (nx) {
        ArrayX<S> dx(xi->data.size());
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * c; ++i)
          dx.segment(i * spatial, spatial) = oi->grad.segment(i * spatial, spatial) * si->data[i];
        detail::accumulate(xi, dx);
      }
      if (ns) {
        ArrayX<S> ds(static_cast<std::int64_t>(b) * c);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(b) * c; ++i)
          ds[i] = (oi->grad.segment(i * spatial, spatial) * xi->data.segment(i * spatial, spatial)).sum();
        detail::accumulate(si, ds);
      }
    });
  }
  return out;
}

}  // namespace mfr
