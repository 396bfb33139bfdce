#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ida/core.hpp"

// Dense layer primitives over single-image C x H x W tensors. Every op has a
// forward and a backward; backward functions accumulate (+=) into their
// gradient outputs.
namespace ida::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLeakySlope = 0.01;

/// Unfold k x k neighborhoods (zero padding k/2) into a (C*k*k) x (H*W) matrix.
template <typename T>
void im2col(const Tensor3<T>& in, int k, std::vector<T>& col) {
  const int C = in.channels, H = in.height, W = in.width, pad = k / 2;
  const std::size_t HW = in.plane_size();
  col.assign(static_cast<std::size_t>(C) * k * k * HW, T{});
  for (int c = 0; c < C; ++c) {
    const T* src = in.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        const int oy = ky - pad, ox = kx - pad;
        const int x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
        for (int y = 0; y < H; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= H) continue;
          const T* srow = src + static_cast<std::size_t>(sy) * W + ox;
          T* drow = dst + static_cast<std::size_t>(y) * W;
          for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x];
        }
      }
  }
}

/// Adjoint of im2col: scatter-add column gradients back onto the image.
template <typename T>
void col2im_add(const std::vector<T>& col, int k, Tensor3<T>& din) {
  const int C = din.channels, H = din.height, W = din.width, pad = k / 2;
  const std::size_t HW = din.plane_size();
  for (int c = 0; c < C; ++c) {
    T* dst = din.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        const int oy = ky - pad, ox = kx - pad;
        const int x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
        for (int y = 0; y < H; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= H) continue;
          T* drow = dst + static_cast<std::size_t>(sy) * W + ox;
          const T* srow = src + static_cast<std::size_t>(y) * W;
          for (int x = x_lo; x < x_hi; ++x) drow[x] += srow[x];
        }
      }
  }
}

/// Same-size convolution with odd kernel k. `col` receives the unfolded input
/// (left empty for k == 1, where the input itself is the column matrix).
template <typename T>
void conv_forward(std::span<const T> weight, std::span<const T> bias, int cout, int k, const Tensor3<T>& in,
                  Tensor3<T>& out, std::vector<T>& col) {
  const int K = in.channels * k * k;
  const auto HW = static_cast<Eigen::Index>(in.plane_size());
  const T* cols = in.data.data();
  if (k == 1) {
    col.clear();
  } else {
    im2col(in, k, col);
    cols = col.data();
  }
  out = Tensor3<T>(cout, in.height, in.width);
  Eigen::Map<const RowMat<T>> Wm(weight.data(), cout, K);
  Eigen::Map<const RowMat<T>> Cm(cols, K, HW);
  Eigen::Map<RowMat<T>> Om(out.data.data(), cout, HW);
  Om.noalias() = Wm * Cm;
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data(), cout);
  Om.colwise() += b;
}

template <typename T>
void conv_backward(std::span<const T> weight, int cout, int k, const Tensor3<T>& in, const std::vector<T>& col,
                   const Tensor3<T>& dout, std::span<T> dweight, std::span<T> dbias, Tensor3<T>* din) {
  const int K = in.channels * k * k;
  const auto HW = static_cast<Eigen::Index>(in.plane_size());
  const T* cols = k == 1 ? in.data.data() : col.data();
  Eigen::Map<const RowMat<T>> Cm(cols, K, HW);
  Eigen::Map<const RowMat<T>> dO(dout.data.data(), cout, HW);
  Eigen::Map<RowMat<T>> dW(dweight.data(), cout, K);
  dW.noalias() += dO * Cm.transpose();
  // Plain loop: a vectorized row reduction would peel by buffer address and
  // make the summation order, hence the result, allocation dependent.
  for (int c = 0; c < cout; ++c) {
    const T* row = dout.data.data() + static_cast<std::size_t>(c) * HW;
    T s{0};
    for (Eigen::Index j = 0; j < HW; ++j) s += row[j];
    dbias[c] += s;
  }
  if (!din) return;
  Eigen::Map<const RowMat<T>> Wm(weight.data(), cout, K);
  if (k == 1) {
    Eigen::Map<RowMat<T>> dI(din->data.data(), K, HW);
    dI.noalias() += Wm.transpose() * dO;
  } else {
    std::vector<T> dcol(static_cast<std::size_t>(K) * HW);
    Eigen::Map<RowMat<T>> dC(dcol.data(), K, HW);
    dC.noalias() = Wm.transpose() * dO;
    col2im_add(dcol, k, *din);
  }
}

template <typename T>
void leaky_relu_inplace(Tensor3<T>& t) {
  const T slope = static_cast<T>(kLeakySlope);
  for (auto& v : t.data) v = v > T{0} ? v : v * slope;
}

/// `out` is the activation's output; its sign equals the input's sign.
template <typename T>
void leaky_relu_backward_inplace(const Tensor3<T>& out, Tensor3<T>& grad) {
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(out.data[i] > T{0})) grad.data[i] *= slope;
}

/// 2x2 max pooling; `argmax` stores the flat input index of each output.
template <typename T>
Tensor3<T> maxpool2(const Tensor3<T>& in, std::vector<std::uint32_t>& argmax) {
  const int H = in.height / 2, W = in.width / 2;
  Tensor3<T> out(in.channels, H, W);
  argmax.resize(out.data.size());
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++o) {
        std::size_t best = c * in.plane_size() + static_cast<std::size_t>(2 * y) * in.width + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = c * in.plane_size() + static_cast<std::size_t>(2 * y + dy) * in.width + 2 * x + dx;
            if (in.data[idx] > in.data[best]) best = idx;
          }
        out.data[o] = in.data[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  return out;
}

template <typename T>
void maxpool2_backward(const std::vector<std::uint32_t>& argmax, const Tensor3<T>& dout, Tensor3<T>& din) {
  for (std::size_t o = 0; o < dout.data.size(); ++o) din.data[argmax[o]] += dout.data[o];
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
Tensor3<T> upsample2(const Tensor3<T>& in) {
  Tensor3<T> out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

template <typename T>
void upsample2_backward(const Tensor3<T>& dout, Tensor3<T>& din) {
  for (int c = 0; c < dout.channels; ++c)
    for (int y = 0; y < dout.height; ++y)
      for (int x = 0; x < dout.width; ++x) din.at(c, y / 2, x / 2) += dout.at(c, y, x);
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("concat_channels: spatial mismatch");
  Tensor3<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

/// Split a concat gradient into its two parts, accumulating into each.
template <typename T>
void concat_backward(const Tensor3<T>& dcat, Tensor3<T>* da, Tensor3<T>* db, int a_channels) {
  const std::size_t split = static_cast<std::size_t>(a_channels) * dcat.plane_size();
  if (da)
    for (std::size_t i = 0; i < split; ++i) da->data[i] += dcat.data[i];
  if (db)
    for (std::size_t i = split; i < dcat.data.size(); ++i) db->data[i - split] += dcat.data[i];
}

/// Per-pixel softmax over channels.
template <typename T>
Tensor3<T> softmax_channels(const Tensor3<T>& logits) {
  Tensor3<T> p(logits.channels, logits.height, logits.width);
  const std::size_t n = logits.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    T mx = logits.data[i];
    for (int c = 1; c < logits.channels; ++c) mx = std::max(mx, logits.data[c * n + i]);
    T s{0};
    for (int c = 0; c < logits.channels; ++c) {
      const T e = std::exp(logits.data[c * n + i] - mx);
      p.data[c * n + i] = e;
      s += e;
    }
    for (int c = 0; c < logits.channels; ++c) p.data[c * n + i] /= s;
  }
  return p;
}

/// dL/dz = p * (dL/dp - <p, dL/dp>) per pixel.
template <typename T>
Tensor3<T> softmax_backward(const Tensor3<T>& p, const Tensor3<T>& dp) {
  Tensor3<T> dz(p.channels, p.height, p.width);
  const std::size_t n = p.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    T dot{0};
    for (int c = 0; c < p.channels; ++c) dot += p.data[c * n + i] * dp.data[c * n + i];
    for (int c = 0; c < p.channels; ++c) dz.data[c * n + i] = p.data[c * n + i] * (dp.data[c * n + i] - dot);
  }
  return dz;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace ida::nn
