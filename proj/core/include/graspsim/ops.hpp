#pragma once

// Tensor-level layer operations with shape validation. These are the
// spec-shaped entry points used by tests and by code that needs a single
// layer without building a Graph; Graph nodes call the same kernels.

#include <cmath>
#include <stdexcept>
#include <string>

#include "graspsim/conv_kernels.hpp"
#include "graspsim/tensor.hpp"

namespace grasp {

enum class Padding { valid, same };

// input HxWxC, kernels khxkwxCxF.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                 const Tensor<T>& bias, int stride, int dilation,
                 Padding pad) {
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d: input must be HxWxC, got " +
                                input.shape_string());
  if (kernels.rank() != 4)
    throw std::invalid_argument("conv2d: kernels must be khxkwxCxF, got " +
                                kernels.shape_string());
  if (input.dim(2) != kernels.dim(2))
    throw std::invalid_argument("conv2d: input channels " + input.shape_string() +
                                " do not match kernel channels " +
                                kernels.shape_string());
  if (bias.numel() != static_cast<size_t>(kernels.dim(3)))
    throw std::invalid_argument("conv2d: bias length " + bias.shape_string() +
                                " does not match filter count " +
                                kernels.shape_string());
  if (stride < 1 || dilation < 1)
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
  kern::ConvShape s = kern::make_conv_shape(
      input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(1),
      kernels.dim(3), stride, dilation, pad == Padding::same);
  if (s.OH <= 0 || s.OW <= 0)
    throw std::invalid_argument("conv2d: effective kernel exceeds input " +
                                input.shape_string());
  Tensor<T> out({s.OH, s.OW, s.F});
  if constexpr (std::is_same_v<T, float>)
    kern::conv2d_fwd(s, input.data(), kernels.data(), bias.data(), out.data());
  else
    kern::conv2d_fwd_ref(s, input.data(), kernels.data(), bias.data(),
                         out.data());
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window, int stride) {
  if (input.rank() != 3)
    throw std::invalid_argument("maxpool2d: input must be HxWxC, got " +
                                input.shape_string());
  if (window < 1 || stride < 1)
    throw std::invalid_argument("maxpool2d: window and stride must be >= 1");
  const int H = input.dim(0), W = input.dim(1), C = input.dim(2);
  if (window > H || window > W)
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) +
                                " larger than input " + input.shape_string());
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;
  Tensor<T> out({OH, OW, C});
  std::vector<int> argmax(out.numel());
  if (window == 2 && stride == 2)
    kern::maxpool2_fwd(H, W, C, input.data(), out.data(), argmax.data());
  else
    kern::maxpool_fwd_ref(H, W, C, window, stride, input.data(), out.data(),
                          argmax.data());
  return out;
}

// input length n, weights n x m, bias length m.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& bias) {
  if (weights.rank() != 2)
    throw std::invalid_argument("fully_connected: weights must be n x m, got " +
                                weights.shape_string());
  const int n = weights.dim(0), m = weights.dim(1);
  if (input.numel() != static_cast<size_t>(n) ||
      bias.numel() != static_cast<size_t>(m))
    throw std::invalid_argument("fully_connected: dimension mismatch, input " +
                                input.shape_string() + ", weights " +
                                weights.shape_string() + ", bias " +
                                bias.shape_string());
  Tensor<T> out({m});
  for (int j = 0; j < m; ++j) out[j] = bias[j];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out[j] += input[i] * weights.at(i, j);
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < x.numel(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return out;
}

// Per channel: softmax over cells, then expected (x, y) normalized to
// [-1, 1]; returns [x_0, y_0, x_1, y_1, ...].
template <typename T>
Tensor<T> spatial_softmax(const Tensor<T>& features) {
  if (features.rank() != 3)
    throw std::invalid_argument("spatial_softmax: input must be HxWxF, got " +
                                features.shape_string());
  const int H = features.dim(0), W = features.dim(1), F = features.dim(2);
  Tensor<T> out({2 * F});
  const auto coord = [](int i, int extent) {
    return extent > 1 ? T(2) * i / (extent - 1) - T(1) : T(0);
  };
  for (int c = 0; c < F; ++c) {
    T mx = features.at(0, 0, c);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) mx = std::max(mx, features.at(y, x, c));
    T z = 0, ex = 0, ey = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const T e = std::exp(features.at(y, x, c) - mx);
        z += e;
        ex += e * coord(x, W);
        ey += e * coord(y, H);
      }
    out[2 * c] = ex / z;
    out[2 * c + 1] = ey / z;
  }
  return out;
}

}  // namespace grasp
