#pragma once

// Building blocks shared by the backbone and the fusion module: trainable
// parameters, same-padded (dilated) convolution, ReLU, 2x2 max pooling and
// bilinear resampling, each with an explicit backward pass.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ceph/tensor.hpp"

namespace ceph::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Square-kernel convolution with unit stride and "same" zero padding
/// (pad = dilation * (k - 1) / 2). Weight shape (out, in, k, k), bias (out).
struct Conv2d {
  Parameter weight;
  Parameter bias;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int dilation = 1;

  Conv2d() = default;
  Conv2d(std::string name, int in, int out, int k, int dil = 1);

  Tensor forward(const Tensor& input) const;
  // Accumulates parameter gradients; returns d(loss)/d(input) unless
  // need_input_grad is false, in which case an empty tensor is returned.
  Tensor backward(const Tensor& input, const Tensor& grad_out,
                  bool need_input_grad = true);

  // He-normal weights, zero bias.
  void init(std::mt19937_64& rng);
};

Tensor relu(const Tensor& x);
// grad_out masked by (activation > 0). `activation` is relu's output.
Tensor relu_backward(const Tensor& activation, const Tensor& grad_out);

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input index per output cell
};

/// 2x2 max pooling, stride 2. Extents must be even.
PoolResult max_pool2(const Tensor& input);
Tensor max_pool2_backward(const std::vector<int>& input_shape,
                          const std::vector<std::uint32_t>& argmax,
                          const Tensor& grad_out);

/// Source-coordinate convention for bilinear resampling.
enum class SampleGrid {
  kHalfPixel,  // src = (dst + 0.5) * in / out - 0.5, clamped at the border
  kScale,      // src = dst * in / out
};

/// Bilinear resampling of every plane of a (c, h, w) volume.
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w,
                       SampleGrid grid = SampleGrid::kHalfPixel);
Tensor resize_bilinear_backward(const Tensor& grad_out, int in_h, int in_w,
                                SampleGrid grid = SampleGrid::kHalfPixel);

double sigmoid(double z);

}  // namespace ceph::nn
