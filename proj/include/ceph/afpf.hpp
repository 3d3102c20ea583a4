#pragma once

// Attentive feature pyramid fusion: lateral 1x1 projections of every
// backbone level, upsampling to the stride-4 grid, concatenation, a dilated
// convolution block, per-landmark channel attention and 1x1 prediction heads.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "ceph/backbone.hpp"
#include "ceph/image.hpp"

namespace ceph {

inline constexpr int kPyramidStride = 4;
inline constexpr int kPoolBlock = 8;  // 8x8 average pooling -> h_F * w_F / 64 columns

struct FeaturePyramid {
  Tensor volume;  // (c, h_F, w_F)
  int stride = kPyramidStride;
  int channels() const { return volume.dim(0); }
};

struct AttentionParams {
  nn::Parameter w1;  // (3, hidden)
  nn::Parameter w2;  // (hidden, h_F * w_F / 64)
};

/// Per-landmark attention, shape (n, 3, c). Row (k, j) is the softmax over
/// channels for output j of landmark k (0: heat, 1: x offset, 2: y offset).
struct AttentionWeights {
  Tensor a;
  int landmarks() const { return a.dim(0); }
  int channels() const { return a.dim(2); }
  std::span<const double> vec(int k, int j) const {
    return {a.data() + (static_cast<std::size_t>(k) * 3 + j) * channels(),
            static_cast<std::size_t>(channels())};
  }
};

struct PredictionMaps {
  Tensor heat;     // (n, h, w), probabilities
  Tensor offsets;  // (n, 2, h, w), in units of R; channel 0 is x, 1 is y
  int landmarks() const { return heat.dim(0); }
  Extent extent() const { return {heat.dim(2), heat.dim(1)}; }
};

struct AfpfConfig {
  int n_landmarks = 19;
  int lateral_channels = 128;
  int pyramid_channels = 256;
  int hidden = 64;
  Extent input = kNetworkExtent;

  static AfpfConfig defaults_for(BackboneVariant v, int n_landmarks, Extent input);
  int pooled_columns() const;
  void validate() const;
};

/// 1x1 head of one landmark: weight (3, c), bias (3).
struct HeadParams {
  nn::Parameter weight;
  nn::Parameter bias;
};

// --- stateless stages ----------------------------------------------------

/// 8x8 average pooling per channel followed by row-major flattening of the
/// pooled grid: (c, h_F, w_F) -> (c, h_F * w_F / 64).
Tensor pool_descriptor(const FeaturePyramid& f);
Tensor pool_descriptor_backward(const Tensor& grad, int h, int w);

/// softmax over channels of W1 tanh(W2 applied to each channel's pooled row).
AttentionWeights attention_weights(const Tensor& descriptor,
                                   std::span<const AttentionParams> params);

/// (F_k^1, F_k^2, F_k^3) with F_k^j[ch] = c * a_k^j[ch] * F[ch].
std::array<FeaturePyramid, 3> apply_attention(const FeaturePyramid& f, const AttentionWeights& a,
                                              int k);

/// Reference prediction from explicitly weighted pyramids: head j of
/// landmark k is a 1x1 conv of F_k^j, then bilinear upsampling from the
/// pyramid grid to `out`, logistic on the heat channel.
PredictionMaps predict_maps(std::span<const std::array<FeaturePyramid, 3>> weighted,
                            std::span<const HeadParams> heads, Extent out);

// --- trainable module ----------------------------------------------------

class Afpf {
 public:
  struct LandmarkCache {
    Tensor z;  // (c, hidden) pre-tanh
    Tensor t;  // tanh(z)
  };
  struct Cache {
    std::vector<Tensor> lateral_in;
    std::vector<std::vector<int>> lateral_out_shape;
    std::array<Tensor, 3> dilated_in;
    FeaturePyramid pyramid;
    Tensor descriptor;
    std::vector<LandmarkCache> landmarks;
    AttentionWeights attention;
    PredictionMaps maps;
  };

  Afpf() = default;
  Afpf(const AfpfConfig& cfg, const BackboneSpec& backbone, std::uint64_t seed);

  const AfpfConfig& config() const { return cfg_; }

  FeaturePyramid build_pyramid(const MultiLevelFeatures& features, Cache* cache = nullptr) const;
  PredictionMaps forward(const MultiLevelFeatures& features, Cache* cache = nullptr) const;

  /// Gradients of the loss w.r.t. heat probabilities and offsets; returns
  /// per-level feature gradients and accumulates parameter gradients.
  std::vector<Tensor> backward(const Cache& cache, const Tensor& grad_heat,
                               const Tensor& grad_offsets);

  std::span<const AttentionParams> attention() const { return attention_; }
  std::span<AttentionParams> attention() { return attention_; }
  std::span<const HeadParams> heads() const { return heads_; }
  std::span<HeadParams> heads() { return heads_; }
  std::vector<nn::Conv2d>& laterals() { return laterals_; }
  std::array<nn::Conv2d, 3>& dilated() { return dilated_; }

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

 private:
  AfpfConfig cfg_;
  std::vector<int> level_strides_;
  std::vector<nn::Conv2d> laterals_;
  std::array<nn::Conv2d, 3> dilated_;  // dilation 1, 2, 5
  std::vector<AttentionParams> attention_;
  std::vector<HeadParams> heads_;
};

}  // namespace ceph
