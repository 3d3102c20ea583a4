#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ceph/nn.hpp"

namespace ceph {

enum class BackboneVariant { kVgg19Style, kTinyTest };

std::string to_string(BackboneVariant v);
BackboneVariant parse_backbone_variant(const std::string& name);

/// Layer plan of a plain conv/pool feature extractor. Each conv is 3x3 with
/// ReLU; taps expose the activation after a given step.
///
/// VGG19_STYLE follows the 16 conv layers of VGG-19 and taps conv3_4
/// (stride 4), conv4_4 (stride 8), conv5_4 (stride 16) and pool5 (stride 32).
/// TINY_TEST has five convs and taps stride 4 (16 ch) and stride 8 (32 ch).
struct BackboneSpec {
  BackboneVariant variant = BackboneVariant::kVgg19Style;
  std::vector<int> tap_strides;
  std::vector<int> channels_per_tap;
  std::optional<std::filesystem::path> weights_source;

  static BackboneSpec vgg19();
  static BackboneSpec tiny();
  static BackboneSpec for_variant(BackboneVariant v);

  int max_stride() const { return tap_strides.empty() ? 1 : tap_strides.back(); }
  void validate() const;
  // Architecture signature embedded in weight files.
  std::string signature() const;
};

struct MultiLevelFeatures {
  std::vector<Tensor> levels;  // (channels_per_tap[i], h / s_i, w / s_i)
  std::vector<int> strides;
};

class Backbone {
 public:
  struct Cache {
    std::vector<Tensor> activations;  // activations[0] is the input
    std::vector<std::vector<std::uint32_t>> pool_argmax;
  };

  Backbone() = default;
  // Random (seeded He-normal) parameters, or BackboneSpec::weights_source when
  // it is set.
  Backbone(BackboneSpec spec, std::uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }

  /// Requires a (1, h, w) grid with h and w multiples of the largest stride.
  MultiLevelFeatures extract(const Tensor& image, Cache* cache = nullptr) const;
  // Accumulates parameter gradients from per-level feature gradients.
  void backward(const Cache& cache, const std::vector<Tensor>& level_grads);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

  void save_weights(const std::filesystem::path& path) const;
  /// Returns the SHA-256 digest of the file that was loaded.
  std::string load_weights(const std::filesystem::path& path);
  const std::string& weights_digest() const { return weights_digest_; }

  // Output extents for an input extent, without running the network.
  std::vector<std::pair<int, int>> level_extents(int height, int width) const;

 private:
  struct Step {
    enum Kind { kConv, kPool } kind;
    int conv = -1;
  };

  void build_plan();

  BackboneSpec spec_;
  std::vector<Step> steps_;
  std::vector<nn::Conv2d> convs_;
  std::vector<int> tap_after_step_;  // activation index per tap
  std::string weights_digest_;
};

/// Loads externally supplied parameters for `spec` (see Backbone::load_weights).
Backbone load_weights(const BackboneSpec& spec, const std::filesystem::path& path);

}  // namespace ceph
