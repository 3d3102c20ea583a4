#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ceph/afpf.hpp"
#include "ceph/backbone.hpp"
#include "ceph/targets.hpp"

namespace ceph {

struct ModelConfig {
  BackboneVariant variant = BackboneVariant::kVgg19Style;
  int n_landmarks = 19;
  Extent input = kNetworkExtent;
  // 0 selects the variant default.
  int lateral_channels = 0;
  int pyramid_channels = 0;
  int hidden = 0;
  std::optional<std::filesystem::path> backbone_weights;

  AfpfConfig afpf() const;
  BackboneSpec backbone() const;
  std::string signature() const;
};

/// Backbone followed by the fusion module; maps a (1, h, w) network-frame
/// image to per-landmark heat and offset maps.
class LandmarkNet {
 public:
  struct Cache {
    Backbone::Cache backbone;
    Afpf::Cache afpf;
  };

  LandmarkNet() = default;
  LandmarkNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  Afpf& afpf() { return afpf_; }
  const Afpf& afpf() const { return afpf_; }

  PredictionMaps forward(const Tensor& image, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Tensor& grad_heat, const Tensor& grad_offsets);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  void zero_grad();
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  Afpf afpf_;
};

struct LossBreakdown {
  double heat = 0.0;
  double offset = 0.0;
  double total = 0.0;
};

/// Forward pass, targets and combined loss for one sample. With
/// `accumulate` set, parameter gradients of `scale * total` are added.
LossBreakdown sample_loss(LandmarkNet& net, const Tensor& image, const LandmarkSet& landmarks,
                          const TargetConfig& cfg, bool accumulate, double scale = 1.0,
                          LandmarkNet::Cache* cache_out = nullptr);

}  // namespace ceph
