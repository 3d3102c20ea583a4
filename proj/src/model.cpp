#include "ceph/model.hpp"

#include <sstream>

#include "ceph/serialize.hpp"

namespace ceph {

AfpfConfig ModelConfig::afpf() const {
  AfpfConfig c = AfpfConfig::defaults_for(variant, n_landmarks, input);
  if (lateral_channels > 0) c.lateral_channels = lateral_channels;
  if (pyramid_channels > 0) c.pyramid_channels = pyramid_channels;
  if (hidden > 0) c.hidden = hidden;
  return c;
}

BackboneSpec ModelConfig::backbone() const {
  BackboneSpec s = BackboneSpec::for_variant(variant);
  s.weights_source = backbone_weights;
  return s;
}

std::string ModelConfig::signature() const {
  const AfpfConfig a = afpf();
  std::ostringstream s;
  s << backbone().signature() << ";landmarks=" << n_landmarks << ";input=" << input.width << "x"
    << input.height << ";lateral=" << a.lateral_channels << ";pyramid=" << a.pyramid_channels
    << ";hidden=" << a.hidden;
  return s.str();
}

LandmarkNet::LandmarkNet(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), backbone_(cfg.backbone(), seed), afpf_(cfg.afpf(), cfg.backbone(), seed + 1) {}

PredictionMaps LandmarkNet::forward(const Tensor& image, Cache* cache) const {
  CEPH_REQUIRE(image.rank() == 3 && image.dim(1) == cfg_.input.height && image.dim(2) == cfg_.input.width,
               "network input " + shape_string(image.shape()) + " does not match the configured extent " +
                   std::to_string(cfg_.input.width) + "x" + std::to_string(cfg_.input.height));
  const MultiLevelFeatures features = backbone_.extract(image, cache ? &cache->backbone : nullptr);
  return afpf_.forward(features, cache ? &cache->afpf : nullptr);
}

void LandmarkNet::backward(const Cache& cache, const Tensor& grad_heat, const Tensor& grad_offsets) {
  const std::vector<Tensor> level_grads = afpf_.backward(cache.afpf, grad_heat, grad_offsets);
  backbone_.backward(cache.backbone, level_grads);
}

std::vector<nn::Parameter*> LandmarkNet::parameters() {
  std::vector<nn::Parameter*> out = backbone_.parameters();
  for (nn::Parameter* p : afpf_.parameters()) out.push_back(p);
  return out;
}

std::vector<const nn::Parameter*> LandmarkNet::parameters() const {
  std::vector<const nn::Parameter*> out = backbone_.parameters();
  for (const nn::Parameter* p : afpf_.parameters()) out.push_back(p);
  return out;
}

void LandmarkNet::zero_grad() {
  for (nn::Parameter* p : parameters()) p->zero_grad();
}

std::size_t LandmarkNet::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Parameter* p : parameters()) n += p->value.size();
  return n;
}

void LandmarkNet::save(const std::filesystem::path& path) const {
  const auto params = parameters();
  write_tensor_file(path, cfg_.signature(), params);
}

void LandmarkNet::load(const std::filesystem::path& path) {
  assign_parameters(read_tensor_file(path), cfg_.signature(), parameters());
}

LossBreakdown sample_loss(LandmarkNet& net, const Tensor& image, const LandmarkSet& landmarks,
                          const TargetConfig& cfg, bool accumulate, double scale,
                          LandmarkNet::Cache* cache_out) {
  LandmarkNet::Cache local;
  LandmarkNet::Cache& cache = cache_out ? *cache_out : local;
  const bool keep = accumulate || cache_out != nullptr;
  const PredictionMaps maps = net.forward(image, keep ? &cache : nullptr);
  const TargetMaps targets = make_targets(landmarks, maps.extent(), cfg);
  Tensor grad_heat, grad_offsets;
  LossBreakdown l;
  l.heat = heat_loss(maps.heat, targets, accumulate ? &grad_heat : nullptr);
  l.offset = offset_loss(maps.offsets, targets, accumulate ? &grad_offsets : nullptr);
  l.total = total_loss(l.heat, l.offset, cfg);
  if (accumulate) {
    const double wh = scale * cfg.alpha, wo = scale * (1.0 - cfg.alpha);
    for (double& g : grad_heat.values()) g *= wh;
    for (double& g : grad_offsets.values()) g *= wo;
    net.backward(cache, grad_heat, grad_offsets);
  }
  return l;
}

}  // namespace ceph
