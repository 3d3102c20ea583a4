#include "ceph/backbone.hpp"

#include <sstream>

#include "ceph/serialize.hpp"

namespace ceph {

namespace {

constexpr int kPool = -1;
constexpr int kTap = -2;

std::vector<int> layer_plan(BackboneVariant v) {
  if (v == BackboneVariant::kTinyTest) return {8, kPool, 16, kPool, 16, kTap, kPool, 32, 32, kTap};
  return {64,  64,  kPool, 128, 128, kPool, 256, 256,  256, 256, kTap,  kPool, 512,  512,
          512, 512, kTap,  kPool, 512, 512, 512, 512, kTap, kPool, kTap};
}

}  // namespace

std::string to_string(BackboneVariant v) {
  return v == BackboneVariant::kTinyTest ? "TINY_TEST" : "VGG19_STYLE";
}

BackboneVariant parse_backbone_variant(const std::string& name) {
  if (name == "TINY_TEST" || name == "tiny") return BackboneVariant::kTinyTest;
  if (name == "VGG19_STYLE" || name == "vgg19") return BackboneVariant::kVgg19Style;
  throw ConfigError("unknown backbone variant '" + name + "'");
}

BackboneSpec BackboneSpec::vgg19() {
  return {BackboneVariant::kVgg19Style, {4, 8, 16, 32}, {256, 512, 512, 512}, std::nullopt};
}

BackboneSpec BackboneSpec::tiny() {
  return {BackboneVariant::kTinyTest, {4, 8}, {16, 32}, std::nullopt};
}

BackboneSpec BackboneSpec::for_variant(BackboneVariant v) {
  return v == BackboneVariant::kTinyTest ? tiny() : vgg19();
}

void BackboneSpec::validate() const {
  CEPH_REQUIRE(!tap_strides.empty(), "backbone needs at least one tap");
  CEPH_REQUIRE(tap_strides.size() == channels_per_tap.size(),
               "channels_per_tap must have one entry per tap stride");
  for (std::size_t i = 0; i < tap_strides.size(); ++i) {
    const int s = tap_strides[i];
    CEPH_REQUIRE(s == 2 || s == 4 || s == 8 || s == 16 || s == 32, "tap strides must be in {2,4,8,16,32}");
    CEPH_REQUIRE(i == 0 || s > tap_strides[i - 1], "tap strides must be strictly increasing");
    CEPH_REQUIRE(channels_per_tap[i] > 0, "tap channel counts must be positive");
  }
  const BackboneSpec ref = for_variant(variant);
  CEPH_REQUIRE(tap_strides == ref.tap_strides && channels_per_tap == ref.channels_per_tap,
               "taps do not match the " + to_string(variant) + " layer plan");
}

std::string BackboneSpec::signature() const {
  std::ostringstream s;
  s << "backbone=" << to_string(variant) << ";taps=";
  for (std::size_t i = 0; i < tap_strides.size(); ++i) s << (i ? "," : "") << tap_strides[i];
  s << ";channels=";
  for (std::size_t i = 0; i < channels_per_tap.size(); ++i) s << (i ? "," : "") << channels_per_tap[i];
  return s.str();
}

Backbone::Backbone(BackboneSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  build_plan();
  std::mt19937_64 rng(seed);
  for (auto& c : convs_) c.init(rng);
  if (spec_.weights_source) load_weights(*spec_.weights_source);
}

void Backbone::build_plan() {
  int channels = 1;
  int conv_index = 0;
  int block = 1;
  int in_block = 0;
  for (int entry : layer_plan(spec_.variant)) {
    if (entry == kTap) {
      tap_after_step_.push_back(static_cast<int>(steps_.size()));
    } else if (entry == kPool) {
      steps_.push_back({Step::kPool, -1});
      ++block;
      in_block = 0;
    } else {
      std::ostringstream name;
      name << "backbone.conv" << block << "_" << ++in_block;
      convs_.emplace_back(name.str(), channels, entry, 3, 1);
      steps_.push_back({Step::kConv, conv_index++});
      channels = entry;
    }
  }
}

std::vector<std::pair<int, int>> Backbone::level_extents(int height, int width) const {
  const int s = spec_.max_stride();
  CEPH_REQUIRE(height > 0 && width > 0 && height % s == 0 && width % s == 0,
               "input extent " + std::to_string(height) + "x" + std::to_string(width) +
                   " is not a multiple of the largest tap stride " + std::to_string(s));
  std::vector<std::pair<int, int>> out;
  for (int t : spec_.tap_strides) out.emplace_back(height / t, width / t);
  return out;
}

MultiLevelFeatures Backbone::extract(const Tensor& image, Cache* cache) const {
  CEPH_REQUIRE(image.rank() == 3 && image.dim(0) == 1, "backbone expects a (1, h, w) grid");
  level_extents(image.dim(1), image.dim(2));

  MultiLevelFeatures out;
  out.strides = spec_.tap_strides;
  std::vector<Tensor> local;
  std::vector<Tensor>& acts = cache ? cache->activations : local;
  acts.clear();
  if (cache) cache->pool_argmax.clear();
  acts.push_back(image);

  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const Step& step = steps_[i];
    Tensor next;
    if (step.kind == Step::kConv) {
      next = nn::relu(convs_[step.conv].forward(acts.back()));
    } else {
      nn::PoolResult pooled = nn::max_pool2(acts.back());
      next = std::move(pooled.output);
      if (cache) cache->pool_argmax.push_back(std::move(pooled.argmax));
    }
    if (cache) {
      acts.push_back(std::move(next));
    } else {
      acts.back() = std::move(next);
    }
    while (next_tap < tap_after_step_.size() && tap_after_step_[next_tap] == static_cast<int>(i) + 1) {
      out.levels.push_back(acts.back());
      ++next_tap;
    }
  }
  return out;
}

void Backbone::backward(const Cache& cache, const std::vector<Tensor>& level_grads) {
  CEPH_REQUIRE(level_grads.size() == tap_after_step_.size(), "one gradient per tap expected");
  CEPH_REQUIRE(cache.activations.size() == steps_.size() + 1, "backbone cache is incomplete");
  Tensor grad;
  int tap = static_cast<int>(tap_after_step_.size()) - 1;
  std::size_t pool_index = cache.pool_argmax.size();
  for (int i = static_cast<int>(steps_.size()); i >= 1; --i) {
    while (tap >= 0 && tap_after_step_[tap] == i) {
      if (grad.empty()) grad = level_grads[tap];
      else grad += level_grads[tap];
      --tap;
    }
    if (grad.empty()) continue;  // nothing downstream of this step yet
    const Step& step = steps_[i - 1];
    const Tensor& input = cache.activations[i - 1];
    if (step.kind == Step::kConv) {
      const Tensor pre = nn::relu_backward(cache.activations[i], grad);
      grad = convs_[step.conv].backward(input, pre, i > 1);
    } else {
      grad = nn::max_pool2_backward(input.shape(), cache.pool_argmax[--pool_index], grad);
    }
  }
}

std::vector<nn::Parameter*> Backbone::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& c : convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

std::vector<const nn::Parameter*> Backbone::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& c : convs_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

void Backbone::save_weights(const std::filesystem::path& path) const {
  const auto params = parameters();
  write_tensor_file(path, spec_.signature(), params);
}

std::string Backbone::load_weights(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  assign_parameters(file, spec_.signature(), parameters());
  weights_digest_ = sha256_file(path);
  return weights_digest_;
}

Backbone load_weights(const BackboneSpec& spec, const std::filesystem::path& path) {
  BackboneSpec plain = spec;
  plain.weights_source.reset();
  Backbone b(plain, 0);
  b.load_weights(path);
  return b;
}

}  // namespace ceph
