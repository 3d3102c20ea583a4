#include "ceph/afpf.hpp"

#include <cmath>

#include <Eigen/Core>

namespace ceph {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

MapMatrix as_matrix(Tensor& t, Eigen::Index rows) {
  return {t.data(), rows, static_cast<Eigen::Index>(t.size()) / rows};
}

// Fills `a_out` (3 x c, row j = softmax over channels) and optionally the
// pre-tanh / post-tanh hidden activations.
void attend(const Tensor& descriptor, const AttentionParams& p, double* a_out, Tensor* z_out,
            Tensor* t_out) {
  const int c = descriptor.dim(0);
  const int cols = descriptor.dim(1);
  const int hidden = p.w2.value.dim(0);
  CEPH_REQUIRE(p.w2.value.dim(1) == cols,
               "attention W2 expects " + std::to_string(p.w2.value.dim(1)) +
                   " pooled columns, descriptor has " + std::to_string(cols));
  CEPH_REQUIRE(p.w1.value.dim(0) == 3 && p.w1.value.dim(1) == hidden,
               "attention W1 must be (3, hidden)");
  ConstMapMatrix desc(descriptor.data(), c, cols);
  ConstMapMatrix w2(p.w2.value.data(), hidden, cols);
  ConstMapMatrix w1(p.w1.value.data(), 3, hidden);
  RowMatrix z = desc * w2.transpose();  // (c, hidden)
  RowMatrix t = z.array().tanh().matrix();
  RowMatrix logits = w1 * t.transpose();  // (3, c)
  for (int j = 0; j < 3; ++j) {
    const double m = logits.row(j).maxCoeff();
    double sum = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double e = std::exp(logits(j, ch) - m);
      a_out[j * c + ch] = e;
      sum += e;
    }
    for (int ch = 0; ch < c; ++ch) a_out[j * c + ch] /= sum;
  }
  if (z_out) {
    *z_out = Tensor({c, hidden});
    as_matrix(*z_out, c) = z;
  }
  if (t_out) {
    *t_out = Tensor({c, hidden});
    as_matrix(*t_out, c) = t;
  }
}

// Writes upsampled head outputs (3, hF, wF) -> heat/offset planes of landmark k.
void emit_landmark(const Tensor& z, int k, PredictionMaps& maps) {
  const Extent out = maps.extent();
  const Tensor up = nn::resize_bilinear(z, out.height, out.width);
  auto heat = maps.heat.plane(k);
  const std::size_t plane = heat.size();
  for (std::size_t i = 0; i < plane; ++i) heat[i] = nn::sigmoid(up[i]);
  double* off = maps.offsets.data() + static_cast<std::size_t>(k) * 2 * plane;
  std::copy(up.data() + plane, up.data() + 3 * plane, off);
}

}  // namespace

AfpfConfig AfpfConfig::defaults_for(BackboneVariant v, int n_landmarks, Extent input) {
  AfpfConfig cfg;
  cfg.n_landmarks = n_landmarks;
  cfg.input = input;
  if (v == BackboneVariant::kTinyTest) {
    cfg.lateral_channels = 16;
    cfg.pyramid_channels = 16;
    cfg.hidden = 8;
  }
  return cfg;
}

int AfpfConfig::pooled_columns() const {
  const int unit = kPyramidStride * kPoolBlock;
  return (input.height / unit) * (input.width / unit);
}

void AfpfConfig::validate() const {
  CEPH_REQUIRE(n_landmarks > 0, "landmark count must be positive");
  CEPH_REQUIRE(lateral_channels > 0 && pyramid_channels > 0 && hidden > 0,
               "fusion widths must be positive");
  const int unit = kPyramidStride * kPoolBlock;
  CEPH_REQUIRE(input.width > 0 && input.height > 0 && input.width % unit == 0 &&
                   input.height % unit == 0,
               "network extent must be a positive multiple of " + std::to_string(unit));
}

Tensor pool_descriptor(const FeaturePyramid& f) {
  const int c = f.volume.dim(0), h = f.volume.dim(1), w = f.volume.dim(2);
  CEPH_REQUIRE(h % kPoolBlock == 0 && w % kPoolBlock == 0,
               "pyramid extent " + shape_string(f.volume.shape()) + " is not divisible by 8");
  const int ph = h / kPoolBlock, pw = w / kPoolBlock;
  Tensor out({c, ph * pw});
  const double inv = 1.0 / (kPoolBlock * kPoolBlock);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out[static_cast<std::size_t>(ch) * ph * pw + (y / kPoolBlock) * pw + x / kPoolBlock] +=
            f.volume.at(ch, y, x);
      }
    }
  }
  for (double& v : out.values()) v *= inv;
  return out;
}

Tensor pool_descriptor_backward(const Tensor& grad, int h, int w) {
  const int c = grad.dim(0);
  const int pw = w / kPoolBlock;
  Tensor g({c, h, w});
  const double inv = 1.0 / (kPoolBlock * kPoolBlock);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        g.at(ch, y, x) = inv * grad[static_cast<std::size_t>(ch) * grad.dim(1) +
                                    (y / kPoolBlock) * pw + x / kPoolBlock];
      }
    }
  }
  return g;
}

AttentionWeights attention_weights(const Tensor& descriptor, std::span<const AttentionParams> params) {
  CEPH_REQUIRE(descriptor.rank() == 2, "pooled descriptor must be (c, columns)");
  const int c = descriptor.dim(0);
  AttentionWeights out{Tensor({static_cast<int>(params.size()), 3, c})};
  for (std::size_t k = 0; k < params.size(); ++k) {
    attend(descriptor, params[k], out.a.data() + k * 3 * c, nullptr, nullptr);
  }
  return out;
}

std::array<FeaturePyramid, 3> apply_attention(const FeaturePyramid& f, const AttentionWeights& a,
                                              int k) {
  CEPH_REQUIRE(k >= 0 && k < a.landmarks(), "landmark index " + std::to_string(k) + " out of range");
  const int c = f.channels();
  CEPH_REQUIRE(a.channels() == c, "attention width does not match pyramid channels");
  std::array<FeaturePyramid, 3> out;
  for (int j = 0; j < 3; ++j) {
    out[j] = f;
    const auto av = a.vec(k, j);
    for (int ch = 0; ch < c; ++ch) {
      const double scale = c * av[ch];
      for (double& v : out[j].volume.plane(ch)) v *= scale;
    }
  }
  return out;
}

PredictionMaps predict_maps(std::span<const std::array<FeaturePyramid, 3>> weighted,
                            std::span<const HeadParams> heads, Extent out) {
  CEPH_REQUIRE(weighted.size() == heads.size(), "one head per landmark expected");
  CEPH_REQUIRE(!weighted.empty(), "no landmarks to predict");
  const int n = static_cast<int>(weighted.size());
  PredictionMaps maps{Tensor({n, out.height, out.width}), Tensor({n, 2, out.height, out.width})};
  for (int k = 0; k < n; ++k) {
    const Tensor& f0 = weighted[k][0].volume;
    const int c = f0.dim(0), h = f0.dim(1), w = f0.dim(2);
    CEPH_REQUIRE(heads[k].weight.value.dim(1) == c, "head width does not match pyramid channels");
    Tensor z({3, h, w});
    for (int j = 0; j < 3; ++j) {
      const Tensor& fj = weighted[k][j].volume;
      CEPH_REQUIRE(fj.shape() == f0.shape(), "weighted pyramids of one landmark differ in shape");
      auto zp = z.plane(j);
      std::fill(zp.begin(), zp.end(), heads[k].bias.value[j]);
      for (int ch = 0; ch < c; ++ch) {
        const double wt = heads[k].weight.value[static_cast<std::size_t>(j) * c + ch];
        const auto src = fj.plane(ch);
        for (std::size_t i = 0; i < zp.size(); ++i) zp[i] += wt * src[i];
      }
    }
    emit_landmark(z, k, maps);
  }
  return maps;
}

Afpf::Afpf(const AfpfConfig& cfg, const BackboneSpec& backbone, std::uint64_t seed)
    : cfg_(cfg), level_strides_(backbone.tap_strides) {
  cfg_.validate();
  const int lat = cfg_.lateral_channels, c = cfg_.pyramid_channels;
  for (std::size_t i = 0; i < backbone.tap_strides.size(); ++i) {
    CEPH_REQUIRE(backbone.tap_strides[i] >= kPyramidStride,
                 "fusion needs every tap at stride 4 or coarser");
    laterals_.emplace_back("afpf.lateral" + std::to_string(i), backbone.channels_per_tap[i], lat, 1);
  }
  const int concat = lat * static_cast<int>(laterals_.size());
  dilated_ = {nn::Conv2d("afpf.dilated1", concat, c, 3, 1), nn::Conv2d("afpf.dilated2", c, c, 3, 2),
              nn::Conv2d("afpf.dilated5", c, c, 3, 5)};

  std::mt19937_64 rng(seed);
  for (auto& l : laterals_) l.init(rng);
  for (auto& d : dilated_) d.init(rng);
  const int cols = cfg_.pooled_columns();
  std::normal_distribution<double> w2_dist(0.0, std::sqrt(1.0 / cols));
  std::normal_distribution<double> w1_dist(0.0, std::sqrt(1.0 / cfg_.hidden));
  std::normal_distribution<double> head_dist(0.0, std::sqrt(1.0 / c));
  for (int k = 0; k < cfg_.n_landmarks; ++k) {
    const std::string tag = std::to_string(k);
    AttentionParams ap{nn::Parameter("afpf.attention" + tag + ".w1", {3, cfg_.hidden}),
                       nn::Parameter("afpf.attention" + tag + ".w2", {cfg_.hidden, cols})};
    for (double& v : ap.w1.value.values()) v = w1_dist(rng);
    for (double& v : ap.w2.value.values()) v = w2_dist(rng);
    attention_.push_back(std::move(ap));
    HeadParams hp{nn::Parameter("afpf.head" + tag + ".weight", {3, c}),
                  nn::Parameter("afpf.head" + tag + ".bias", {3})};
    for (double& v : hp.weight.value.values()) v = head_dist(rng);
    heads_.push_back(std::move(hp));
  }
}

FeaturePyramid Afpf::build_pyramid(const MultiLevelFeatures& features, Cache* cache) const {
  CEPH_REQUIRE(!features.levels.empty(), "fusion needs at least one feature level");
  CEPH_REQUIRE(features.levels.size() == laterals_.size() && features.strides == level_strides_,
               "feature levels do not match the configured backbone taps");
  const int hf = cfg_.input.height / kPyramidStride;
  const int wf = cfg_.input.width / kPyramidStride;
  const int lat = cfg_.lateral_channels;
  Tensor concat({lat * static_cast<int>(laterals_.size()), hf, wf});
  if (cache) {
    cache->lateral_in.clear();
    cache->lateral_out_shape.clear();
  }
  for (std::size_t i = 0; i < laterals_.size(); ++i) {
    const Tensor& level = features.levels[i];
    const int factor = features.strides[i] / kPyramidStride;
    CEPH_REQUIRE(level.rank() == 3 && level.dim(1) * factor == hf && level.dim(2) * factor == wf,
                 "level " + std::to_string(i) + " extent " + shape_string(level.shape()) +
                     " does not align with the stride-4 grid " + std::to_string(hf) + "x" +
                     std::to_string(wf));
    const Tensor projected = laterals_[i].forward(level);
    const Tensor up = nn::resize_bilinear(projected, hf, wf);
    std::copy(up.values().begin(), up.values().end(), concat.plane(0).data() + i * up.size());
    if (cache) {
      cache->lateral_in.push_back(level);
      cache->lateral_out_shape.push_back(projected.shape());
    }
  }
  Tensor r0 = nn::relu(dilated_[0].forward(concat));
  Tensor r1 = nn::relu(dilated_[1].forward(r0));
  FeaturePyramid f{dilated_[2].forward(r1), kPyramidStride};
  if (cache) {
    cache->dilated_in = {std::move(concat), std::move(r0), std::move(r1)};
    cache->pyramid = f;
  }
  return f;
}

PredictionMaps Afpf::forward(const MultiLevelFeatures& features, Cache* cache) const {
  const FeaturePyramid f = build_pyramid(features, cache);
  const Tensor descriptor = pool_descriptor(f);
  const int n = cfg_.n_landmarks, c = f.channels();
  const int hf = f.volume.dim(1), wf = f.volume.dim(2);
  const Extent out = cfg_.input;

  AttentionWeights att{Tensor({n, 3, c})};
  PredictionMaps maps{Tensor({n, out.height, out.width}), Tensor({n, 2, out.height, out.width})};
  if (cache) cache->landmarks.assign(n, {});
  ConstMapMatrix fm(f.volume.data(), c, static_cast<Eigen::Index>(hf) * wf);
  for (int k = 0; k < n; ++k) {
    double* a = att.a.data() + static_cast<std::size_t>(k) * 3 * c;
    attend(descriptor, attention_[k], a, cache ? &cache->landmarks[k].z : nullptr,
           cache ? &cache->landmarks[k].t : nullptr);
    // Fold c * a into the head weights instead of materializing F_k^j.
    RowMatrix eff(3, c);
    for (int j = 0; j < 3; ++j) {
      for (int ch = 0; ch < c; ++ch) {
        eff(j, ch) = c * a[j * c + ch] * heads_[k].weight.value[static_cast<std::size_t>(j) * c + ch];
      }
    }
    Tensor z({3, hf, wf});
    MapMatrix zm = as_matrix(z, 3);
    zm.noalias() = eff * fm;
    for (int j = 0; j < 3; ++j) zm.row(j).array() += heads_[k].bias.value[j];
    emit_landmark(z, k, maps);
  }
  if (cache) {
    cache->descriptor = descriptor;
    cache->attention = att;
    cache->maps = maps;
  }
  return maps;
}

std::vector<Tensor> Afpf::backward(const Cache& cache, const Tensor& grad_heat,
                                   const Tensor& grad_offsets) {
  const FeaturePyramid& f = cache.pyramid;
  const int n = cfg_.n_landmarks, c = f.channels();
  const int hf = f.volume.dim(1), wf = f.volume.dim(2);
  const Eigen::Index pf = static_cast<Eigen::Index>(hf) * wf;
  const Extent out = cfg_.input;
  const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
  CEPH_REQUIRE(grad_heat.shape() == cache.maps.heat.shape() &&
                   grad_offsets.shape() == cache.maps.offsets.shape(),
               "prediction gradients do not match the cached maps");

  ConstMapMatrix fm(f.volume.data(), c, pf);
  ConstMapMatrix desc(cache.descriptor.data(), c, cache.descriptor.dim(1));
  Tensor grad_f({c, hf, wf});
  MapMatrix gf = as_matrix(grad_f, c);
  Tensor grad_desc(cache.descriptor.shape());
  MapMatrix gd = as_matrix(grad_desc, c);

  for (int k = 0; k < n; ++k) {
    Tensor gz_up({3, out.height, out.width});
    const auto heat = cache.maps.heat.plane(k);
    const auto gh = grad_heat.plane(k);
    for (std::size_t i = 0; i < plane; ++i) gz_up[i] = gh[i] * heat[i] * (1.0 - heat[i]);
    const double* go = grad_offsets.data() + static_cast<std::size_t>(k) * 2 * plane;
    std::copy(go, go + 2 * plane, gz_up.data() + plane);
    const Tensor gz = nn::resize_bilinear_backward(gz_up, hf, wf);
    ConstMapMatrix gzm(gz.data(), 3, pf);

    const auto a = cache.attention.a.data() + static_cast<std::size_t>(k) * 3 * c;
    HeadParams& head = heads_[k];
    RowMatrix eff(3, c);
    for (int j = 0; j < 3; ++j) {
      head.bias.grad[j] += gzm.row(j).sum();
      for (int ch = 0; ch < c; ++ch) {
        eff(j, ch) = c * a[j * c + ch] * head.weight.value[static_cast<std::size_t>(j) * c + ch];
      }
    }
    const RowMatrix s = gzm * fm.transpose();  // (3, c)
    gf.noalias() += eff.transpose() * gzm;

    RowMatrix grad_logits(c, 3);
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      std::vector<double> ga(c);
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t wi = static_cast<std::size_t>(j) * c + ch;
        head.weight.grad[wi] += c * a[j * c + ch] * s(j, ch);
        ga[ch] = c * head.weight.value[wi] * s(j, ch);
        dot += a[j * c + ch] * ga[ch];
      }
      for (int ch = 0; ch < c; ++ch) grad_logits(ch, j) = a[j * c + ch] * (ga[ch] - dot);
    }

    AttentionParams& ap = attention_[k];
    const int hidden = ap.w1.value.dim(1);
    ConstMapMatrix t(cache.landmarks[k].t.data(), c, hidden);
    ConstMapMatrix w1(ap.w1.value.data(), 3, hidden);
    ConstMapMatrix w2(ap.w2.value.data(), hidden, desc.cols());
    MapMatrix gw1(ap.w1.grad.data(), 3, hidden);
    MapMatrix gw2(ap.w2.grad.data(), hidden, desc.cols());
    gw1.noalias() += grad_logits.transpose() * t;
    const RowMatrix gt = grad_logits * w1;  // (c, hidden)
    const RowMatrix gzh = (gt.array() * (1.0 - t.array().square())).matrix();
    gw2.noalias() += gzh.transpose() * desc;
    gd.noalias() += gzh * w2;
  }
  grad_f += pool_descriptor_backward(grad_desc, hf, wf);

  Tensor g = dilated_[2].backward(cache.dilated_in[2], grad_f);
  g = nn::relu_backward(cache.dilated_in[2], g);
  g = dilated_[1].backward(cache.dilated_in[1], g);
  g = nn::relu_backward(cache.dilated_in[1], g);
  g = dilated_[0].backward(cache.dilated_in[0], g);

  std::vector<Tensor> level_grads;
  const int lat = cfg_.lateral_channels;
  const std::size_t block = static_cast<std::size_t>(lat) * hf * wf;
  for (std::size_t i = 0; i < laterals_.size(); ++i) {
    Tensor gup({lat, hf, wf});
    std::copy(g.data() + i * block, g.data() + (i + 1) * block, gup.data());
    const auto& shape = cache.lateral_out_shape[i];
    const Tensor gproj = nn::resize_bilinear_backward(gup, shape[1], shape[2]);
    level_grads.push_back(laterals_[i].backward(cache.lateral_in[i], gproj));
  }
  return level_grads;
}

std::vector<nn::Parameter*> Afpf::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& l : laterals_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& d : dilated_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  for (std::size_t k = 0; k < attention_.size(); ++k) {
    out.push_back(&attention_[k].w1);
    out.push_back(&attention_[k].w2);
    out.push_back(&heads_[k].weight);
    out.push_back(&heads_[k].bias);
  }
  return out;
}

std::vector<const nn::Parameter*> Afpf::parameters() const {
  auto mut = const_cast<Afpf*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

}  // namespace ceph
