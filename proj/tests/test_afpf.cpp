#include <doctest.h>

#include <algorithm>
#include <random>

#include "ceph/afpf.hpp"
#include "ceph/model.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace ceph;

namespace {

AttentionParams random_attention(int hidden, int cols, std::mt19937_64& rng) {
  AttentionParams p{nn::Parameter("w1", {3, hidden}), nn::Parameter("w2", {hidden, cols})};
  p.w1.value = oracle::random_tensor({3, hidden}, rng);
  p.w2.value = oracle::random_tensor({hidden, cols}, rng);
  return p;
}

MultiLevelFeatures random_features(const BackboneSpec& spec, Extent input, std::mt19937_64& rng) {
  MultiLevelFeatures f;
  f.strides = spec.tap_strides;
  for (std::size_t i = 0; i < spec.tap_strides.size(); ++i) {
    const int s = spec.tap_strides[i];
    f.levels.push_back(oracle::random_tensor({spec.channels_per_tap[i], input.height / s, input.width / s}, rng, 0, 1));
  }
  return f;
}

Afpf tiny_afpf(int n, Extent input, std::uint64_t seed) {
  return Afpf(AfpfConfig::defaults_for(BackboneVariant::kTinyTest, n, input), BackboneSpec::tiny(), seed);
}

}  // namespace

TEST_SUITE("afpf") {

TEST_CASE("pyramid extent is the stride-4 grid") {
  std::mt19937_64 rng(1);
  const Afpf m = tiny_afpf(2, {640, 800}, 1);
  const FeaturePyramid f = m.build_pyramid(random_features(BackboneSpec::tiny(), {640, 800}, rng));
  CHECK(f.stride == 4);
  CHECK(f.volume.shape() == std::vector<int>{16, 200, 160});
}

TEST_CASE("the stride-4 level enters the concatenation without resampling") {
  std::mt19937_64 rng(2);
  Afpf m = tiny_afpf(1, {32, 32}, 2);
  const MultiLevelFeatures feats = random_features(BackboneSpec::tiny(), {32, 32}, rng);
  Afpf::Cache cache;
  m.build_pyramid(feats, &cache);
  const Tensor lateral = m.laterals()[0].forward(feats.levels[0]);
  const auto concat = cache.dilated_in[0].values();
  for (std::size_t i = 0; i < lateral.size(); ++i) CHECK(concat[i] == lateral[i]);
}

TEST_CASE("zero features through biasless parameters give a zero pyramid") {
  Afpf m = tiny_afpf(1, {64, 32}, 3);
  for (nn::Parameter* p : m.parameters())
    if (p->name.ends_with(".bias")) p->value.fill(0.0);
  MultiLevelFeatures zero{{Tensor({16, 8, 16}), Tensor({32, 4, 8})}, {4, 8}};
  const FeaturePyramid f = m.build_pyramid(zero);
  for (double v : f.volume.values()) CHECK(v == 0.0);
  const MultiLevelFeatures wrong{{Tensor({16, 8, 16}), Tensor({32, 5, 8})}, {4, 8}};
  CHECK_THROWS_AS(m.build_pyramid(wrong), ContractError);
}

TEST_CASE("pooled descriptor") {
  const FeaturePyramid constant{Tensor({3, 16, 24}, 0.75)};
  const Tensor d = pool_descriptor(constant);
  CHECK(d.shape() == std::vector<int>{3, 6});
  for (double v : d.values()) CHECK(v == 0.75);

  CHECK(pool_descriptor(FeaturePyramid{Tensor({2, 8, 8})}).shape() == std::vector<int>{2, 1});
  CHECK_THROWS_AS(pool_descriptor(FeaturePyramid{Tensor({2, 12, 8})}), ContractError);

  // 8x8-block checkerboard of {0, 2}: blocks (0,0) and (1,1) are 0.
  FeaturePyramid board{Tensor({1, 16, 16})};
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) board.volume.at(0, y, x) = ((y / 8 + x / 8) % 2) * 2.0;
  const Tensor b = pool_descriptor(board);
  REQUIRE(b.shape() == std::vector<int>{1, 4});
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 2.0);
  CHECK(b[2] == 2.0);
  CHECK(b[3] == 0.0);

  // Against a direct mean of one non-trivial block.
  std::mt19937_64 rng(4);
  const FeaturePyramid r{oracle::random_tensor({2, 16, 24}, rng)};
  const Tensor rd = pool_descriptor(r);
  double s = 0.0;
  for (int y = 8; y < 16; ++y)
    for (int x = 16; x < 24; ++x) s += r.volume.at(1, y, x);
  CHECK(rd[1 * 6 + 5] == doctest::Approx(s / 64).epsilon(1e-14));
}

TEST_CASE("attention weights") {
  std::mt19937_64 rng(5);
  const Tensor desc = oracle::random_tensor({6, 4}, rng);

  AttentionParams zero = random_attention(3, 4, rng);
  zero.w1.value.fill(0.0);
  const AttentionWeights u = attention_weights(desc, std::span(&zero, 1));
  for (double v : u.a.values()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));

  const Tensor single = oracle::random_tensor({1, 4}, rng);
  AttentionParams p1 = random_attention(3, 4, rng);
  const AttentionWeights a1 = attention_weights(single, std::span(&p1, 1));
  for (double v : a1.a.values()) CHECK(v == 1.0);

  std::vector<AttentionParams> ps{random_attention(5, 4, rng), random_attention(5, 4, rng)};
  const AttentionWeights a = attention_weights(desc, ps);
  REQUIRE(a.a.shape() == std::vector<int>{2, 3, 6});
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 3; ++j) {
      const std::vector<double> want = oracle::attention_row(desc, ps[k].w1.value, ps[k].w2.value, j);
      const auto got = a.vec(k, j);
      for (int ch = 0; ch < 6; ++ch) CHECK(std::abs(got[ch] - want[ch]) < 1e-6);
    }

  AttentionParams wrong = random_attention(5, 3, rng);
  CHECK_THROWS_AS(attention_weights(desc, std::span(&wrong, 1)), ContractError);
}

TEST_CASE("scaling attention logits by a positive factor keeps each argmax channel") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  for (int t = 0; t < 200; ++t) {
    const Tensor desc = oracle::random_tensor({8, 2}, rng);
    AttentionParams p = random_attention(4, 2, rng);
    const AttentionWeights before = attention_weights(desc, std::span(&p, 1));
    const double s = scale(rng);
    for (double& v : p.w1.value.values()) v *= s;  // logits -> s * logits
    const AttentionWeights after = attention_weights(desc, std::span(&p, 1));
    for (int j = 0; j < 3; ++j) {
      const auto b = before.vec(0, j), a = after.vec(0, j);
      CHECK(std::max_element(b.begin(), b.end()) - b.begin() ==
            std::max_element(a.begin(), a.end()) - a.begin());
    }
  }
}

TEST_CASE("apply_attention") {
  std::mt19937_64 rng(7);
  const FeaturePyramid f{oracle::random_tensor({4, 3, 5}, rng)};
  AttentionWeights uniform{Tensor({1, 3, 4}, 0.25)};
  for (const FeaturePyramid& w : apply_attention(f, uniform, 0))
    for (std::size_t i = 0; i < w.volume.size(); ++i) CHECK(std::abs(w.volume[i] - f.volume[i]) <= 1e-12);

  AttentionWeights onehot{Tensor({1, 3, 4})};
  for (int j = 0; j < 3; ++j) onehot.a[j * 4 + 2] = 1.0;
  const auto oh = apply_attention(f, onehot, 0);
  for (int ch = 0; ch < 4; ++ch)
    for (std::size_t i = 0; i < 15; ++i)
      CHECK(oh[1].volume.plane(ch)[i] == (ch == 2 ? 4.0 * f.volume.plane(ch)[i] : 0.0));

  FeaturePyramid xy{Tensor({2, 1, 2})};
  xy.volume[0] = 3.0;   // X
  xy.volume[1] = -1.0;
  xy.volume[2] = 5.0;   // Y
  xy.volume[3] = 0.5;
  AttentionWeights a{Tensor({1, 3, 2})};
  for (int j = 0; j < 3; ++j) {
    a.a[j * 2] = 0.25;
    a.a[j * 2 + 1] = 0.75;
  }
  const auto r = apply_attention(xy, a, 0);
  CHECK(r[0].volume[0] == 1.5);
  CHECK(r[0].volume[1] == -0.5);
  CHECK(r[2].volume[2] == 7.5);
  CHECK(r[2].volume[3] == 0.75);
  CHECK_THROWS_AS(apply_attention(xy, a, 1), ContractError);
  CHECK_THROWS_AS(apply_attention(xy, a, -1), ContractError);
}

TEST_CASE("prediction heads") {
  HeadParams zero{nn::Parameter("w", {3, 2}), nn::Parameter("b", {3})};
  std::mt19937_64 rng(8);
  const FeaturePyramid f{oracle::random_tensor({2, 4, 4}, rng)};
  const std::array<FeaturePyramid, 3> same{f, f, f};
  const PredictionMaps m = predict_maps(std::span(&same, 1), std::span(&zero, 1), {16, 16});
  CHECK(m.heat.shape() == std::vector<int>{1, 16, 16});
  CHECK(m.offsets.shape() == std::vector<int>{1, 2, 16, 16});
  for (double v : m.heat.values()) CHECK(v == 0.5);
  for (double v : m.offsets.values()) CHECK(v == 0.0);

  HeadParams h{nn::Parameter("w", {3, 2}), nn::Parameter("b", {3})};
  h.weight.value = oracle::random_tensor({3, 2}, rng);
  h.bias.value = oracle::random_tensor({3}, rng);
  const FeaturePyramid c{Tensor({2, 4, 4}, 0.3)};
  const std::array<FeaturePyramid, 3> constant{c, c, c};
  const PredictionMaps cm = predict_maps(std::span(&constant, 1), std::span(&h, 1), {16, 16});
  for (double v : cm.heat.values()) CHECK(v == doctest::Approx(cm.heat[0]).epsilon(1e-14));
  for (int axis = 0; axis < 2; ++axis) {
    const double first = cm.offsets[axis * 256];
    for (int i = 0; i < 256; ++i) CHECK(cm.offsets[axis * 256 + i] == doctest::Approx(first).epsilon(1e-14));
  }
  const double logit = 0.3 * (h.weight.value[0] + h.weight.value[1]) + h.bias.value[0];
  CHECK(cm.heat[0] == doctest::Approx(1.0 / (1.0 + std::exp(-logit))).epsilon(1e-14));
}

TEST_CASE("19 landmarks at 800x640") {
  std::mt19937_64 rng(9);
  const Afpf m = tiny_afpf(19, {640, 800}, 9);
  Afpf::Cache cache;
  const PredictionMaps maps = m.forward(random_features(BackboneSpec::tiny(), {640, 800}, rng), &cache);
  CHECK(maps.heat.shape() == std::vector<int>{19, 800, 640});
  CHECK(maps.offsets.shape() == std::vector<int>{19, 2, 800, 640});
  CHECK(cache.attention.a.shape() == std::vector<int>{19, 3, 16});
  for (double v : cache.attention.a.values()) CHECK(v >= 0.0);
  for (double v : maps.heat.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("fused forward equals the explicit weighted-pyramid reference") {
  std::mt19937_64 rng(10);
  const Extent in{64, 32};
  const Afpf m = tiny_afpf(3, in, 10);
  const MultiLevelFeatures feats = random_features(BackboneSpec::tiny(), in, rng);
  Afpf::Cache cache;
  const PredictionMaps fused = m.forward(feats, &cache);

  const FeaturePyramid f = m.build_pyramid(feats);
  const AttentionWeights a = attention_weights(pool_descriptor(f), m.attention());
  std::vector<std::array<FeaturePyramid, 3>> weighted;
  for (int k = 0; k < 3; ++k) weighted.push_back(apply_attention(f, a, k));
  const PredictionMaps ref = predict_maps(weighted, m.heads(), in);

  for (std::size_t i = 0; i < ref.heat.size(); ++i) CHECK(std::abs(fused.heat[i] - ref.heat[i]) < 1e-12);
  for (std::size_t i = 0; i < ref.offsets.size(); ++i)
    CHECK(std::abs(fused.offsets[i] - ref.offsets[i]) < 1e-12);
}

TEST_CASE("module parameters carry no attention bias") {
  Afpf m = tiny_afpf(2, {32, 32}, 11);
  int attention_params = 0;
  for (const nn::Parameter* p : m.parameters()) {
    if (p->name.find("attention") != std::string::npos) {
      ++attention_params;
      CHECK((p->name.ends_with(".w1") || p->name.ends_with(".w2")));
    }
  }
  CHECK(attention_params == 4);
  CHECK(m.attention()[0].w2.value.shape() == std::vector<int>{8, 1});
}

TEST_CASE("analytic gradients of the fused model match central differences") {
  ModelConfig mc;
  mc.variant = BackboneVariant::kTinyTest;
  mc.n_landmarks = 2;
  mc.input = {32, 32};
  LandmarkNet net(mc, 12);
  std::mt19937_64 rng(12);
  const Tensor img = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
  const LandmarkSet lm{{{9.5, 14.0}, {23.25, 20.0}}, Frame::kNetwork};
  TargetConfig cfg;
  cfg.radius = 8;
  const gradcheck::Report r = gradcheck::run(net, img, lm, cfg, 3, 1e-5, 1e-12, 12);
  CHECK(r.entries.size() == 3 * net.parameters().size());
  CHECK(r.worst < 1e-4);
}

}  // TEST_SUITE
