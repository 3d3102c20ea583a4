#pragma once

#include "ceph/image.hpp"
#include "ceph/tensor.hpp"

namespace ceph {

struct TargetConfig {
  int radius = 40;           // R, NETWORK pixels
  double alpha = 2.0 / 3.0;  // heat-loss weight

  // R must cover at least one cell of the coarsest feature map.
  void validate(int max_tap_stride) const;
};

struct TargetMaps {
  Tensor heat;     // (n, h, w) in {0, 1}
  Tensor offsets;  // (n, 2, h, w), (l_k - x) / R inside the disk, 0 outside
  Tensor mask;     // (n, h, w) in {0, 1}, equal to heat
};

/// Pixel centers sit at integer (x, y); a pixel is inside landmark k's disk
/// when its Euclidean distance to l_k is at most R. Disks are clipped at the
/// border. Landmarks must lie within [0, w] x [0, h].
TargetMaps make_targets(const LandmarkSet& landmarks, Extent extent, const TargetConfig& cfg);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over all n*h*w entries, probabilities clamped
/// to [1e-7, 1 - 1e-7]. When `grad` is given it receives d(loss)/d(pred);
/// entries that hit the clamp get zero gradient.
double heat_loss(const Tensor& pred_heat, const TargetMaps& target, Tensor* grad = nullptr);

/// Mean absolute error over masked pixels x both axes x landmarks; 0 when no
/// pixel is masked. `grad` receives the (sub)gradient w.r.t. pred_offsets.
double offset_loss(const Tensor& pred_offsets, const TargetMaps& target, Tensor* grad = nullptr);

inline double total_loss(double heat, double offset, const TargetConfig& cfg) {
  return cfg.alpha * heat + (1.0 - cfg.alpha) * offset;
}

}  // namespace ceph
