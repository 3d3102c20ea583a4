#include "ceph/targets.hpp"

#include <algorithm>
#include <cmath>

namespace ceph {

void TargetConfig::validate(int max_tap_stride) const {
  if (radius < 1) throw ConfigError("R must be a positive integer");
  if (radius < max_tap_stride) {
    throw ConfigError("R = " + std::to_string(radius) + " is smaller than the coarsest tap stride " +
                      std::to_string(max_tap_stride));
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

TargetMaps make_targets(const LandmarkSet& landmarks, Extent extent, const TargetConfig& cfg) {
  CEPH_REQUIRE(landmarks.frame == Frame::kNetwork, "targets are built from NETWORK-frame landmarks");
  CEPH_REQUIRE(extent.width > 0 && extent.height > 0, "target extent must be positive");
  CEPH_REQUIRE(cfg.radius >= 1, "R must be positive");
  const int n = static_cast<int>(landmarks.size());
  const int h = extent.height, w = extent.width;
  TargetMaps t{Tensor({n, h, w}), Tensor({n, 2, h, w}), Tensor({n, h, w})};
  const double r = cfg.radius;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int k = 0; k < n; ++k) {
    const Point l = landmarks[k];
    if (!(l.x >= 0.0 && l.x <= w && l.y >= 0.0 && l.y <= h)) {
      throw ContractError("landmark " + std::to_string(k) + " lies outside the " + std::to_string(w) +
                          "x" + std::to_string(h) + " grid");
    }
    const int y0 = std::max(0, static_cast<int>(std::ceil(l.y - r)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(l.y + r)));
    const int x0 = std::max(0, static_cast<int>(std::ceil(l.x - r)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(l.x + r)));
    double* heat = t.heat.data() + k * plane;
    double* mask = t.mask.data() + k * plane;
    double* ox = t.offsets.data() + 2 * k * plane;
    double* oy = ox + plane;
    for (int y = y0; y <= y1; ++y) {
      const double dy = l.y - y;
      for (int x = x0; x <= x1; ++x) {
        const double dx = l.x - x;
        if (dx * dx + dy * dy > r * r) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        heat[i] = 1.0;
        mask[i] = 1.0;
        ox[i] = dx / r;
        oy[i] = dy / r;
      }
    }
  }
  return t;
}

double heat_loss(const Tensor& pred, const TargetMaps& target, Tensor* grad) {
  CEPH_REQUIRE(pred.shape() == target.heat.shape(), "heat prediction shape " +
                                                        shape_string(pred.shape()) +
                                                        " does not match target " +
                                                        shape_string(target.heat.shape()));
  const std::size_t count = pred.size();
  if (grad) *grad = Tensor(pred.shape());
  long double sum = 0.0L;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double raw = pred[i];
    const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double t = target.heat[i];
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    if (grad && raw == p) (*grad)[i] = inv * ((1.0 - t) / (1.0 - p) - t / p);
  }
  return static_cast<double>(sum / static_cast<long double>(count));
}

double offset_loss(const Tensor& pred, const TargetMaps& target, Tensor* grad) {
  CEPH_REQUIRE(pred.shape() == target.offsets.shape(), "offset prediction shape " +
                                                           shape_string(pred.shape()) +
                                                           " does not match target " +
                                                           shape_string(target.offsets.shape()));
  const int n = pred.dim(0);
  const std::size_t plane = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  std::size_t masked = 0;
  for (double m : target.mask.values()) masked += m > 0.5 ? 1 : 0;
  if (grad) *grad = Tensor(pred.shape());
  if (masked == 0) return 0.0;
  const double inv = 1.0 / (2.0 * static_cast<double>(masked));
  long double sum = 0.0L;
  for (int k = 0; k < n; ++k) {
    const double* mask = target.mask.data() + k * plane;
    for (int axis = 0; axis < 2; ++axis) {
      const std::size_t base = (2 * static_cast<std::size_t>(k) + axis) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mask[i] <= 0.5) continue;
        const double d = pred[base + i] - target.offsets[base + i];
        sum += std::abs(d);
        if (grad) (*grad)[base + i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
      }
    }
  }
  return static_cast<double>(sum / (2.0L * static_cast<long double>(masked)));
}

}  // namespace ceph
