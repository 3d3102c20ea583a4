#include "ceph/voting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ceph {

int voter_count(int radius) {
  CEPH_REQUIRE(radius >= 1, "R must be at least 1");
  return static_cast<int>(std::floor(std::numbers::pi * radius * radius));
}

int ActivationMap::total() const { return std::accumulate(votes.begin(), votes.end(), 0); }

VoterSet select_voters(std::span<const double> heat, Extent extent, int radius) {
  const std::size_t cells = static_cast<std::size_t>(extent.width) * extent.height;
  CEPH_REQUIRE(heat.size() == cells, "heat plane does not match its extent");
  const int count = voter_count(radius);
  CEPH_REQUIRE(static_cast<std::size_t>(count) <= cells,
               "grid of " + std::to_string(cells) + " pixels is smaller than the voter count " +
                   std::to_string(count));
  std::vector<std::uint32_t> order(cells);
  std::iota(order.begin(), order.end(), 0u);
  // Strict total order: higher heat first, then lower index.
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    return heat[a] > heat[b] || (heat[a] == heat[b] && a < b);
  };
  std::nth_element(order.begin(), order.begin() + (count - 1), order.end(), before);
  order.resize(count);
  std::sort(order.begin(), order.end());
  VoterSet v;
  v.pixels.reserve(count);
  for (std::uint32_t i : order) {
    v.pixels.push_back({static_cast<int>(i % extent.width), static_cast<int>(i / extent.width)});
  }
  return v;
}

ActivationMap cast_votes(const VoterSet& voters, std::span<const double> offset_x,
                         std::span<const double> offset_y, int radius, Extent extent) {
  const std::size_t cells = static_cast<std::size_t>(extent.width) * extent.height;
  CEPH_REQUIRE(offset_x.size() == cells && offset_y.size() == cells,
               "offset planes do not match their extent");
  ActivationMap m{extent, std::vector<int>(cells, 0), 0};
  // Anything beyond this lands off-grid anyway and must not overflow int.
  const double limit = 4.0 * (extent.width + extent.height);
  for (const Pixel& p : voters.pixels) {
    CEPH_REQUIRE(p.x >= 0 && p.y >= 0 && p.x < extent.width && p.y < extent.height,
                 "voter outside the grid");
    const std::size_t i = static_cast<std::size_t>(p.y) * extent.width + p.x;
    const double sx = std::floor(offset_x[i] * radius);
    const double sy = std::floor(offset_y[i] * radius);
    if (!(std::abs(sx) <= limit && std::abs(sy) <= limit)) {
      ++m.discarded;
      continue;
    }
    const int tx = p.x + static_cast<int>(sx);
    const int ty = p.y + static_cast<int>(sy);
    if (tx < 0 || ty < 0 || tx >= extent.width || ty >= extent.height) {
      ++m.discarded;
      continue;
    }
    ++m.votes[static_cast<std::size_t>(ty) * extent.width + tx];
  }
  return m;
}

Pixel argmax_landmark(const ActivationMap& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.votes.size(); ++i) {
    if (m.votes[i] > m.votes[best]) best = i;
  }
  if (m.votes.empty() || m.votes[best] == 0) {
    throw EmptyVoteError("every vote fell outside the grid");
  }
  return {static_cast<int>(best % m.extent.width), static_cast<int>(best / m.extent.width)};
}

Pixel heat_argmax(std::span<const double> heat, Extent extent) {
  CEPH_REQUIRE(!heat.empty(), "empty heat plane");
  const auto it = std::max_element(heat.begin(), heat.end());
  const auto i = static_cast<std::size_t>(it - heat.begin());
  return {static_cast<int>(i % extent.width), static_cast<int>(i / extent.width)};
}

DecodeResult decode_detailed(const PredictionMaps& maps, int radius, DecodeOptions options) {
  const int n = maps.landmarks();
  const Extent extent = maps.extent();
  CEPH_REQUIRE(maps.offsets.rank() == 4 && maps.offsets.dim(0) == n && maps.offsets.dim(1) == 2 &&
                   maps.offsets.dim(2) == extent.height && maps.offsets.dim(3) == extent.width,
               "offset maps do not match heat maps");
  const std::size_t plane = static_cast<std::size_t>(extent.width) * extent.height;
  DecodeResult r;
  r.landmarks.frame = Frame::kNetwork;
  for (int k = 0; k < n; ++k) {
    const auto heat = maps.heat.plane(k);
    const std::span<const double> ox(maps.offsets.data() + 2 * k * plane, plane);
    const std::span<const double> oy(maps.offsets.data() + (2 * k + 1) * plane, plane);
    const VoterSet voters = select_voters(heat, extent, radius);
    ActivationMap m = cast_votes(voters, ox, oy, radius, extent);
    Pixel p;
    bool fallback = false;
    try {
      p = argmax_landmark(m);
    } catch (const EmptyVoteError&) {
      if (!options.heat_fallback) {
        throw EmptyVoteError("landmark " + std::to_string(k) + ": every vote fell outside the grid");
      }
      p = heat_argmax(heat, extent);
      fallback = true;
    }
    r.landmarks.points.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
    r.activations.push_back(std::move(m));
    r.used_fallback.push_back(fallback);
  }
  return r;
}

LandmarkSet decode(const PredictionMaps& maps, int radius, DecodeOptions options) {
  return decode_detailed(maps, radius, options).landmarks;
}

}  // namespace ceph
