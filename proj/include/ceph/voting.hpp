#pragma once

#include <span>
#include <vector>

#include "ceph/afpf.hpp"
#include "ceph/image.hpp"

namespace ceph {

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// floor(pi * R^2)
int voter_count(int radius);

struct VoterSet {
  std::vector<Pixel> pixels;  // ascending row-major order
  int count() const { return static_cast<int>(pixels.size()); }
};

struct ActivationMap {
  Extent extent;
  std::vector<int> votes;  // row-major
  int discarded = 0;       // votes whose target fell outside the grid

  int total() const;
  int at(int x, int y) const { return votes[static_cast<std::size_t>(y) * extent.width + x]; }
};

/// The floor(pi R^2) pixels with the highest heat, ties broken by
/// ascending row-major index.
VoterSet select_voters(std::span<const double> heat, Extent extent, int radius);

/// Each voter x adds one vote at x + floor(O(x) * R), per axis toward
/// negative infinity. Targets outside the grid are discarded.
ActivationMap cast_votes(const VoterSet& voters, std::span<const double> offset_x,
                         std::span<const double> offset_y, int radius, Extent extent);

/// Pixel with the most votes, ties broken by ascending row-major index.
/// Throws EmptyVoteError when no vote landed on the grid.
Pixel argmax_landmark(const ActivationMap& m);

/// Row-major-first maximum of a heat plane.
Pixel heat_argmax(std::span<const double> heat, Extent extent);

struct DecodeOptions {
  // Use the heat maximum instead of throwing when a landmark's votes all
  // fall off the grid.
  bool heat_fallback = false;
};

struct DecodeResult {
  LandmarkSet landmarks;  // NETWORK frame
  std::vector<ActivationMap> activations;
  std::vector<bool> used_fallback;
};

DecodeResult decode_detailed(const PredictionMaps& maps, int radius, DecodeOptions options = {});
LandmarkSet decode(const PredictionMaps& maps, int radius, DecodeOptions options = {});

}  // namespace ceph
