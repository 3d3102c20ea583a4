#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ceph/image.hpp"

namespace ceph {

struct Sample {
  std::string id;
  CephImage image;
  LandmarkSet landmarks;  // ORIGINAL frame
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validate;
  std::vector<std::string> test;

  // Throws ContractError when an identifier appears in two lists.
  void check_disjoint() const;
};

enum class SplitPart { kTrain, kValidate, kTest };
SplitPart parse_split_part(const std::string& name);

/// On-disk dataset:
///
///   <root>/images/<id>.<ext>         any grayscale raster
///   <root>/annotations/<id>.txt      "x,y" per landmark
///   <root>/annotations2/<id>.txt     optional second observer, averaged in
///   <root>/split.txt                 "train:" / "validate:" / "test:" blocks
///
/// split.txt may also carry a "spacing_mm: <value>" line; otherwise the
/// spacing defaults to 0.1 mm.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const DatasetSplit& split() const { return split_; }
  double spacing_mm() const { return spacing_mm_; }
  const std::vector<std::string>& ids(SplitPart part) const;

  Sample load(const std::string& id, int n_landmarks) const;
  std::vector<Sample> load_all(SplitPart part, int n_landmarks) const;

 private:
  std::filesystem::path root_;
  DatasetSplit split_;
  double spacing_mm_ = kIsbiSpacingMm;
};

DatasetSplit read_split(const std::filesystem::path& path, double* spacing_mm = nullptr);
void write_split(const std::filesystem::path& path, const DatasetSplit& split, double spacing_mm);

/// Writes samples as 8-bit PNG images plus annotation files and a split file.
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                   const DatasetSplit& split, double spacing_mm);

enum class Primitive { kDisc, kCross, kSaltire, kCornerNE, kCornerNW, kCornerSE, kCornerSW };
inline constexpr int kPrimitiveKinds = 7;

// Landmark k is always drawn with the same primitive kind.
Primitive primitive_for(int landmark_index);

struct SyntheticOptions {
  int count = 8;
  Extent extent{128, 128};
  int n_landmarks = 4;
  std::uint64_t seed = 0;
  int min_separation = 24;  // pairwise and border distance, pixels
  double spacing_mm = 1.0;
};

/// Deterministic synthetic radiographs: dark background with one bright
/// primitive per landmark whose unique intensity maximum sits exactly on the
/// (integer) landmark position. Primitive radius is min_separation / 2 - 1.
std::vector<Sample> generate_synthetic(const SyntheticOptions& options);

void render_primitive(CephImage& image, Primitive kind, int cx, int cy, int radius);

}  // namespace ceph
