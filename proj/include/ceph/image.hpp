#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "ceph/tensor.hpp"

namespace ceph {

struct Extent {
  int width = 0;
  int height = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// Network input extent: 800 rows by 640 columns.
inline constexpr Extent kNetworkExtent{640, 800};
/// Pixel spacing of the challenge radiographs.
inline constexpr double kIsbiSpacingMm = 0.1;

/// Grayscale radiograph with intensities in [0, 1]. `pixels` has shape
/// (1, height, width) so it can be fed to the backbone unchanged.
struct CephImage {
  Tensor pixels;
  double spacing_mm = kIsbiSpacingMm;

  CephImage() = default;
  CephImage(Tensor grid, double spacing);

  int width_px() const { return pixels.dim(2); }
  int height_px() const { return pixels.dim(1); }
  Extent extent() const { return {width_px(), height_px()}; }
  double& at(int y, int x) { return pixels.at(0, y, x); }
  double at(int y, int x) const { return pixels.at(0, y, x); }
};

enum class Frame { kOriginal, kNetwork };

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
  friend bool operator==(const Point&, const Point&) = default;
};

struct LandmarkSet {
  std::vector<Point> points;
  Frame frame = Frame::kOriginal;

  std::size_t size() const { return points.size(); }
  const Point& operator[](std::size_t i) const { return points[i]; }
  Point& operator[](std::size_t i) { return points[i]; }
};

// True when every point lies in [0, width] x [0, height].
bool within(const LandmarkSet& set, Extent extent);

enum class Direction { kForward, kInverse };

/// Per-axis scaling from the ORIGINAL frame to the NETWORK frame.
struct CoordTransform {
  double scale_x = 1.0;
  double scale_y = 1.0;
  Extent source;
  Extent target;

  static CoordTransform between(Extent source, Extent target);
  Point forward(Point p) const { return {p.x * scale_x, p.y * scale_y}; }
  Point inverse(Point p) const { return {p.x / scale_x, p.y / scale_y}; }
};

/// Decodes any raster OpenCV understands as grayscale and divides by the
/// maximum value of its storage depth (255 for 8-bit, 65535 for 16-bit).
CephImage load_image(const std::filesystem::path& path, double spacing_mm = kIsbiSpacingMm);

// Writes a (h, w) plane clamped to [0, 1] as 8- or 16-bit grayscale.
void save_grayscale(const std::filesystem::path& path, std::span<const double> plane,
                    Extent extent, int bit_depth = 8);
// Writes raw integer counts (saturating at 65535) as a 16-bit grayscale image.
void save_counts16(const std::filesystem::path& path, std::span<const int> counts, Extent extent);

/// Reads the first `n` "x,y" lines of an annotation file (LF or CRLF).
/// Further lines are ignored.
LandmarkSet read_annotation(const std::filesystem::path& path, int n);
/// Writes one "x,y" line per point with three decimals.
void write_annotation(const std::filesystem::path& path, const LandmarkSet& set);

LandmarkSet average_annotations(const LandmarkSet& a, const LandmarkSet& b);

std::pair<CephImage, LandmarkSet> load_sample(const std::filesystem::path& image_path,
                                              const std::filesystem::path& annotation_path,
                                              int n, double spacing_mm = kIsbiSpacingMm);

struct NetworkInput {
  Tensor grid;  // (1, target.height, target.width)
  CoordTransform transform;
};

/// Bilinear resize to the network extent. Network pixel (x', y') samples
/// the original at (x' / scale_x, y' / scale_y) so image content and
/// mapped landmark coordinates stay aligned.
NetworkInput resize_to_network(const CephImage& image, Extent target = kNetworkExtent);

LandmarkSet map_coords(const CoordTransform& t, const LandmarkSet& pts, Direction direction);

}  // namespace ceph
