#include "ceph/image.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <opencv2/imgcodecs.hpp>

#include "ceph/nn.hpp"

namespace ceph {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_number(const std::string& token, const fs::path& path, int line_no) {
  const std::string t = trim(token);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) +
                      ": non-numeric coordinate '" + t + "'");
  }
  return value;
}

}  // namespace

CephImage::CephImage(Tensor grid, double spacing) : pixels(std::move(grid)), spacing_mm(spacing) {
  CEPH_REQUIRE(pixels.rank() == 3 && pixels.dim(0) == 1, "image grid must be (1, h, w)");
  CEPH_REQUIRE(spacing_mm > 0.0, "pixel spacing must be positive");
}

bool within(const LandmarkSet& set, Extent extent) {
  for (const Point& p : set.points) {
    if (!(p.x >= 0.0 && p.x <= extent.width && p.y >= 0.0 && p.y <= extent.height)) return false;
  }
  return true;
}

CoordTransform CoordTransform::between(Extent source, Extent target) {
  CEPH_REQUIRE(source.width > 0 && source.height > 0 && target.width > 0 && target.height > 0,
               "coordinate transform between degenerate extents");
  return {static_cast<double>(target.width) / source.width,
          static_cast<double>(target.height) / source.height, source, target};
}

CephImage load_image(const fs::path& path, double spacing_mm) {
  if (!fs::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw IoError("cannot decode image: " + path.string());
  double max_value = 255.0;
  switch (raw.depth()) {
    case CV_8U: max_value = 255.0; break;
    case CV_16U: max_value = 65535.0; break;
    case CV_32F:
    case CV_64F: max_value = 1.0; break;
    default: throw FormatError("unsupported raster depth in " + path.string());
  }
  cv::Mat values;
  raw.convertTo(values, CV_64F, 1.0 / max_value);
  Tensor grid({1, values.rows, values.cols});
  for (int y = 0; y < values.rows; ++y) {
    const double* row = values.ptr<double>(y);
    std::copy(row, row + values.cols, grid.data() + static_cast<std::size_t>(y) * values.cols);
  }
  return CephImage(std::move(grid), spacing_mm);
}

void save_grayscale(const fs::path& path, std::span<const double> plane, Extent extent,
                    int bit_depth) {
  CEPH_REQUIRE(plane.size() == static_cast<std::size_t>(extent.width) * extent.height,
               "plane size does not match extent");
  CEPH_REQUIRE(bit_depth == 8 || bit_depth == 16, "bit depth must be 8 or 16");
  const double full = bit_depth == 8 ? 255.0 : 65535.0;
  cv::Mat img(extent.height, extent.width, bit_depth == 8 ? CV_8U : CV_16U);
  for (int y = 0; y < extent.height; ++y) {
    for (int x = 0; x < extent.width; ++x) {
      const double v = std::clamp(plane[static_cast<std::size_t>(y) * extent.width + x], 0.0, 1.0);
      const double q = std::round(v * full);
      if (bit_depth == 8) img.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(q);
      else img.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(q);
    }
  }
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write image: " + path.string());
}

void save_counts16(const fs::path& path, std::span<const int> counts, Extent extent) {
  CEPH_REQUIRE(counts.size() == static_cast<std::size_t>(extent.width) * extent.height,
               "count grid size does not match extent");
  cv::Mat img(extent.height, extent.width, CV_16U);
  for (int y = 0; y < extent.height; ++y) {
    for (int x = 0; x < extent.width; ++x) {
      img.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(
          std::clamp(counts[static_cast<std::size_t>(y) * extent.width + x], 0, 65535));
    }
  }
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write image: " + path.string());
}

LandmarkSet read_annotation(const fs::path& path, int n) {
  CEPH_REQUIRE(n > 0, "landmark count must be positive");
  std::ifstream in(path);
  if (!in) throw IoError("annotation not found: " + path.string());
  LandmarkSet set;
  set.frame = Frame::kOriginal;
  std::string line;
  int line_no = 0;
  while (static_cast<int>(set.size()) < n && std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'x,y'");
    }
    set.points.push_back({parse_number(t.substr(0, comma), path, line_no),
                          parse_number(t.substr(comma + 1), path, line_no)});
  }
  if (static_cast<int>(set.size()) < n) {
    throw FormatError(path.string() + ": expected " + std::to_string(n) +
                      " coordinate lines, found " + std::to_string(set.size()));
  }
  return set;
}

void write_annotation(const fs::path& path, const LandmarkSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotation: " + path.string());
  out << std::fixed << std::setprecision(3);
  for (const Point& p : set.points) out << p.x << ',' << p.y << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

LandmarkSet average_annotations(const LandmarkSet& a, const LandmarkSet& b) {
  CEPH_REQUIRE(a.size() == b.size(), "annotations differ in landmark count");
  CEPH_REQUIRE(a.frame == b.frame, "annotations are in different frames");
  LandmarkSet out{{}, a.frame};
  out.points.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.points.push_back({0.5 * (a[i].x + b[i].x), 0.5 * (a[i].y + b[i].y)});
  }
  return out;
}

std::pair<CephImage, LandmarkSet> load_sample(const fs::path& image_path,
                                              const fs::path& annotation_path, int n,
                                              double spacing_mm) {
  if (!fs::exists(annotation_path)) throw IoError("annotation not found: " + annotation_path.string());
  CephImage image = load_image(image_path, spacing_mm);
  LandmarkSet points = read_annotation(annotation_path, n);
  return {std::move(image), std::move(points)};
}

NetworkInput resize_to_network(const CephImage& image, Extent target) {
  if (image.pixels.empty() || image.width_px() <= 0 || image.height_px() <= 0) {
    throw ContractError("cannot resize a zero-extent image");
  }
  CoordTransform t = CoordTransform::between(image.extent(), target);
  return {nn::resize_bilinear(image.pixels, target.height, target.width, nn::SampleGrid::kScale), t};
}

LandmarkSet map_coords(const CoordTransform& t, const LandmarkSet& pts, Direction direction) {
  const Frame expected = direction == Direction::kForward ? Frame::kOriginal : Frame::kNetwork;
  CEPH_REQUIRE(pts.frame == expected, direction == Direction::kForward
                                          ? "forward mapping expects ORIGINAL-frame points"
                                          : "inverse mapping expects NETWORK-frame points");
  LandmarkSet out;
  out.frame = direction == Direction::kForward ? Frame::kNetwork : Frame::kOriginal;
  out.points.reserve(pts.size());
  for (const Point& p : pts.points) {
    out.points.push_back(direction == Direction::kForward ? t.forward(p) : t.inverse(p));
  }
  return out;
}

}  // namespace ceph
