#include "ceph/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

namespace ceph {

namespace fs = std::filesystem;

void DatasetSplit::check_disjoint() const {
  std::set<std::string> seen;
  for (const auto* list : {&train, &validate, &test}) {
    for (const std::string& id : *list) {
      if (!seen.insert(id).second) throw ContractError("identifier '" + id + "' appears in two splits");
    }
  }
}

SplitPart parse_split_part(const std::string& name) {
  if (name == "train") return SplitPart::kTrain;
  if (name == "validate") return SplitPart::kValidate;
  if (name == "test") return SplitPart::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, validate or test)");
}

DatasetSplit read_split(const fs::path& path, double* spacing_mm) {
  std::ifstream in(path);
  if (!in) throw IoError("split file not found: " + path.string());
  DatasetSplit split;
  std::vector<std::string>* current = nullptr;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream tokens(line);
    std::string tok;
    while (tokens >> tok) {
      if (tok == "train:") current = &split.train;
      else if (tok == "validate:") current = &split.validate;
      else if (tok == "test:") current = &split.test;
      else if (tok == "spacing_mm:") {
        double v = 0.0;
        if (!(tokens >> v) || v <= 0.0) {
          throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad spacing_mm");
        }
        if (spacing_mm) *spacing_mm = v;
      } else if (current == nullptr) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": identifier before any train:/validate:/test: header");
      } else {
        current->push_back(tok);
      }
    }
  }
  split.check_disjoint();
  return split;
}

void write_split(const fs::path& path, const DatasetSplit& split, double spacing_mm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file: " + path.string());
  out << "spacing_mm: " << std::setprecision(17) << spacing_mm << '\n';
  const std::pair<const char*, const std::vector<std::string>*> parts[] = {
      {"train:", &split.train}, {"validate:", &split.validate}, {"test:", &split.test}};
  for (const auto& [header, ids] : parts) {
    out << header << '\n';
    for (const std::string& id : *ids) out << id << '\n';
  }
}

Dataset Dataset::open(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  Dataset ds;
  ds.root_ = root;
  ds.split_ = read_split(root / "split.txt", &ds.spacing_mm_);
  return ds;
}

const std::vector<std::string>& Dataset::ids(SplitPart part) const {
  switch (part) {
    case SplitPart::kTrain: return split_.train;
    case SplitPart::kValidate: return split_.validate;
    case SplitPart::kTest: return split_.test;
  }
  return split_.train;
}

Sample Dataset::load(const std::string& id, int n_landmarks) const {
  fs::path image_path;
  const fs::path image_dir = root_ / "images";
  if (fs::is_directory(image_dir)) {
    for (const auto& entry : fs::directory_iterator(image_dir)) {
      if (entry.is_regular_file() && entry.path().stem() == id) {
        // Directory order is unspecified; take the lexicographically first match.
        if (image_path.empty() || entry.path() < image_path) image_path = entry.path();
      }
    }
  }
  if (image_path.empty()) throw IoError("no image for sample '" + id + "' under " + image_dir.string());
  auto [image, points] =
      load_sample(image_path, root_ / "annotations" / (id + ".txt"), n_landmarks, spacing_mm_);
  const fs::path second = root_ / "annotations2" / (id + ".txt");
  if (fs::exists(second)) points = average_annotations(points, read_annotation(second, n_landmarks));
  return {id, std::move(image), std::move(points)};
}

std::vector<Sample> Dataset::load_all(SplitPart part, int n_landmarks) const {
  std::vector<Sample> out;
  for (const std::string& id : ids(part)) out.push_back(load(id, n_landmarks));
  return out;
}

void write_dataset(const fs::path& root, const std::vector<Sample>& samples,
                   const DatasetSplit& split, double spacing_mm) {
  split.check_disjoint();
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "annotations", ec);
  if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());
  for (const Sample& s : samples) {
    save_grayscale(root / "images" / (s.id + ".png"), s.image.pixels.values(), s.image.extent(), 8);
    write_annotation(root / "annotations" / (s.id + ".txt"), s.landmarks);
  }
  write_split(root / "split.txt", split, spacing_mm);
}

Primitive primitive_for(int landmark_index) {
  return static_cast<Primitive>(landmark_index % kPrimitiveKinds);
}

void render_primitive(CephImage& image, Primitive kind, int cx, int cy, int radius) {
  const int w = image.width_px(), h = image.height_px();
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int x = cx + dx, y = cy + dy;
      if (x < 0 || y < 0 || x >= w || y >= h) continue;
      const int adx = std::abs(dx), ady = std::abs(dy);
      bool inside = false;
      double falloff = std::max(adx, ady) / static_cast<double>(radius);
      switch (kind) {
        case Primitive::kDisc:
          falloff = std::sqrt(static_cast<double>(dx * dx + dy * dy)) / radius;
          inside = falloff <= 1.0;
          break;
        case Primitive::kCross: inside = adx <= 1 || ady <= 1; break;
        case Primitive::kSaltire: inside = std::abs(dx - dy) <= 1 || std::abs(dx + dy) <= 1; break;
        case Primitive::kCornerNE: inside = (dx >= -1 && ady <= 1) || (dy <= 1 && adx <= 1); break;
        case Primitive::kCornerNW: inside = (dx <= 1 && ady <= 1) || (dy <= 1 && adx <= 1); break;
        case Primitive::kCornerSE: inside = (dx >= -1 && ady <= 1) || (dy >= -1 && adx <= 1); break;
        case Primitive::kCornerSW: inside = (dx <= 1 && ady <= 1) || (dy >= -1 && adx <= 1); break;
      }
      if (!inside) continue;
      // Quantized to 8 bits so written datasets reload bit-identically.
      const double v = std::round((1.0 - 0.5 * falloff) * 255.0) / 255.0;
      image.at(y, x) = std::max(image.at(y, x), v);
    }
  }
}

std::vector<Sample> generate_synthetic(const SyntheticOptions& o) {
  CEPH_REQUIRE(o.count > 0, "synthetic count must be positive");
  CEPH_REQUIRE(o.n_landmarks > 0, "synthetic landmark count must be positive");
  CEPH_REQUIRE(o.min_separation >= 4, "minimum separation must be at least 4 pixels");
  const int sep = o.min_separation;
  const int lo_x = sep, hi_x = o.extent.width - 1 - sep;
  const int lo_y = sep, hi_y = o.extent.height - 1 - sep;
  if (hi_x < lo_x || hi_y < lo_y) {
    throw ContractError("extent " + std::to_string(o.extent.width) + "x" +
                        std::to_string(o.extent.height) + " too small for border distance " +
                        std::to_string(sep));
  }
  const int radius = sep / 2 - 1;
  const double background = 20.0 / 255.0;

  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> ux(lo_x, hi_x), uy(lo_y, hi_y);
  std::vector<Sample> out;
  out.reserve(o.count);
  for (int i = 0; i < o.count; ++i) {
    std::vector<Point> pts;
    for (int restart = 0; static_cast<int>(pts.size()) < o.n_landmarks; ++restart) {
      if (restart == 200) {
        throw ContractError("cannot place " + std::to_string(o.n_landmarks) +
                            " landmarks with separation " + std::to_string(sep) + " in extent " +
                            std::to_string(o.extent.width) + "x" + std::to_string(o.extent.height));
      }
      pts.clear();
      for (int attempt = 0; attempt < 2000 && static_cast<int>(pts.size()) < o.n_landmarks; ++attempt) {
        const Point cand{static_cast<double>(ux(rng)), static_cast<double>(uy(rng))};
        bool ok = true;
        for (const Point& p : pts) {
          if (std::hypot(p.x - cand.x, p.y - cand.y) < sep) {
            ok = false;
            break;
          }
        }
        if (ok) pts.push_back(cand);
      }
    }
    CephImage image(Tensor({1, o.extent.height, o.extent.width}, background), o.spacing_mm);
    for (int k = 0; k < o.n_landmarks; ++k) {
      render_primitive(image, primitive_for(k), static_cast<int>(pts[k].x), static_cast<int>(pts[k].y),
                       radius);
    }
    std::ostringstream id;
    id << "synth_" << std::setw(4) << std::setfill('0') << i;
    out.push_back({id.str(), std::move(image), LandmarkSet{std::move(pts), Frame::kOriginal}});
  }
  return out;
}

}  // namespace ceph
