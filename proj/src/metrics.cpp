#include "ceph/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ceph {

std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& gt, double spacing_mm) {
  CEPH_REQUIRE(pred.frame == Frame::kOriginal && gt.frame == Frame::kOriginal,
               "radial errors are measured in the ORIGINAL frame");
  CEPH_REQUIRE(pred.size() == gt.size(), "prediction has " + std::to_string(pred.size()) +
                                             " landmarks, ground truth " + std::to_string(gt.size()));
  CEPH_REQUIRE(spacing_mm > 0.0, "pixel spacing must be positive");
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out[i] = spacing_mm * std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  }
  return out;
}

EvaluationReport aggregate(const std::vector<std::vector<double>>& errors,
                           const std::vector<double>& thresholds) {
  std::size_t count = 0;
  double sum = 0.0;
  for (const auto& row : errors) {
    for (double e : row) {
      sum += e;
      ++count;
    }
  }
  CEPH_REQUIRE(count > 0, "cannot aggregate an empty error matrix");
  EvaluationReport r;
  r.per_landmark_errors_mm = errors;
  r.thresholds = thresholds;
  r.mre_mm = sum / count;
  double sq = 0.0;
  for (const auto& row : errors) {
    for (double e : row) sq += (e - r.mre_mm) * (e - r.mre_mm);
  }
  r.sd_mm = std::sqrt(sq / count);
  for (double t : thresholds) {
    std::size_t hits = 0;
    for (const auto& row : errors) {
      for (double e : row) hits += e <= t ? 1 : 0;
    }
    r.sdr[t] = 100.0 * static_cast<double>(hits) / static_cast<double>(count);
  }
  return r;
}

std::string EvaluationReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "samples = " << per_landmark_errors_mm.size() << '\n';
  out << "landmarks = " << (per_landmark_errors_mm.empty() ? 0 : per_landmark_errors_mm[0].size()) << '\n';
  out << "mre_mm = " << mre_mm << '\n';
  out << "sd_mm = " << sd_mm << '\n';
  for (const auto& [t, v] : sdr) out << "sdr_" << t << "mm = " << v << '\n';
  for (std::size_t s = 0; s < per_landmark_errors_mm.size(); ++s) {
    const std::string id = s < sample_ids.size() ? sample_ids[s] : std::to_string(s);
    out << "errors_mm." << id << " =";
    for (double e : per_landmark_errors_mm[s]) out << ' ' << e;
    out << '\n';
    if (s < predictions.size()) {
      out << "pred." << id << " =";
      for (const Point& p : predictions[s].points) out << ' ' << p.x << ',' << p.y;
      out << '\n';
    }
  }
  return out.str();
}

void EvaluationReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << to_text();
  if (!out) throw IoError("write failed: " + path.string());
}

void EvaluationReport::print_table(std::ostream& out) const {
  out << std::left << std::setw(10) << "MRE";
  for (double t : thresholds) {
    std::ostringstream h;
    h << t << "mm";
    out << std::setw(10) << h.str();
  }
  out << '\n' << std::fixed << std::setprecision(2) << std::setw(10) << mre_mm;
  for (double t : thresholds) out << std::setw(10) << sdr.at(t);
  out << '\n' << "sd " << sd_mm << " mm\n";
  out.unsetf(std::ios::fixed);
}

}  // namespace ceph
