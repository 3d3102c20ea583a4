#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ceph/image.hpp"

namespace ceph {

inline const std::vector<double> kSdrThresholdsMm{2.0, 2.5, 3.0, 4.0};

/// spacing_mm * |pred_i - gt_i| for each landmark, ORIGINAL frame.
std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& gt, double spacing_mm);

struct EvaluationReport {
  std::vector<std::vector<double>> per_landmark_errors_mm;  // samples x n
  double mre_mm = 0.0;
  double sd_mm = 0.0;  // population standard deviation over all entries
  std::vector<double> thresholds;
  std::map<double, double> sdr;  // threshold (mm) -> percentage with error <= threshold

  // Optional context filled in by the harness: per-sample identifiers and
  // predicted ORIGINAL-frame coordinates, for downstream classifiers.
  std::vector<std::string> sample_ids;
  std::vector<LandmarkSet> predictions;

  /// Flat "key = value" text, one entry per line.
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;
  /// MRE, 2mm, 2.5mm, 3mm, 4mm columns.
  void print_table(std::ostream& out) const;
};

EvaluationReport aggregate(const std::vector<std::vector<double>>& errors,
                           const std::vector<double>& thresholds = kSdrThresholdsMm);

}  // namespace ceph
