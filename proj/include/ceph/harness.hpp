#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceph/dataset.hpp"
#include "ceph/metrics.hpp"
#include "ceph/model.hpp"
#include "ceph/optim.hpp"
#include "ceph/voting.hpp"

namespace ceph {

/// Training configuration. The file form is INI-style:
///
///   [model]   backbone, n_landmarks, network_width, network_height,
///             lateral_channels, pyramid_channels, hidden, backbone_weights
///   [loss]    R, alpha
///   [optim]   epochs, batch_size, lr, rho, eps
///   [run]     seed, dataset, checkpoint_dir
///
/// Keys are unique across sections, so each can be overridden by a CLI
/// flag of the same name.
struct TrainConfig {
  ModelConfig model;
  TargetConfig target;
  int epochs = 350;
  int batch_size = 1;
  AdadeltaOptions optimizer;
  std::uint64_t seed = 0;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  // Canonical "key = value" rendering; its SHA-256 is the config digest.
  std::string canonical() const;
  std::string digest() const;
};

/// Keys accepted in config files and as CLI overrides.
const std::vector<std::string>& train_config_keys();

/// Applies one key/value pair. Throws ConfigError on unknown keys or
/// unparsable values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Reads an INI config; `overrides` (key -> value) are applied afterwards.
TrainConfig load_train_config(const std::filesystem::path& path,
                              const std::map<std::string, std::string>& overrides = {});

struct CheckpointManifest {
  std::string config_digest;
  int epoch = 0;
  std::string wall_clock;  // UTC, ISO-8601
  double validation_mre_mm = 0.0;
  std::string backbone_weight_digest;  // digest of externally supplied weights, or "random:<seed>"
  std::string parameter_digest;        // SHA-256 of model.bin
  TrainConfig config;
};

/// Checkpoint directory: model.bin (all parameters) + manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const LandmarkNet& net,
                     CheckpointManifest& manifest);
struct LoadedCheckpoint {
  CheckpointManifest manifest;
  LandmarkNet net;
};
/// Rebuilds the architecture from the manifest and verifies the parameter
/// digest before loading.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// A sample resized to the network extent with NETWORK-frame landmarks.
struct PreparedSample {
  std::string id;
  Tensor image;
  CoordTransform transform;
  LandmarkSet network_landmarks;
  LandmarkSet original_landmarks;
  double spacing_mm = kIsbiSpacingMm;
};

PreparedSample prepare(const Sample& sample, Extent network_extent);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean total loss over the epoch's samples
  double validation_mre_mm = 0.0;
};

struct TrainResult {
  CheckpointManifest best;
  std::vector<EpochLog> history;
  std::vector<double> step_losses;  // total loss of every sample, in visit order
};

using TrainLogger = std::function<void(const EpochLog&)>;

/// Seeded, single-threaded training. The best validation-MRE model is saved
/// to `cfg.checkpoint_dir` (when set). Selection uses the validation split,
/// or the training split when the validation split is empty.
TrainResult train(const TrainConfig& cfg, const TrainLogger& log = {});
TrainResult train(const TrainConfig& cfg, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& validation_set, const TrainLogger& log = {});

/// resize -> forward -> decode (heat fallback) -> inverse mapping -> errors.
EvaluationReport evaluate(const LandmarkNet& net, int radius, const std::vector<PreparedSample>& samples);
EvaluationReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                          SplitPart part = SplitPart::kTest);

struct Prediction {
  LandmarkSet landmarks;  // ORIGINAL frame
  PredictionMaps maps;
  DecodeResult decoded;
  AttentionWeights attention;
};

Prediction predict(const LandmarkNet& net, int radius, const CephImage& image);
LandmarkSet predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                    const std::optional<std::filesystem::path>& dump_dir = std::nullopt);

/// Per-landmark heat_<k>.png (8-bit), votes_<k>.png (16-bit counts) and an
/// attention.txt table of (landmark, output, channel, weight).
void dump_maps(const std::filesystem::path& dir, const Prediction& p);

}  // namespace ceph
