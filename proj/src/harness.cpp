#include "ceph/harness.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "ceph/serialize.hpp"

namespace ceph {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  }
  return out;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "backbone", "n_landmarks", "network_width", "network_height", "lateral_channels",
      "pyramid_channels", "hidden", "backbone_weights", "R", "alpha", "epochs", "batch_size",
      "lr", "rho", "eps", "seed", "dataset", "checkpoint_dir"};
  return keys;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "backbone") cfg.model.variant = parse_backbone_variant(value);
  else if (key == "n_landmarks") cfg.model.n_landmarks = parse_value<int>(key, value);
  else if (key == "network_width") cfg.model.input.width = parse_value<int>(key, value);
  else if (key == "network_height") cfg.model.input.height = parse_value<int>(key, value);
  else if (key == "lateral_channels") cfg.model.lateral_channels = parse_value<int>(key, value);
  else if (key == "pyramid_channels") cfg.model.pyramid_channels = parse_value<int>(key, value);
  else if (key == "hidden") cfg.model.hidden = parse_value<int>(key, value);
  else if (key == "backbone_weights") {
    if (value.empty()) cfg.model.backbone_weights.reset();
    else cfg.model.backbone_weights = value;
  } else if (key == "R") cfg.target.radius = parse_value<int>(key, value);
  else if (key == "alpha") cfg.target.alpha = parse_value<double>(key, value);
  else if (key == "epochs") cfg.epochs = parse_value<int>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_value<int>(key, value);
  else if (key == "lr") cfg.optimizer.lr = parse_value<double>(key, value);
  else if (key == "rho") cfg.optimizer.rho = parse_value<double>(key, value);
  else if (key == "eps") cfg.optimizer.eps = parse_value<double>(key, value);
  else if (key == "seed") cfg.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (model.n_landmarks < 1) throw ConfigError("n_landmarks must be at least 1");
  if (!(optimizer.lr > 0.0) || !(optimizer.rho > 0.0 && optimizer.rho < 1.0) || !(optimizer.eps > 0.0)) {
    throw ConfigError("optimizer requires lr > 0, 0 < rho < 1, eps > 0");
  }
  try {
    model.afpf().validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  target.validate(model.backbone().max_stride());
  if (voter_count(target.radius) > model.input.width * model.input.height) {
    throw ConfigError("R is too large for the network extent");
  }
}

std::string TrainConfig::canonical() const {
  std::ostringstream s;
  s << "backbone = " << to_string(model.variant) << '\n'
    << "n_landmarks = " << model.n_landmarks << '\n'
    << "network_width = " << model.input.width << '\n'
    << "network_height = " << model.input.height << '\n'
    << "lateral_channels = " << model.lateral_channels << '\n'
    << "pyramid_channels = " << model.pyramid_channels << '\n'
    << "hidden = " << model.hidden << '\n'
    << "backbone_weights = " << (model.backbone_weights ? model.backbone_weights->string() : "") << '\n'
    << "R = " << target.radius << '\n'
    << "alpha = " << format_double(target.alpha) << '\n'
    << "epochs = " << epochs << '\n'
    << "batch_size = " << batch_size << '\n'
    << "lr = " << format_double(optimizer.lr) << '\n'
    << "rho = " << format_double(optimizer.rho) << '\n'
    << "eps = " << format_double(optimizer.eps) << '\n'
    << "seed = " << seed << '\n'
    << "dataset = " << dataset.string() << '\n'
    << "checkpoint_dir = " << checkpoint_dir.string() << '\n';
  return s.str();
}

std::string TrainConfig::digest() const { return sha256_string(canonical()); }

TrainConfig load_train_config(const fs::path& path, const std::map<std::string, std::string>& overrides) {
  if (!fs::exists(path)) throw IoError("config not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  TrainConfig cfg;
  const fs::path base = path.parent_path();
  auto apply = [&](const std::string& key, std::string value) {
    // Relative paths in a config file are relative to the file.
    if ((key == "dataset" || key == "checkpoint_dir" || key == "backbone_weights") && !value.empty() &&
        fs::path(value).is_relative()) {
      value = (base / value).lexically_normal().string();
    }
    set_config_value(cfg, key, value);
  };
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      apply(name, node.data());
    } else {
      for (const auto& [key, leaf] : node) apply(key, leaf.data());
    }
  }
  for (const auto& [key, value] : overrides) set_config_value(cfg, key, value);
  return cfg;
}

void save_checkpoint(const fs::path& dir, const LandmarkNet& net, CheckpointManifest& manifest) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const fs::path blob = dir / "model.bin";
  net.save(blob);
  manifest.parameter_digest = sha256_file(blob);
  json config = json::object();
  std::istringstream lines(manifest.config.canonical());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  const json j{{"config_digest", manifest.config_digest},
               {"epoch", manifest.epoch},
               {"wall_clock", manifest.wall_clock},
               {"validation_mre_mm", manifest.validation_mre_mm},
               {"backbone_weight_digest", manifest.backbone_weight_digest},
               {"parameter_digest", manifest.parameter_digest},
               {"architecture", net.config().signature()},
               {"config", config}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("checkpoint manifest not found: " + manifest_path.string());
  LoadedCheckpoint ckpt;
  CheckpointManifest& m = ckpt.manifest;
  try {
    const json j = json::parse(in);
    for (const auto& [key, value] : j.at("config").items()) {
      set_config_value(m.config, key, value.get<std::string>());
    }
    m.config_digest = j.at("config_digest").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    m.wall_clock = j.at("wall_clock").get<std::string>();
    m.validation_mre_mm = j.at("validation_mre_mm").get<double>();
    m.backbone_weight_digest = j.at("backbone_weight_digest").get<std::string>();
    m.parameter_digest = j.at("parameter_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path blob = dir / "model.bin";
  if (!fs::exists(blob)) throw IoError("checkpoint parameters not found: " + blob.string());
  if (sha256_file(blob) != m.parameter_digest) {
    throw FormatError("parameter digest mismatch in " + dir.string());
  }
  ModelConfig model = m.config.model;
  model.backbone_weights.reset();  // the blob already holds every parameter
  ckpt.net = LandmarkNet(model, m.config.seed);
  ckpt.net.load(blob);
  return ckpt;
}

PreparedSample prepare(const Sample& sample, Extent network_extent) {
  NetworkInput in = resize_to_network(sample.image, network_extent);
  LandmarkSet mapped = map_coords(in.transform, sample.landmarks, Direction::kForward);
  if (!within(mapped, network_extent)) {
    throw ContractError("sample '" + sample.id + "' has landmarks outside the image");
  }
  return {sample.id, std::move(in.grid), in.transform, std::move(mapped), sample.landmarks,
          sample.image.spacing_mm};
}

EvaluationReport evaluate(const LandmarkNet& net, int radius, const std::vector<PreparedSample>& samples) {
  CEPH_REQUIRE(!samples.empty(), "cannot evaluate an empty dataset");
  std::vector<std::vector<double>> errors;
  std::vector<std::string> ids;
  std::vector<LandmarkSet> predictions;
  for (const PreparedSample& s : samples) {
    const PredictionMaps maps = net.forward(s.image);
    const LandmarkSet decoded = decode(maps, radius, {.heat_fallback = true});
    LandmarkSet original = map_coords(s.transform, decoded, Direction::kInverse);
    errors.push_back(radial_errors(original, s.original_landmarks, s.spacing_mm));
    ids.push_back(s.id);
    predictions.push_back(std::move(original));
  }
  EvaluationReport r = aggregate(errors);
  r.sample_ids = std::move(ids);
  r.predictions = std::move(predictions);
  return r;
}

namespace {

std::vector<PreparedSample> prepare_all(const Dataset& ds, SplitPart part, const ModelConfig& model) {
  std::vector<PreparedSample> out;
  for (const Sample& s : ds.load_all(part, model.n_landmarks)) out.push_back(prepare(s, model.input));
  return out;
}

}  // namespace

EvaluationReport evaluate(const fs::path& checkpoint, const fs::path& dataset, SplitPart part) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const Dataset ds = Dataset::open(dataset);
  const auto samples = prepare_all(ds, part, ckpt.net.config());
  if (samples.empty()) throw ConfigError("dataset split is empty: " + dataset.string());
  return evaluate(ckpt.net, ckpt.manifest.config.target.radius, samples);
}

TrainResult train(const TrainConfig& cfg, const TrainLogger& log) {
  cfg.validate();
  const Dataset ds = Dataset::open(cfg.dataset);
  const auto train_set = prepare_all(ds, SplitPart::kTrain, cfg.model);
  const auto validation_set = prepare_all(ds, SplitPart::kValidate, cfg.model);
  return train(cfg, train_set, validation_set, log);
}

TrainResult train(const TrainConfig& cfg, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& validation_set, const TrainLogger& log) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  LandmarkNet net(cfg.model, cfg.seed);
  Adadelta optimizer(net.parameters(), cfg.optimizer);
  std::mt19937_64 shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  const auto& selection = validation_set.empty() ? train_set : validation_set;
  const std::string config_digest = cfg.digest();
  const std::string backbone_digest = net.backbone().weights_digest().empty()
                                          ? "random:" + std::to_string(cfg.seed)
                                          : net.backbone().weights_digest();

  TrainResult result;
  result.best.validation_mre_mm = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      optimizer.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const PreparedSample& s = train_set[order[i]];
        const LossBreakdown l = sample_loss(net, s.image, s.network_landmarks, cfg.target, true, scale);
        if (!std::isfinite(l.total)) {
          throw NumericalError("non-finite loss (heat " + format_double(l.heat) + ", offset " +
                               format_double(l.offset) + ") on sample '" + s.id + "' in epoch " +
                               std::to_string(epoch));
        }
        epoch_loss += l.total;
        result.step_losses.push_back(l.total);
      }
      optimizer.step();
    }
    const EvaluationReport report = evaluate(net, cfg.target.radius, selection);
    const EpochLog entry{epoch, epoch_loss / static_cast<double>(order.size()), report.mre_mm};
    result.history.push_back(entry);
    if (log) log(entry);
    if (report.mre_mm < result.best.validation_mre_mm) {
      CheckpointManifest m;
      m.config = cfg;
      m.config_digest = config_digest;
      m.epoch = epoch;
      m.wall_clock = utc_now();
      m.validation_mre_mm = report.mre_mm;
      m.backbone_weight_digest = backbone_digest;
      if (!cfg.checkpoint_dir.empty()) save_checkpoint(cfg.checkpoint_dir, net, m);
      result.best = std::move(m);
    }
  }
  return result;
}

Prediction predict(const LandmarkNet& net, int radius, const CephImage& image) {
  const NetworkInput in = resize_to_network(image, net.config().input);
  LandmarkNet::Cache cache;
  Prediction p;
  p.maps = net.forward(in.grid, &cache);
  p.attention = cache.afpf.attention;
  p.decoded = decode_detailed(p.maps, radius, {.heat_fallback = true});
  p.landmarks = map_coords(in.transform, p.decoded.landmarks, Direction::kInverse);
  return p;
}

LandmarkSet predict(const fs::path& checkpoint, const fs::path& image,
                    const std::optional<fs::path>& dump_dir) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const CephImage img = load_image(image);
  Prediction p = predict(ckpt.net, ckpt.manifest.config.target.radius, img);
  if (dump_dir) dump_maps(*dump_dir, p);
  return std::move(p.landmarks);
}

void dump_maps(const fs::path& dir, const Prediction& p) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dump directory " + dir.string() + ": " + ec.message());
  const Extent extent = p.maps.extent();
  for (int k = 0; k < p.maps.landmarks(); ++k) {
    save_grayscale(dir / ("heat_" + std::to_string(k) + ".png"), p.maps.heat.plane(k), extent, 8);
    save_counts16(dir / ("votes_" + std::to_string(k) + ".png"), p.decoded.activations[k].votes, extent);
  }
  std::ofstream table(dir / "attention.txt");
  if (!table) throw IoError("cannot write attention table in " + dir.string());
  static const char* kOutputs[] = {"heat", "offset_x", "offset_y"};
  table << "# landmark output channel weight\n" << std::setprecision(9);
  for (int k = 0; k < p.attention.landmarks(); ++k) {
    for (int j = 0; j < 3; ++j) {
      const auto v = p.attention.vec(k, j);
      for (std::size_t ch = 0; ch < v.size(); ++ch) {
        table << k << ' ' << kOutputs[j] << ' ' << ch << ' ' << v[ch] << '\n';
      }
    }
  }
}

}  // namespace ceph
