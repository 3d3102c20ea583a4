// Command-line front end: train, eval, predict, make-synthetic, init-backbone.
//
// Exit codes: 0 success, 1 validation/config error, 2 I/O or format error,
// 3 numerical failure.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ceph/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kIo = 2, kNumeric = 3 };

ceph::Extent parse_extent(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw ceph::ConfigError("extent must look like WxH, got '" + text + "'");
  try {
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ceph::ConfigError("extent must look like WxH, got '" + text + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cephalometric landmark detection: attentive feature pyramid fusion with regression voting"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "INI config file")->required();
  std::map<std::string, std::string> overrides;
  for (const std::string& key : ceph::train_config_keys()) {
    train_cmd->add_option_function<std::string>(
        "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
        "override config key '" + key + "'");
  }

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_dataset, eval_out, eval_split = "test";
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "report file")->required();
  eval_cmd->add_option("--split", eval_split, "train, validate or test")->capture_default_str();

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Detect landmarks in one image");
  std::string pred_ckpt, pred_image, pred_out, pred_dump;
  predict_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint directory")->required();
  predict_cmd->add_option("--image", pred_image, "input image")->required();
  predict_cmd->add_option("--dump-maps", pred_dump, "directory for heat/vote images and attention table");
  predict_cmd->add_option("--out", pred_out, "annotation file to write (default: stdout)");

  // make-synthetic
  auto* synth_cmd = app.add_subcommand("make-synthetic", "Generate a synthetic dataset");
  ceph::SyntheticOptions synth;
  std::string synth_extent = "128x128", synth_out;
  int synth_validate = 0, synth_test = 0;
  synth_cmd->add_option("--count", synth.count, "number of images")->required();
  synth_cmd->add_option("--extent", synth_extent, "image size WxH")->required();
  synth_cmd->add_option("--landmarks", synth.n_landmarks, "landmarks per image")->required();
  synth_cmd->add_option("--seed", synth.seed, "random seed")->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--separation", synth.min_separation, "minimum landmark/border distance")
      ->capture_default_str();
  synth_cmd->add_option("--spacing", synth.spacing_mm, "pixel spacing in mm")->capture_default_str();
  synth_cmd->add_option("--validate", synth_validate, "trailing images assigned to validate")
      ->capture_default_str();
  synth_cmd->add_option("--test", synth_test, "trailing images assigned to test")->capture_default_str();

  // init-backbone
  auto* init_cmd = app.add_subcommand("init-backbone", "Write seeded backbone weights to a file");
  std::string init_variant = "VGG19_STYLE", init_out;
  std::uint64_t init_seed = 0;
  init_cmd->add_option("--backbone", init_variant, "VGG19_STYLE or TINY_TEST")->capture_default_str();
  init_cmd->add_option("--seed", init_seed, "random seed")->capture_default_str();
  init_cmd->add_option("--out", init_out, "weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) {
      const ceph::TrainConfig cfg = ceph::load_train_config(config_path, overrides);
      std::cout << "config digest " << cfg.digest() << '\n';
      const ceph::TrainResult r = ceph::train(cfg, [](const ceph::EpochLog& e) {
        std::cout << "epoch " << e.epoch << " train_loss " << std::setprecision(6) << e.train_loss
                  << " validation_mre_mm " << e.validation_mre_mm << std::endl;
      });
      std::cout << "best epoch " << r.best.epoch << " validation_mre_mm " << r.best.validation_mre_mm;
      if (!cfg.checkpoint_dir.empty()) std::cout << " saved to " << cfg.checkpoint_dir.string();
      std::cout << '\n';
    } else if (*eval_cmd) {
      const ceph::EvaluationReport report =
          ceph::evaluate(eval_ckpt, eval_dataset, ceph::parse_split_part(eval_split));
      report.write(eval_out);
      report.print_table(std::cout);
    } else if (*predict_cmd) {
      std::optional<std::filesystem::path> dump;
      if (!pred_dump.empty()) dump = pred_dump;
      const ceph::LandmarkSet points = ceph::predict(pred_ckpt, pred_image, dump);
      if (pred_out.empty()) {
        std::cout << std::fixed << std::setprecision(3);
        for (const auto& p : points.points) std::cout << p.x << ',' << p.y << '\n';
      } else {
        ceph::write_annotation(pred_out, points);
      }
    } else if (*synth_cmd) {
      synth.extent = parse_extent(synth_extent);
      if (synth_validate < 0 || synth_test < 0 || synth_validate + synth_test >= synth.count) {
        throw ceph::ConfigError("validate + test must leave at least one training image");
      }
      const auto samples = ceph::generate_synthetic(synth);
      ceph::DatasetSplit split;
      const int n_train = synth.count - synth_validate - synth_test;
      for (int i = 0; i < synth.count; ++i) {
        auto& bucket = i < n_train ? split.train
                                   : (i < n_train + synth_validate ? split.validate : split.test);
        bucket.push_back(samples[i].id);
      }
      ceph::write_dataset(synth_out, samples, split, synth.spacing_mm);
      std::cout << "wrote " << samples.size() << " samples to " << synth_out << '\n';
    } else if (*init_cmd) {
      const ceph::Backbone b(ceph::BackboneSpec::for_variant(ceph::parse_backbone_variant(init_variant)),
                             init_seed);
      b.save_weights(init_out);
    }
  } catch (const ceph::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const ceph::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const ceph::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const ceph::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ceph::ContractError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  } catch (const ceph::EmptyVoteError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  }
  return kOk;
}
