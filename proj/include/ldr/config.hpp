#pragma once

// Experiment configuration: flat "key = value" lines with dotted section
// prefixes, '#' comments. Unknown or repeated keys are rejected with the line
// number. Relative paths resolve against the config file's directory.

#include "ldr/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ldr {

enum class DataSource { Synthetic, Idx };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  // synthetic
  Index ambient_dim = 20;
  std::vector<Index> class_dims{2, 2, 2};
  double noise = 0.0;
  Warp warp = Warp::None;
  Index per_class = 300;
  // idx
  std::filesystem::path images;
  std::filesystem::path labels;
  std::vector<int> classes;
  Index downsample = 0;
  std::vector<Mode> modes;  // empty = untransformed
  // both
  double heldout_fraction = 0.2;
};

struct NetConfig {
  Index feature_dim = 12;
  std::vector<Index> encoder_hidden{64, 64};
  std::vector<Index> decoder_hidden{64, 64};
  ad::Activation encoder_activation = ad::Activation::LeakyRelu;
  ad::Activation decoder_activation = ad::Activation::Relu;
  ad::Activation decoder_output = ad::Activation::None;
  bool spectral_norm = false;
};

struct AnalysisConfig {
  double sample_range = 1.0;
  Index samples_per_class = 8;
  int interpolate_steps = 8;
  Index interpolate_from = -1;  // dataset column; -1 = first training sample of class 0
  Index interpolate_to = -1;    // -1 = first training sample of class 1
  Index components = 4;
  Index top_m = 4;
  bool signed_components = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output = "ldr-out";
  bool strict = false;
  DataConfig data;
  NetConfig net;
  TrainConfig trainer;
  AnalysisConfig analysis;
};

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its resolved value, one per line in a fixed order. Parsing
// the echo yields the same configuration.
std::string echo_config(const ExperimentConfig& config);

}  // namespace ldr
