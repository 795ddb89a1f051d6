#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crs/curves.hpp"
#include "crs/model_spec.hpp"
#include "crs/train.hpp"

namespace crs {

/// Per-stage attention override: only the fields present replace the
/// model-wide attention settings.
struct AttentionOverride {
  std::optional<AttentionKind> kind;
  std::optional<Scale> window;
  std::optional<int> k1, k2;
  std::optional<Placement> placement;
};

struct ModelConfig {
  int input_channels = 3;
  int input_size = 32;
  int num_classes = 10;
  std::vector<int> channels = {16, 32, 64};
  std::vector<int> blocks = {3, 3, 3};
  double width_multiplier = 1.0;
  int depth_multiplier = 1;
  AttentionSpec attention;  // kind=none by default
  std::map<int, AttentionOverride> stage_overrides;  // 1-based stage index

  ModelSpec to_spec() const;
};

enum class DataSource { cifar10, synth, dump };

struct DataConfig {
  DataSource source = DataSource::synth;
  std::string cifar_dir;
  std::string dump_path;
  int synth_classes = 4;
  int synth_n_per_class = 250;
  int synth_size = 16;
  int synth_channels = 3;
  double synth_separation = 4.5;
  uint64_t synth_seed = 123;
};

struct AnalysisConfig {
  std::vector<Scale> scales = {Scale::of(1), Scale::of(2), Scale::of(4), Scale::of(8),
                               Scale::global_scale()};
  int neighbors = 10;
  Metric metric = Metric::euclidean;
  int max_samples = 1000;
  std::string split = "train";
};

struct OutputConfig {
  std::string dir = "runs/out";
};

/// Whole-run configuration parsed from the sectioned key=value format.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AnalysisConfig analysis;
  DataConfig data;
  OutputConfig output;
};

/// Parses config text. Unknown sections or keys are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig parse_run_config_file(const std::string& path);

/// Canonical serialization; parsing it back yields an equivalent config.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace crs
