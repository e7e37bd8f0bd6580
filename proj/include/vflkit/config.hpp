#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflkit/assessment.hpp"
#include "vflkit/dataset.hpp"
#include "vflkit/fuzzer.hpp"
#include "vflkit/protocol.hpp"
#include "vflkit/synthesis.hpp"

namespace vflkit {

/// Malformed or schema-violating configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string kind = "credit";  // credit, vehicle, mnist, csv, idx
  std::string path;             // csv file or idx images; empty picks the bundled location
  std::string labels_path;      // idx labels
  std::string label_column;    // empty: "default" for credit, "class" otherwise
  std::string partition = "ratio";  // ratio, columns, counts
  double ratio = 1.0;
  int participants = 2;
  std::vector<int> counts;
  std::optional<bool> normalize;  // default: true for tabular data, false for images
  double test_fraction = 0.2;
  int max_rows = 0;  // 0 keeps every row
};

struct ArchConfig {
  int local_hidden = 128;
  int local_out = 64;
  int top_hidden = 64;
};

struct SynthesisRunConfig {
  SynthesisConfig synth;
  double bound_multiplier = 1.0;
  int samples = 200;
  int tiny_size = 20;
  std::string target_policy = "majority";
};

struct FuzzRunConfig {
  CampaignConfig campaign;
  int seeds = 500;
  std::string corpus;  // path to a JSON array of inputs, or "sample:N"; empty uses `seeds`
};

struct VarianceRunConfig {
  std::string protocol = "heterolr";
  std::vector<double> weights = {1.0};
  std::vector<std::vector<double>> means = {{0.0}};
  std::vector<std::vector<std::vector<double>>> covariances = {{{1.0}}};
  std::vector<double> theta = {1.0};
  double offset = 0.0;
  int mc_samples = 1000000;
  std::string splitnn_mode = "exact";
};

struct SvdRunConfig {
  int h = 1000;
  std::vector<int> ks = {1, 2, 5, 10, 20};
  int max_rounds = 50;
  int target = -1;  // -1 picks the first label that is not the input's majority
  int attacker_row = 0;
};

struct SweepRunConfig {
  std::string kind = "ratio";  // ratio, participants
  std::vector<double> ratios = {0.40, 0.65, 1.00, 1.33, 1.80, 2.11};
  std::vector<int> counts = {2, 3, 5};
  int synth_samples = 0;
  int fuzz_seeds = 0;
};

struct RunConfig {
  DatasetConfig dataset;
  ProtocolKind protocol = ProtocolKind::heterolr;
  ArchConfig arch;
  TrainConfig train;
  SynthesisRunConfig synthesis;
  FuzzRunConfig fuzz;
  VarianceRunConfig variance;
  SvdRunConfig svd;
  SweepRunConfig sweep;
  std::string output_dir = "out";
  std::string checkpoint;  // empty means output_dir/checkpoint.json
  uint64_t seed = 1;
  int workers = 1;

  std::string checkpoint_path() const;
  nlohmann::json to_json() const;
};

/// Parses and validates; unknown keys raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
/// VFLKIT_SEED, when set, replaces the config seed.
void apply_seed_env(RunConfig& cfg);

/// Loaded, split and partitioned data described by a DatasetConfig.
struct PreparedData {
  Dataset train;
  Dataset test;
  PartitionSpec spec;
  Views train_views;
  Views test_views;
  bool surrogate = false;
};

PreparedData prepare_data(const DatasetConfig& cfg, uint64_t seed);

/// Trains the configured protocol on the prepared training views.
TrainResult train_from_config(const RunConfig& cfg, const PreparedData& data);

/// "sample:N" draws N rows of the attacker's test view; anything else is a path to a JSON array of inputs.
std::vector<Vector> resolve_corpus(const std::string& spec, const Matrix& attacker_test_view, uint64_t seed);

}  // namespace vflkit
