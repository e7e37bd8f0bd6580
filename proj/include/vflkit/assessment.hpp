#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflkit/dataset.hpp"
#include "vflkit/fuzzer.hpp"
#include "vflkit/protocol.hpp"
#include "vflkit/synthesis.hpp"

namespace vflkit {

/// Runs body(i) for i in [0, n) on `workers` threads; results are written by index so order is fixed.
void parallel_for(int n, int workers, const std::function<void(int)>& body);

/// Fraction of attacker rows whose majority label over the peers reaches `threshold`.
double dominating_rate(const FixedPeers& peers, const Matrix& attacker_rows, double threshold, int workers = 1);
double dominating_rate(const VFLSystem& system, const Views& test_views, double threshold, size_t attacker = 0,
                       int workers = 1);

enum class TargetPolicy { majority, fixed };

struct SuccessReport {
  double rate = 0.0;
  std::vector<AdiCandidate> candidates;
};

/// Fraction of attacker rows for which synthesis reaches `cfg.threshold`. With the majority policy each
/// row's target is its majority label over the test peers; with fixed, cfg.target.
SuccessReport success_rate(const AdiSynthesizer& synth, const Matrix& attacker_rows, const SynthesisConfig& cfg,
                           TargetPolicy policy = TargetPolicy::majority, int workers = 1);

enum class AttributionMode { gradient_times_input, gradient };

struct RewardShares {
  std::vector<double> shares;
  bool degenerate = false;  // all saliencies were zero; shares are uniform
};

/// Per-participant saliency L1 norms summed over rows, normalized to sum to one.
RewardShares reward_shares(const VFLSystem& system, const Views& inputs,
                           AttributionMode mode = AttributionMode::gradient_times_input);

struct PerturbationMatrix {
  Matrix columns;                 // d_A x h, unit-norm columns
  Matrix raw;                     // d_A x h, unnormalized perturbations
  std::vector<int> dropped;       // benign rows whose perturbation was zero
  std::vector<int> rounds;
};

/// Column i is one synthesis pass against benign row i alone, stopped once that pair's target
/// probability reaches cfg.threshold (or after cfg.max_rounds rounds).
PerturbationMatrix build_perturbation_matrix(const VFLSystem& system, const Views& benign_rows, const Vector& x,
                                             const SynthesisConfig& cfg, size_t attacker = 0, int workers = 1);

Vector singular_spectrum(const Matrix& n);
/// h columns drawn uniformly from the unit sphere in R^d.
Matrix random_unit_columns(int d, int h, uint64_t seed);

/// Projects the mean raw perturbation onto the top-k left singular vectors of the normalized matrix,
/// applies it to x and returns the attack accuracy toward `target`.
double reconstruct_and_rate(const PerturbationMatrix& n, int k, const Vector& x, const FixedPeers& test_peers,
                            int target);

class ExperimentReport {
 public:
  ExperimentReport(std::string kind, nlohmann::json config, uint64_t seed);

  void set(const std::string& row, const std::string& col, double value);
  double get(const std::string& row, const std::string& col) const;
  bool has(const std::string& row, const std::string& col) const;
  void note(std::string line) { notes_.push_back(std::move(line)); }
  void set_wallclock(double seconds) { wallclock_ = seconds; }

  const std::string& kind() const { return kind_; }
  const std::vector<std::string>& rows() const { return rows_; }
  const std::vector<std::string>& cols() const { return cols_; }
  const nlohmann::json& config() const { return config_; }
  const std::vector<std::string>& notes() const { return notes_; }
  std::string artifact_hash() const;

  nlohmann::json to_json() const;
  /// Metric table; missing cells are empty.
  std::string to_csv() const;
  /// Writes {kind}-{seed}-{timestamp}.json and .csv into dir; returns the common path stem.
  std::string write(const std::string& dir) const;

 private:
  std::string kind_;
  nlohmann::json config_;
  uint64_t seed_;
  double wallclock_ = 0.0;
  std::vector<std::string> rows_, cols_;
  std::vector<std::vector<std::optional<double>>> cells_;
  std::vector<std::string> notes_;
};

/// MNIST-style image data for the sweeps; attacker is participant 0 (leftmost image columns).
struct SweepSetup {
  Dataset train;
  Dataset test;
  int width = 28;
  int height = 28;
  TrainConfig train_cfg;
  SynthesisConfig synth;
  int synth_samples = 0;  // 0 skips the success-rate columns
  int tiny_size = 20;
  double threshold = 0.95;
  std::optional<CampaignConfig> fuzz;
  int fuzz_seeds = 0;
  std::string model_cache_dir;  // empty disables checkpoint reuse
  uint64_t seed = 1;
  int workers = 1;

  nlohmann::json snapshot() const;
};

ExperimentReport partition_ratio_sweep(const SweepSetup& setup, const std::vector<double>& ratios);
ExperimentReport participants_sweep(const SweepSetup& setup, const std::vector<int>& counts);

/// Trains (or loads from cache_dir/name.json) a SplitNN over the given pixel partition.
VFLSystem train_or_load_splitnn(const Views& train_views, const std::vector<int>& labels, int num_classes,
                                const TrainConfig& cfg, const PartitionSpec& spec, const std::string& cache_dir,
                                const std::string& name);

}  // namespace vflkit
