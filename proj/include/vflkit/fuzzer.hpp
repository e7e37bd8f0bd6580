#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflkit/protocol.hpp"
#include "vflkit/synthesis.hpp"

namespace vflkit {

struct FuzzSeed {
  Vector input;
  int target = 0;
  double best_score = 1.0;  // lowest mean benign saliency score seen so far
  int lineage = 0;
  int id = 0;
};

/// FIFO; pop order is insertion order.
class FuzzQueue {
 public:
  void push(FuzzSeed seed) { q_.push_back(std::move(seed)); }
  FuzzSeed pop();
  bool empty() const { return q_.empty(); }
  size_t size() const { return q_.size(); }

 private:
  std::deque<FuzzSeed> q_;
};

struct CampaignConfig {
  int max_iter = 5000;
  int energy = 20;
  double mask_alpha = 0.2;
  double stable_fraction = 1.0;
  int noise_trials = 8;       // beta of the cooperation flow
  int inner_repeats = 5;      // gamma
  int outer_repeats = 0;      // Gamma; 0 means max_iter
  double budget_seconds = 0;  // 0 disables the wallclock budget
  std::vector<double> thresholds = {0.95, 0.99};
  double noise_scale = 0.1;   // noise std = noise_scale * sqrt(bound_j)
  uint64_t seed = 1;

  void validate() const;
};

/// Per-participant calibration constants: 99th percentile of saliency L1 norms over training rows.
struct SaliencyCalibration {
  std::vector<double> scale;
  double percentile = 0.99;
};

SaliencyCalibration calibrate_saliency(const VFLSystem& system, const Views& train_views, double percentile = 0.99);

/// L1 norm of d spread / d x_p for one joint row.
double saliency_l1(const VFLSystem& system, const Views& row, size_t participant);
/// saliency_l1 over the calibration constant, clamped to [0, 1].
double saliency_score(const VFLSystem& system, const Views& row, size_t participant,
                      const std::optional<SaliencyCalibration>& calibration);

/// |d logit_label / d x_p| scaled by its max; all zero when the gradient vanishes.
Vector compute_mask(const VFLSystem& system, const Views& row, size_t participant, int label);
/// Signed gradient of the label's logit with respect to x_p.
Vector logit_gradient(const VFLSystem& system, const Views& row, size_t participant, int label);

bool is_adi(const Vector& x, const FixedPeers& tiny, int target, double stable_fraction = 1.0);

/// Tiny dataset S held by the benign participants, plus the bound context of the attacker.
class FuzzContext {
 public:
  FuzzContext(const VFLSystem& system, const Views& tiny, const Views& test, SaliencyCalibration calibration,
              Vector bound, size_t attacker = 0);

  const VFLSystem& system() const { return *system_; }
  const FixedPeers& tiny_peers() const { return tiny_peers_; }
  const FixedPeers& test_peers() const { return test_peers_; }
  const Vector& bound() const { return bound_; }
  size_t attacker() const { return attacker_; }
  size_t tiny_size() const { return static_cast<size_t>(tiny_peers_.rows()); }

  void set_value_range(Vector lower, Vector upper);

  /// Mean over S and benign participants of their saliency scores for attacker input x.
  double benign_score(const Vector& x) const;
  /// Attacker's own saliency score against tiny row s.
  double attacker_score(const Vector& x, size_t s) const;
  double benign_score_at(const Vector& x, size_t s) const;
  Views joint_row(const Vector& x, size_t s) const;
  int majority_target(const Vector& x) const;
  /// Mean over S of the masks of x under the predicted label.
  Vector mean_mask(const Vector& x) const;
  Vector clamp(const Vector& x, const Vector& origin) const;
  bool within_bound(const Vector& x, const Vector& origin) const;

 private:
  const VFLSystem* system_;
  size_t attacker_;
  Views tiny_;
  FixedPeers tiny_peers_;
  FixedPeers test_peers_;
  SaliencyCalibration calibration_;
  Vector bound_;
  std::optional<Vector> lower_, upper_;
};

/// Noise, then one pass over S adding or weakening mask directions, then clamp around the lineage origin.
Vector mutate_saliency_aware(const Vector& input, int target, const Vector& origin_mask, const Vector& origin,
                             const FuzzContext& ctx, double alpha, double noise_scale, std::mt19937_64& rng);

/// True iff the new mean benign score is strictly below the recorded best.
bool reduce_saliency(double old_score, const Vector& new_input, const FuzzContext& ctx, double* new_score = nullptr);

struct FoundAdi {
  AdiCandidate candidate;
  int lineage = 0;
  int iteration = 0;
  std::vector<bool> passes;  // one per configured threshold
};

struct CampaignLogEntry {
  int iteration = 0;
  int seed_id = 0;
  int lineage = 0;
  double score = 0.0;
  std::string outcome;  // adi, queued:<count>, exhausted
};

struct CampaignResult {
  std::vector<FoundAdi> adis;
  std::vector<CampaignLogEntry> log;
  int iterations = 0;
  long mutations = 0;
  bool budget_exhausted = false;
  double seconds = 0.0;

  int count_at(double threshold) const;
  std::string log_jsonl() const;
  std::string adis_jsonl() const;
};

/// Saliency-guided greybox campaign over a corpus of attacker inputs.
CampaignResult fuzz_campaign(const std::vector<Vector>& corpus, const FuzzContext& ctx, const CampaignConfig& cfg);

/// Per-iteration numbers of the cooperation flow, kept for offline recomputation.
struct CooperationRecord {
  int seed_index = 0;
  double orig_acc = 0.0;
  double masked_acc = 0.0;
  double score_orig_a = 0.0;
  double score_masked_a = 0.0;
  double score_orig_b = 0.0;
  double score_masked_b = 0.0;
  double ratio_a = 0.0;
  double ratio_b = 0.0;
  int index_b = 0;
  bool updated = false;
  bool found = false;
};

struct CooperationResult {
  std::vector<ProtocolMessage> messages;
  std::vector<CooperationRecord> records;
  std::vector<Vector> adis;
};

/// Message-level simulation of the participant cooperation flow (steps 1 to 12). Aborts with
/// std::runtime_error if the privacy audit fails.
CooperationResult cooperation_trace(const std::vector<Vector>& corpus, const FuzzContext& ctx, const CampaignConfig& cfg,
                                    int outer_iterations);

}  // namespace vflkit
