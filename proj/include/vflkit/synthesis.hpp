#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflkit/protocol.hpp"

namespace vflkit {

enum class MutationStrategy { random, bounded };
enum class GradientMode { whitebox, blackbox };

std::string to_string(MutationStrategy s);
std::string to_string(GradientMode m);
MutationStrategy mutation_strategy_from_string(const std::string& s);
GradientMode gradient_mode_from_string(const std::string& s);

struct SynthesisConfig {
  MutationStrategy strategy = MutationStrategy::random;
  GradientMode mode = GradientMode::whitebox;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  double momentum = 0.9;
  Vector bound;             // per-feature mutation bound, bounded strategy only
  int max_rounds = 400;
  double threshold = 0.95;  // dominating threshold as a fraction in (0, 1]
  int target = 0;
  double inner_lr = 0.0;    // 0 picks 0.05 (random) or 0.01 (bounded)
  int inner_steps = 10;
  double fdm_step = 1e-3;
  uint64_t seed = 0;        // recorded for provenance

  double effective_inner_lr() const;
  void validate(int attacker_dim, int num_classes) const;
};

struct AdiCandidate {
  Vector base;
  Vector perturbation;
  int target = 0;
  double attack_accuracy = 0.0;
  int rounds = 0;
  std::string strategy;
  std::string mode;
  uint64_t seed = 0;

  Vector input() const { return base + perturbation; }
};

nlohmann::json candidate_to_json(const AdiCandidate& c);
std::string to_jsonl(const std::vector<AdiCandidate>& candidates);

/// Variance across output components; the scalar itself for a single output.
double output_spread(const Vector& output);
Vector output_spread_grad(const Vector& output);

/// L1 norm of d spread / d (benign raw inputs), by backpropagation through the whole system.
double saliency_est(const VFLSystem& system, const Views& row, size_t attacker = 0);

struct FdmSaliency {
  double value = 0.0;
  Vector per_dim;      // forward differences, benign participants in order
  int inferences = 0;  // joint inferences used
};

/// Forward-difference estimate of the same quantity.
FdmSaliency saliency_est_fdm(const VFLSystem& system, const Views& row, double delta, size_t attacker = 0);

/// Fraction of peer rows whose joint prediction is `target`.
double attack_accuracy(const Vector& x_attacker, const VFLSystem& system, int target, const Views& test_views,
                       size_t attacker = 0);
double attack_accuracy(const Vector& x_attacker, const FixedPeers& peers, int target);

/// Population variance of each training feature times `multiplier`, floored at 1e-6.
Vector default_bound(const Matrix& train_view, double multiplier = 1.0);

/// Gradient-based ADI synthesis against a fixed tiny dataset S and test view.
class AdiSynthesizer {
 public:
  /// `tiny` and `test` hold one view per participant; the attacker's entries are ignored.
  AdiSynthesizer(const VFLSystem& system, const Views& tiny, const Views& test, size_t attacker = 0);
  AdiSynthesizer(const VFLSystem& system, const Views& tiny, FixedPeers test_peers, size_t attacker = 0);

  AdiCandidate generate(const Vector& x, const SynthesisConfig& cfg) const;

  /// Rounds of the update loop; `done` is consulted after every pass over S.
  template <typename Done>
  Vector run(const Vector& x, const SynthesisConfig& cfg, int& rounds, Done done) const;

  double saliency(const Vector& x, size_t s, GradientMode mode, double fdm_step) const;
  /// Gradient of alpha * saliency + beta * loss at x for tiny-set row s.
  Vector objective_grad(const Vector& x, size_t s, int target, double alpha, double beta, GradientMode mode,
                        double fdm_step) const;

  size_t tiny_size() const { return static_cast<size_t>(tiny_peers_.rows()); }
  const FixedPeers& test_peers() const { return test_peers_; }
  const FixedPeers& tiny_peers() const { return tiny_peers_; }
  int blackbox_inferences_per_row() const { return benign_dim_ + 1; }

 private:
  void prepare(const Views& tiny);
  void ensure_blackbox(double fdm_step) const;

  const VFLSystem* system_;
  size_t attacker_;
  FixedPeers tiny_peers_;
  FixedPeers test_peers_;
  Views tiny_;
  int benign_dim_ = 0;
  // Jacobians of each benign local model at each tiny row: jac_[s][p] is out_p x d_p.
  std::vector<std::vector<Matrix>> jac_;
  // Blackbox: per tiny row, coordinator inputs for the row and its d_B unit perturbations.
  mutable std::vector<Matrix> fdm_base_;
  mutable double fdm_step_ = 0.0;
};

/// Free-function form; builds a synthesizer for a single call.
AdiCandidate adi_generate(const Vector& x, const VFLSystem& system, const SynthesisConfig& cfg, const Views& tiny,
                          const Views& test, size_t attacker = 0);

template <typename Done>
Vector AdiSynthesizer::run(const Vector& x, const SynthesisConfig& cfg, int& rounds, Done done) const {
  int d = static_cast<int>(x.size());
  cfg.validate(d, system_->num_classes);
  bool bounded = cfg.strategy == MutationStrategy::bounded;
  double lr = cfg.effective_inner_lr();
  Vector v = Vector::Zero(d);
  Vector prev = Vector::Zero(d);
  auto project = [&](const Vector& step) -> Vector {
    if (!bounded) return step;
    return (v + step).cwiseMax(-cfg.bound).cwiseMin(cfg.bound) - v;
  };
  int t = 1;
  rounds = 0;
  if (done(v) || cfg.max_rounds <= 0) return v;
  size_t n = tiny_size();
  while (t <= cfg.max_rounds) {
    for (size_t s = 0; s < n && t <= cfg.max_rounds; ++s, ++t) {
      Vector delta = Vector::Zero(d);
      for (int k = 0; k < cfg.inner_steps; ++k) {
        Vector g = objective_grad(x + v + delta, s, cfg.target, cfg.alpha, cfg.beta, cfg.mode, cfg.fdm_step);
        if (bounded && cfg.gamma > 0) {
          double norm = delta.norm();
          if (norm > 0) g += cfg.gamma * delta / norm;
        }
        delta = project(delta - lr * g);
      }
      delta = project(cfg.momentum * prev + delta);
      v += delta;
      prev = delta;
      rounds = t;
      if (bounded && ((v.array().abs() - cfg.bound.array()) > 1e-12).any())
        throw std::logic_error("bounded mutation escaped its bound");
    }
    if (done(v)) break;
  }
  return v;
}

}  // namespace vflkit
