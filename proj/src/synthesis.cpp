#include "vflkit/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vflkit {

std::string to_string(MutationStrategy s) { return s == MutationStrategy::random ? "random" : "bounded"; }
std::string to_string(GradientMode m) { return m == GradientMode::whitebox ? "whitebox" : "blackbox"; }

MutationStrategy mutation_strategy_from_string(const std::string& s) {
  if (s == "random") return MutationStrategy::random;
  if (s == "bounded") return MutationStrategy::bounded;
  throw std::invalid_argument("unknown mutation strategy: " + s);
}

GradientMode gradient_mode_from_string(const std::string& s) {
  if (s == "whitebox") return GradientMode::whitebox;
  if (s == "blackbox") return GradientMode::blackbox;
  throw std::invalid_argument("unknown gradient mode: " + s);
}

double SynthesisConfig::effective_inner_lr() const {
  if (inner_lr > 0) return inner_lr;
  return strategy == MutationStrategy::random ? 0.05 : 0.01;
}

void SynthesisConfig::validate(int attacker_dim, int num_classes) const {
  if (alpha < 0 || beta < 0 || gamma < 0) throw std::invalid_argument("synthesis: weights must be non-negative");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("synthesis: momentum must be in [0, 1)");
  if (!(threshold > 0 && threshold <= 1)) throw std::invalid_argument("synthesis: threshold must be in (0, 1]");
  if (!(fdm_step > 0)) throw std::invalid_argument("synthesis: fdm step must be positive");
  if (inner_steps < 0 || inner_lr < 0) throw std::invalid_argument("synthesis: invalid inner solver settings");
  if (target < 0 || target >= num_classes) throw std::invalid_argument("synthesis: target label out of range");
  if (strategy == MutationStrategy::bounded) {
    if (bound.size() != attacker_dim) throw std::invalid_argument("synthesis: bound length != attacker feature count");
    if ((bound.array() <= 0).any()) throw std::invalid_argument("synthesis: bound must be positive");
  }
}

nlohmann::json candidate_to_json(const AdiCandidate& c) {
  return {{"base", std::vector<double>(c.base.data(), c.base.data() + c.base.size())},
          {"V", std::vector<double>(c.perturbation.data(), c.perturbation.data() + c.perturbation.size())},
          {"target", c.target},
          {"r", c.attack_accuracy},
          {"strategy", c.strategy},
          {"mode", c.mode},
          {"rounds", c.rounds},
          {"seed", c.seed}};
}

std::string to_jsonl(const std::vector<AdiCandidate>& candidates) {
  std::string out;
  for (const auto& c : candidates) out += candidate_to_json(c).dump() + "\n";
  return out;
}

double output_spread(const Vector& output) {
  if (output.size() == 0) throw std::invalid_argument("output_spread: empty output");
  if (output.size() == 1) return output[0];
  return (output.array() - output.mean()).square().mean();
}

Vector output_spread_grad(const Vector& output) {
  if (output.size() == 1) return Vector::Ones(1);
  return (2.0 / output.size()) * (output.array() - output.mean()).matrix();
}

namespace {

Matrix spread_grad_rows(const Matrix& out) {
  Matrix g(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) g.row(i) = output_spread_grad(out.row(i).transpose()).transpose();
  return g;
}

double spread_of_row(const Matrix& out, Eigen::Index i) { return output_spread(out.row(i).transpose()); }

// Jacobian (out x in) of a local model at one input row.
Matrix local_jacobian(const LocalModel& model, const RowVector& x) {
  int out = model.output_dim();
  Matrix rep = x.replicate(out, 1);
  ForwardTrace tr;
  forward(model, rep, tr);
  return backward(model, tr, Matrix::Identity(out, out), false).input_grad;
}

void check_row_views(const VFLSystem& system, const Views& row, size_t attacker) {
  if (row.size() != system.size() || attacker >= system.size())
    throw std::invalid_argument("saliency: need one view per participant");
  for (size_t p = 0; p < row.size(); ++p)
    if (row[p].rows() != 1 || row[p].cols() != system.participants[p].model.input_dim())
      throw std::invalid_argument("saliency: each view must be a single row of the participant's width");
}

}  // namespace

double saliency_est(const VFLSystem& system, const Views& row, size_t attacker) {
  check_row_views(system, row, attacker);
  JointPass pass = joint_forward(system, row);
  JointGrads g = joint_backward(system, pass, spread_grad_rows(pass.output), false, false, true);
  double total = 0;
  for (size_t p = 0; p < system.size(); ++p)
    if (p != attacker) total += g.input_grads[p].cwiseAbs().sum();
  return total;
}

FdmSaliency saliency_est_fdm(const VFLSystem& system, const Views& row, double delta, size_t attacker) {
  if (!(delta > 0)) throw std::invalid_argument("saliency_est_fdm: delta must be positive");
  check_row_views(system, row, attacker);
  FdmSaliency out;
  double s0 = spread_of_row(joint_inference(system, row), 0);
  out.inferences = 1;
  std::vector<double> diffs;
  for (size_t p = 0; p < system.size(); ++p) {
    if (p == attacker) continue;
    for (Eigen::Index k = 0; k < row[p].cols(); ++k) {
      Views shifted = row;
      shifted[p](0, k) += delta;
      double sk = spread_of_row(joint_inference(system, shifted), 0);
      ++out.inferences;
      diffs.push_back((sk - s0) / delta);
    }
  }
  out.per_dim = Eigen::Map<Vector>(diffs.data(), diffs.size());
  out.value = out.per_dim.cwiseAbs().sum();
  return out;
}

double attack_accuracy(const Vector& x, const FixedPeers& peers, int target) {
  return peers.fraction_with_label(x, target);
}

double attack_accuracy(const Vector& x, const VFLSystem& system, int target, const Views& test_views, size_t attacker) {
  return FixedPeers(system, test_views, attacker).fraction_with_label(x, target);
}

Vector default_bound(const Matrix& train_view, double multiplier) {
  if (train_view.rows() < 2) throw std::invalid_argument("default_bound: need at least 2 rows");
  if (!(multiplier > 0)) throw std::invalid_argument("default_bound: multiplier must be positive");
  Vector mean = train_view.colwise().mean().transpose();
  Vector var = (train_view.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  return (multiplier * var).cwiseMax(1e-6);
}

AdiSynthesizer::AdiSynthesizer(const VFLSystem& system, const Views& tiny, const Views& test, size_t attacker)
    : system_(&system),
      attacker_(attacker),
      tiny_peers_(system, tiny, attacker),
      test_peers_(system, test, attacker) {
  prepare(tiny);
}

AdiSynthesizer::AdiSynthesizer(const VFLSystem& system, const Views& tiny, FixedPeers test_peers, size_t attacker)
    : system_(&system), attacker_(attacker), tiny_peers_(system, tiny, attacker), test_peers_(std::move(test_peers)) {
  prepare(tiny);
}

void AdiSynthesizer::prepare(const Views& tiny) {
  if (tiny_peers_.rows() == 0) throw std::invalid_argument("synthesis: tiny dataset is empty");
  tiny_ = tiny;
  benign_dim_ = 0;
  for (size_t p = 0; p < system_->size(); ++p)
    if (p != attacker_) benign_dim_ += system_->participants[p].model.input_dim();
  jac_.assign(tiny_size(), {});
  for (size_t s = 0; s < tiny_size(); ++s) {
    jac_[s].resize(system_->size());
    for (size_t p = 0; p < system_->size(); ++p)
      if (p != attacker_) jac_[s][p] = local_jacobian(system_->participants[p].model, tiny[p].row(s));
  }
}

void AdiSynthesizer::ensure_blackbox(double fdm_step) const {
  if (!fdm_base_.empty() && fdm_step_ == fdm_step) return;
  // Offline step: B's local outputs for every S row and every unit perturbation of it.
  fdm_step_ = fdm_step;
  fdm_base_.assign(tiny_size(), {});
  for (size_t s = 0; s < tiny_size(); ++s) {
    Matrix base = tiny_peers_.base().row(s).replicate(benign_dim_ + 1, 1);
    int row = 1;
    for (size_t p = 0; p < system_->size(); ++p) {
      if (p == attacker_) continue;
      int d = system_->participants[p].model.input_dim();
      Matrix shifted = tiny_[p].row(s).replicate(d, 1);
      shifted.diagonal().array() += fdm_step;
      Matrix l0 = system_->local_output(p, tiny_[p].row(s));
      Matrix lk = system_->local_output(p, shifted);
      Matrix block = base.middleRows(row, d);
      // Swap participant p's contribution: remove the unperturbed output, add the perturbed one.
      Matrix neg = -l0;
      system_->place_local(block, neg, p);
      if (system_->coordinator.kind == ProtocolKind::heterolr) block += lk;
      else system_->place_local(block, lk, p);
      base.middleRows(row, d) = block;
      row += d;
    }
    fdm_base_[s] = std::move(base);
  }
}

double AdiSynthesizer::saliency(const Vector& x, size_t s, GradientMode mode, double fdm_step) const {
  Matrix l = system_->local_output(attacker_, x.transpose());
  if (mode == GradientMode::blackbox) {
    ensure_blackbox(fdm_step);
    Matrix agg = fdm_base_[s];
    system_->place_local(agg, l, attacker_);
    Matrix out = forward(system_->coordinator.top, agg);
    double s0 = spread_of_row(out, 0), total = 0;
    for (Eigen::Index k = 1; k < out.rows(); ++k) total += std::abs(spread_of_row(out, k) - s0) / fdm_step;
    return total;
  }
  Matrix agg = tiny_peers_.base().row(s);
  system_->place_local(agg, l, attacker_);
  ForwardTrace tt;
  Matrix out = forward(system_->coordinator.top, agg, tt);
  Matrix u = backward(system_->coordinator.top, tt, spread_grad_rows(out), false).input_grad;
  double total = 0;
  for (size_t p = 0; p < system_->size(); ++p)
    if (p != attacker_) total += (system_->local_grad(u, p) * jac_[s][p]).cwiseAbs().sum();
  return total;
}

Vector AdiSynthesizer::objective_grad(const Vector& x, size_t s, int target, double alpha, double beta,
                                      GradientMode mode, double fdm_step) const {
  const LocalModel& top = system_->coordinator.top;
  const LocalModel& own = system_->participants[attacker_].model;
  ForwardTrace lt;
  Matrix l = forward(own, x.transpose(), lt);
  Matrix agg_grad = Matrix::Zero(1, system_->aggregate_dim());

  // Loss term, through the coordinator's returned gradient.
  Matrix agg0 = tiny_peers_.base().row(s);
  system_->place_local(agg0, l, attacker_);
  ForwardTrace t0;
  Matrix out0 = forward(top, agg0, t0);
  if (beta > 0) {
    Matrix g = loss_preactivation_grad(out0, {target});
    agg_grad += beta * backward(top, t0, g, false, top.num_layers() - 1).input_grad;
  }

  if (alpha > 0 && mode == GradientMode::whitebox) {
    // d/dx ||J_B^T u(x)||_1 = d/dx (J_B s)^T u(x), with s the sign pattern, as a directional difference.
    Matrix u = backward(top, t0, spread_grad_rows(out0), false).input_grad;
    Matrix w = Matrix::Zero(1, system_->aggregate_dim());
    for (size_t p = 0; p < system_->size(); ++p) {
      if (p == attacker_) continue;
      RowVector gp = system_->local_grad(u, p) * jac_[s][p];
      RowVector sign = gp.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
      Matrix wp = (jac_[s][p] * sign.transpose()).transpose();
      system_->place_local(w, wp, p);
    }
    double wn = w.norm();
    if (wn > 0) {
      double eps = 1e-5 * std::max(1.0, agg0.cwiseAbs().maxCoeff()) / wn;
      Matrix agg2(2, agg0.cols());
      agg2.row(0) = agg0 + eps * w;
      agg2.row(1) = agg0 - eps * w;
      ForwardTrace t2;
      Matrix out2 = forward(top, agg2, t2);
      Matrix g2 = spread_grad_rows(out2);
      g2.row(0) *= 1.0 / (2 * eps);
      g2.row(1) *= -1.0 / (2 * eps);
      Matrix back = backward(top, t2, g2, false).input_grad;
      agg_grad += alpha * back.colwise().sum();
    }
  } else if (alpha > 0) {
    ensure_blackbox(fdm_step);
    Matrix agg = fdm_base_[s];
    system_->place_local(agg, l, attacker_);
    ForwardTrace tb;
    Matrix out = forward(top, agg, tb);
    Matrix g = spread_grad_rows(out);
    double s0 = spread_of_row(out, 0), sign_sum = 0;
    for (Eigen::Index k = 1; k < out.rows(); ++k) {
      double d = spread_of_row(out, k) - s0;
      double sign = (d > 0) - (d < 0);
      sign_sum += sign;
      g.row(k) *= sign / fdm_step;
    }
    g.row(0) *= -sign_sum / fdm_step;
    Matrix back = backward(top, tb, g, false).input_grad;
    agg_grad += alpha * back.colwise().sum();
  }

  Matrix gl = system_->local_grad(agg_grad, attacker_);
  return backward(own, lt, gl, false).input_grad.row(0).transpose();
}

AdiCandidate AdiSynthesizer::generate(const Vector& x, const SynthesisConfig& cfg) const {
  AdiCandidate c;
  c.base = x;
  c.target = cfg.target;
  c.strategy = to_string(cfg.strategy);
  c.mode = to_string(cfg.mode);
  c.seed = cfg.seed;
  double r = 0;
  c.perturbation = run(x, cfg, c.rounds, [&](const Vector& v) {
    r = test_peers_.fraction_with_label(x + v, cfg.target);
    return r >= cfg.threshold;
  });
  c.attack_accuracy = r;
  return c;
}

AdiCandidate adi_generate(const Vector& x, const VFLSystem& system, const SynthesisConfig& cfg, const Views& tiny,
                          const Views& test, size_t attacker) {
  return AdiSynthesizer(system, tiny, test, attacker).generate(x, cfg);
}

}  // namespace vflkit
