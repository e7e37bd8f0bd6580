#include "vflkit/fuzzer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

namespace vflkit {

FuzzSeed FuzzQueue::pop() {
  if (q_.empty()) throw std::out_of_range("FuzzQueue::pop on empty queue");
  FuzzSeed s = std::move(q_.front());
  q_.pop_front();
  return s;
}

void CampaignConfig::validate() const {
  if (max_iter < 1 || energy < 1 || noise_trials < 1 || inner_repeats < 1 || outer_repeats < 0)
    throw std::invalid_argument("campaign: loop counts must be >= 1");
  if (!(mask_alpha >= 0 && mask_alpha <= 1)) throw std::invalid_argument("campaign: mask alpha must be in [0, 1]");
  if (!(stable_fraction > 0 && stable_fraction <= 1))
    throw std::invalid_argument("campaign: stable fraction must be in (0, 1]");
  if (budget_seconds < 0 || noise_scale < 0) throw std::invalid_argument("campaign: negative budget or noise scale");
  if (thresholds.empty()) throw std::invalid_argument("campaign: need at least one dominating threshold");
  for (double t : thresholds)
    if (!(t > 0 && t <= 1)) throw std::invalid_argument("campaign: thresholds must be in (0, 1]");
}

namespace {

Matrix spread_grad_rows(const Matrix& out) {
  Matrix g(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) g.row(i) = output_spread_grad(out.row(i).transpose()).transpose();
  return g;
}

// Per-row L1 norms of every participant's saliency gradient: n x m.
Matrix saliency_l1_rows(const VFLSystem& system, const Views& views) {
  JointPass pass = joint_forward(system, views);
  JointGrads g = joint_backward(system, pass, spread_grad_rows(pass.output), false, false, true);
  Matrix out(pass.output.rows(), static_cast<Eigen::Index>(system.size()));
  for (size_t p = 0; p < system.size(); ++p) out.col(p) = g.input_grads[p].cwiseAbs().rowwise().sum();
  return out;
}

double scaled_score(double l1, double scale) {
  if (!(scale > 0)) return l1 > 0 ? 1.0 : 0.0;
  return std::clamp(l1 / scale, 0.0, 1.0);
}

// Gradient seeded at the final activation's input selecting the logit of `label`.
Matrix logit_seed(const VFLSystem& system, Eigen::Index rows, int label) {
  int out = system.output_dim();
  Matrix seed = Matrix::Zero(rows, out);
  if (out == 1)
    seed.col(0).setConstant(label == 1 ? 1.0 : -1.0);
  else
    seed.col(label).setOnes();
  return seed;
}

struct PredGrad {
  int label = 0;
  Vector grad;
};

// Joint prediction of one row and the logit gradient of that prediction w.r.t. participant p.
PredGrad predicted_logit_gradient(const VFLSystem& system, const Views& row, size_t p, std::optional<int> label) {
  JointPass pass = joint_forward(system, row);
  PredGrad out;
  out.label = label ? *label : predict_labels(pass.output)[0];
  JointGrads g = joint_backward(system, pass, logit_seed(system, 1, out.label), true, false, true);
  out.grad = g.input_grads[p].row(0).transpose();
  return out;
}

Vector normalized_abs(const Vector& g) {
  double mx = g.cwiseAbs().maxCoeff();
  if (!(mx > 0)) return Vector::Zero(g.size());
  return g.cwiseAbs() / mx;
}

Vector sign_of(const Vector& g) {
  return g.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of empty set");
  size_t k = static_cast<size_t>(std::ceil(q * static_cast<double>(v.size())));
  k = std::clamp<size_t>(k, 1, v.size()) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

SaliencyCalibration calibrate_saliency(const VFLSystem& system, const Views& train_views, double q) {
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("calibrate_saliency: percentile must be in (0, 1]");
  Matrix l1 = saliency_l1_rows(system, train_views);
  SaliencyCalibration cal;
  cal.percentile = q;
  for (Eigen::Index p = 0; p < l1.cols(); ++p) {
    std::vector<double> col(static_cast<size_t>(l1.rows()));
    for (Eigen::Index i = 0; i < l1.rows(); ++i) col[static_cast<size_t>(i)] = l1(i, p);
    cal.scale.push_back(percentile(std::move(col), q));
  }
  return cal;
}

double saliency_l1(const VFLSystem& system, const Views& row, size_t participant) {
  if (participant >= system.size()) throw std::invalid_argument("saliency_l1: participant out of range");
  return saliency_l1_rows(system, row)(0, static_cast<Eigen::Index>(participant));
}

double saliency_score(const VFLSystem& system, const Views& row, size_t participant,
                      const std::optional<SaliencyCalibration>& calibration) {
  if (!calibration || calibration->scale.size() != system.size())
    throw std::logic_error("saliency_score: no calibration for this system; run calibrate_saliency on training data first");
  return scaled_score(saliency_l1(system, row, participant), calibration->scale[participant]);
}

Vector logit_gradient(const VFLSystem& system, const Views& row, size_t participant, int label) {
  if (participant >= system.size()) throw std::invalid_argument("logit_gradient: participant out of range");
  return predicted_logit_gradient(system, row, participant, label).grad;
}

Vector compute_mask(const VFLSystem& system, const Views& row, size_t participant, int label) {
  return normalized_abs(logit_gradient(system, row, participant, label));
}

bool is_adi(const Vector& x, const FixedPeers& tiny, int target, double stable_fraction) {
  if (tiny.rows() == 0) throw std::invalid_argument("is_adi: empty tiny dataset");
  return tiny.fraction_with_label(x, target) >= stable_fraction - 1e-12;
}

FuzzContext::FuzzContext(const VFLSystem& system, const Views& tiny, const Views& test, SaliencyCalibration calibration,
                         Vector bound, size_t attacker)
    : system_(&system),
      attacker_(attacker),
      tiny_(tiny),
      tiny_peers_(system, tiny, attacker),
      test_peers_(system, test, attacker),
      calibration_(std::move(calibration)),
      bound_(std::move(bound)) {
  if (tiny_peers_.rows() == 0) throw std::invalid_argument("fuzz: tiny dataset S is empty");
  if (calibration_.scale.size() != system.size()) throw std::invalid_argument("fuzz: calibration size mismatch");
  if (bound_.size() != system.participants[attacker].model.input_dim() || (bound_.array() <= 0).any())
    throw std::invalid_argument("fuzz: bound must be positive with one entry per attacker feature");
}

void FuzzContext::set_value_range(Vector lower, Vector upper) {
  if (lower.size() != bound_.size() || upper.size() != bound_.size() || (lower.array() > upper.array()).any())
    throw std::invalid_argument("fuzz: invalid value range");
  lower_ = std::move(lower);
  upper_ = std::move(upper);
}

Views FuzzContext::joint_row(const Vector& x, size_t s) const {
  Views row;
  for (size_t p = 0; p < system_->size(); ++p)
    row.push_back(p == attacker_ ? Matrix(x.transpose()) : Matrix(tiny_[p].row(static_cast<Eigen::Index>(s))));
  return row;
}

double FuzzContext::benign_score(const Vector& x) const {
  Views views = tiny_;
  views[attacker_] = x.transpose().replicate(tiny_peers_.rows(), 1);
  Matrix l1 = saliency_l1_rows(*system_, views);
  double total = 0;
  int count = 0;
  for (size_t p = 0; p < system_->size(); ++p) {
    if (p == attacker_) continue;
    for (Eigen::Index i = 0; i < l1.rows(); ++i) total += scaled_score(l1(i, p), calibration_.scale[p]);
    count += static_cast<int>(l1.rows());
  }
  return count ? total / count : 0.0;
}

double FuzzContext::benign_score_at(const Vector& x, size_t s) const {
  Matrix l1 = saliency_l1_rows(*system_, joint_row(x, s));
  double total = 0;
  int count = 0;
  for (size_t p = 0; p < system_->size(); ++p) {
    if (p == attacker_) continue;
    total += scaled_score(l1(0, p), calibration_.scale[p]);
    ++count;
  }
  return count ? total / count : 0.0;
}

double FuzzContext::attacker_score(const Vector& x, size_t s) const {
  return scaled_score(saliency_l1_rows(*system_, joint_row(x, s))(0, attacker_), calibration_.scale[attacker_]);
}

int FuzzContext::majority_target(const Vector& x) const { return tiny_peers_.majority(x).first; }

Vector FuzzContext::mean_mask(const Vector& x) const {
  Vector acc = Vector::Zero(x.size());
  for (size_t s = 0; s < tiny_size(); ++s)
    acc += normalized_abs(predicted_logit_gradient(*system_, joint_row(x, s), attacker_, std::nullopt).grad);
  return acc / static_cast<double>(tiny_size());
}

Vector FuzzContext::clamp(const Vector& x, const Vector& origin) const {
  Vector y = x.cwiseMax(origin - bound_).cwiseMin(origin + bound_);
  if (lower_) y = y.cwiseMax(*lower_).cwiseMin(*upper_);
  return y;
}

bool FuzzContext::within_bound(const Vector& x, const Vector& origin) const {
  return ((x - origin).cwiseAbs().array() <= bound_.array() + 1e-12).all();
}

Vector mutate_saliency_aware(const Vector& input, int target, const Vector& origin_mask, const Vector& origin,
                             const FuzzContext& ctx, double alpha, double noise_scale, std::mt19937_64& rng) {
  if (input.size() != origin.size() || origin_mask.size() != input.size())
    throw std::invalid_argument("mutate: input, origin and mask lengths differ");
  Vector scale = ctx.bound().cwiseSqrt();
  Vector x = input;
  if (noise_scale > 0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += noise_scale * scale[j] * normal(rng);
  }
  if (alpha > 0) {
    for (size_t s = 0; s < ctx.tiny_size(); ++s) {
      PredGrad pg = predicted_logit_gradient(ctx.system(), ctx.joint_row(x, s), ctx.attacker(), std::nullopt);
      Vector mask = normalized_abs(pg.grad);
      Vector dir = sign_of(pg.grad).cwiseProduct(scale);
      if (pg.label == target)
        x += alpha * mask.cwiseProduct(dir);
      else
        x -= alpha * (mask - origin_mask).cwiseMax(0.0).cwiseProduct(dir);
    }
  }
  return ctx.clamp(x, origin);
}

bool reduce_saliency(double old_score, const Vector& new_input, const FuzzContext& ctx, double* new_score) {
  double s = ctx.benign_score(new_input);
  if (new_score) *new_score = s;
  return s < old_score;
}

int CampaignResult::count_at(double threshold) const {
  int n = 0;
  for (const auto& a : adis)
    if (a.candidate.attack_accuracy >= threshold - 1e-12) ++n;
  return n;
}

std::string CampaignResult::log_jsonl() const {
  std::string out = nlohmann::json{{"mask_method", "gradient_magnitude"}}.dump() + "\n";
  for (const auto& e : log)
    out += nlohmann::json{{"iter", e.iteration}, {"seed_id", e.seed_id}, {"lineage", e.lineage}, {"score", e.score},
                          {"outcome", e.outcome}}
               .dump() +
           "\n";
  return out;
}

std::string CampaignResult::adis_jsonl() const {
  std::string out;
  for (const auto& a : adis) {
    nlohmann::json j = candidate_to_json(a.candidate);
    j["provenance"] = "fuzz";
    j["lineage"] = a.lineage;
    j["iteration"] = a.iteration;
    j["passes"] = a.passes;
    out += j.dump() + "\n";
  }
  return out;
}

CampaignResult fuzz_campaign(const std::vector<Vector>& corpus, const FuzzContext& ctx, const CampaignConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("fuzz_campaign: empty corpus");
  using clock = std::chrono::steady_clock;
  auto start = clock::now();
  auto expired = [&] {
    return cfg.budget_seconds > 0 && std::chrono::duration<double>(clock::now() - start).count() >= cfg.budget_seconds;
  };
  double verify_at = *std::min_element(cfg.thresholds.begin(), cfg.thresholds.end());
  std::mt19937_64 rng(cfg.seed);
  CampaignResult res;
  FuzzQueue queue;
  std::vector<Vector> origins;
  std::vector<Vector> origin_masks;
  int next_id = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const Vector& x = corpus[i];
    if (x.size() != ctx.bound().size()) throw std::invalid_argument("fuzz_campaign: corpus input has wrong length");
    require_finite(x, "fuzz corpus input");
    origins.push_back(x);
    origin_masks.push_back(ctx.mean_mask(x));
    queue.push({x, ctx.majority_target(x), ctx.benign_score(x), static_cast<int>(i), next_id++});
  }
  std::set<int> finished;
  while (res.iterations < cfg.max_iter && !queue.empty() && !res.budget_exhausted) {
    FuzzSeed seed = queue.pop();
    if (finished.count(seed.lineage)) continue;
    int iter = res.iterations++;
    const Vector& origin = origins[seed.lineage];
    Vector x = seed.input;
    int queued = 0;
    bool found = false;
    for (int e = 0; e < cfg.energy; ++e) {
      if (expired()) {
        res.budget_exhausted = true;
        break;
      }
      x = mutate_saliency_aware(x, seed.target, origin_masks[seed.lineage], origin, ctx, cfg.mask_alpha,
                                cfg.noise_scale, rng);
      ++res.mutations;
      if (is_adi(x, ctx.tiny_peers(), seed.target, cfg.stable_fraction)) {
        double r = attack_accuracy(x, ctx.test_peers(), seed.target);
        if (r >= verify_at - 1e-12) {
          FoundAdi adi;
          adi.candidate.base = origin;
          adi.candidate.perturbation = x - origin;
          adi.candidate.target = seed.target;
          adi.candidate.attack_accuracy = r;
          adi.candidate.rounds = e + 1;
          adi.candidate.strategy = "bounded";
          adi.candidate.mode = "fuzz";
          adi.candidate.seed = cfg.seed;
          adi.lineage = seed.lineage;
          adi.iteration = iter;
          for (double t : cfg.thresholds) adi.passes.push_back(r >= t - 1e-12);
          res.adis.push_back(std::move(adi));
          finished.insert(seed.lineage);
          found = true;
          break;
        }
      }
      double score = 0;
      if (reduce_saliency(seed.best_score, x, ctx, &score)) {
        if (!ctx.within_bound(x, origin)) throw std::logic_error("fuzz: queued input escaped its bound");
        seed.best_score = score;
        queue.push({x, seed.target, score, seed.lineage, next_id++});
        ++queued;
      }
    }
    res.log.push_back({iter, seed.id, seed.lineage, seed.best_score,
                       found ? "adi" : (queued ? "queued:" + std::to_string(queued) : "exhausted")});
  }
  res.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return res;
}

namespace {

struct CoordinatorView {
  Matrix output;
  Matrix spread_agg_grad;  // d spread / d coordinator input
  Matrix logit_agg_grad;   // d logit_target / d coordinator input
};

CoordinatorView coordinator_pass(const VFLSystem& system, const Matrix& agg, int target) {
  const LocalModel& top = system.coordinator.top;
  ForwardTrace tr;
  CoordinatorView v;
  v.output = forward(top, agg, tr);
  v.spread_agg_grad = backward(top, tr, spread_grad_rows(v.output), false).input_grad;
  v.logit_agg_grad = backward(top, tr, logit_seed(system, agg.rows(), target), false, top.num_layers() - 1).input_grad;
  return v;
}

size_t msg_size(const Matrix& m) { return static_cast<size_t>(m.size()); }

}  // namespace

CooperationResult cooperation_trace(const std::vector<Vector>& corpus, const FuzzContext& ctx, const CampaignConfig& cfg,
                                    int outer_iterations) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("cooperation_trace: empty corpus");
  if (outer_iterations < 1) throw std::invalid_argument("cooperation_trace: need at least one outer iteration");
  const VFLSystem& sys = ctx.system();
  size_t a = ctx.attacker();
  const std::string A = party_name(a);
  const LocalModel& model_a = sys.participants[a].model;
  double threshold = *std::min_element(cfg.thresholds.begin(), cfg.thresholds.end());
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  CooperationResult res;
  auto emit = [&](const std::string& step, const std::string& from, const std::string& to, PayloadKind kind,
                  size_t size, int owner) { res.messages.push_back({step, from, to, kind, size, owner}); };

  // Step 1: benign parties send local results on S; the attacker fixes Q and the index list.
  const Matrix& base = ctx.tiny_peers().base();
  size_t n_s = ctx.tiny_size();
  std::vector<size_t> benign;
  for (size_t p = 0; p < sys.size(); ++p)
    if (p != a) {
      benign.push_back(p);
      emit("1", party_name(p), kCoordinatorName, PayloadKind::local_output,
           static_cast<size_t>(sys.participants[p].model.output_dim()) * n_s, static_cast<int>(p));
    }
  std::vector<Vector> q = corpus;
  std::vector<int> targets;
  for (const auto& x : q) targets.push_back(ctx.majority_target(x));
  std::vector<size_t> active(q.size());
  for (size_t i = 0; i < q.size(); ++i) active[i] = i;
  size_t cursor = 0;
  Vector noise_sd = cfg.noise_scale * ctx.bound().cwiseSqrt();

  auto scores_for = [&](const Matrix& agg_grad, const ForwardTrace& trace, size_t p, size_t rows) {
    Matrix g = sys.local_grad(agg_grad, p);
    if (static_cast<size_t>(g.rows()) != rows) throw std::logic_error("cooperation: gradient row mismatch");
    Matrix in = backward(sys.participants[p].model, trace, g, false).input_grad;
    return Vector(in.cwiseAbs().rowwise().sum());
  };
  auto agg_for = [&](const Matrix& local_a, size_t index_b) {
    Matrix agg = base.row(static_cast<Eigen::Index>(index_b)).replicate(local_a.rows(), 1);
    sys.place_local(agg, local_a, a);
    return agg;
  };
  auto success_over_s = [&](const Vector& x, int target) { return ctx.tiny_peers().fraction_with_label(x, target); };

  for (int outer = 0; outer < outer_iterations && !active.empty(); ++outer) {
    // Step 2: pick index_a, add noise beta times, send the noised local results.
    cursor %= active.size();
    size_t index_a = active[cursor];
    int target = targets[index_a];
    Matrix noised(cfg.noise_trials, model_a.input_dim());
    for (int k = 0; k < cfg.noise_trials; ++k) {
      Vector x = q[index_a];
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += noise_sd[j] * normal(rng);
      noised.row(k) = ctx.clamp(x, corpus[index_a]).transpose();
    }
    ForwardTrace trace_a;
    Matrix local_a = forward(model_a, noised, trace_a);
    emit("2", A, kCoordinatorName, PayloadKind::noised_local_output, msg_size(local_a), static_cast<int>(a));
    bool deleted = false;
    for (int inner = 0; inner < cfg.inner_repeats && !deleted; ++inner) {
      CooperationRecord rec;
      rec.seed_index = static_cast<int>(index_a);
      // Step 3: C picks a benign result, computes outputs and gradients for every noised row.
      rec.index_b = static_cast<int>(std::uniform_int_distribution<size_t>(0, n_s - 1)(rng));
      CoordinatorView cv = coordinator_pass(sys, agg_for(local_a, rec.index_b), target);
      emit("3", kCoordinatorName, A, PayloadKind::gradient, 2 * msg_size(sys.local_grad(cv.spread_agg_grad, a)), -1);
      for (size_t p : benign)
        emit("3", kCoordinatorName, party_name(p), PayloadKind::gradient, msg_size(sys.local_grad(cv.spread_agg_grad, p)),
             -1);
      // Step 4: A reports its highest score and its index; B reports scores for the noised rows.
      Vector l1_a = scores_for(cv.spread_agg_grad, trace_a, a, noised.rows());
      Eigen::Index index_noise = 0;
      l1_a.maxCoeff(&index_noise);
      Vector best = noised.row(index_noise).transpose();
      rec.score_orig_a = ctx.attacker_score(best, rec.index_b);
      rec.score_orig_b = ctx.benign_score_at(best, rec.index_b);
      emit("4", A, kCoordinatorName, PayloadKind::saliency_score, 2, static_cast<int>(a));
      for (size_t p : benign)
        emit("4", party_name(p), kCoordinatorName, PayloadKind::saliency_score, static_cast<size_t>(noised.rows()),
             static_cast<int>(p));
      // Step 5: attack success rate of the chosen noised row over S.
      rec.orig_acc = success_over_s(best, target);
      emit("5", kCoordinatorName, A, PayloadKind::attack_rate, 1, -1);
      // Step 6: A builds the masked input from C's target-logit gradient and sends its local result.
      ForwardTrace tb;
      forward(model_a, best.transpose(), tb);
      Matrix logit_g = sys.local_grad(cv.logit_agg_grad, a).row(index_noise);
      Vector g = backward(model_a, tb, logit_g, false).input_grad.row(0).transpose();
      Vector mask = normalized_abs(g);
      Vector masked = ctx.clamp(best + cfg.mask_alpha * mask.cwiseProduct(sign_of(g)).cwiseProduct(ctx.bound().cwiseSqrt()),
                                corpus[index_a]);
      emit("6", A, kCoordinatorName, PayloadKind::noised_local_output, static_cast<size_t>(model_a.output_dim()),
           static_cast<int>(a));
      // Step 7: C evaluates the masked input.
      rec.masked_acc = success_over_s(masked, target);
      emit("7", kCoordinatorName, A, PayloadKind::gradient, static_cast<size_t>(model_a.output_dim()), -1);
      emit("7", kCoordinatorName, A, PayloadKind::attack_rate, 1, -1);
      for (size_t p : benign)
        emit("7", kCoordinatorName, party_name(p), PayloadKind::gradient,
             static_cast<size_t>(sys.participants[p].model.output_dim()), -1);
      // Step 8: masked saliency scores.
      rec.score_masked_a = ctx.attacker_score(masked, rec.index_b);
      rec.score_masked_b = ctx.benign_score_at(masked, rec.index_b);
      emit("8", A, kCoordinatorName, PayloadKind::saliency_score, 1, static_cast<int>(a));
      for (size_t p : benign) emit("8", party_name(p), kCoordinatorName, PayloadKind::saliency_score, 1, static_cast<int>(p));
      // Step 9: ratios.
      auto ratio = [](double masked_s, double orig_s) { return masked_s / std::max(orig_s, 1e-12); };
      rec.ratio_a = ratio(rec.score_masked_a, rec.score_orig_a);
      rec.ratio_b = ratio(rec.score_masked_b, rec.score_orig_b);
      emit("9", kCoordinatorName, A, PayloadKind::ratio, 2, -1);
      // Step 10: update Q and collect ADIs.
      if (rec.masked_acc > rec.orig_acc && rec.ratio_a > rec.ratio_b) {
        q[index_a] = masked;
        rec.updated = true;
      }
      if (rec.masked_acc >= threshold) {
        res.adis.push_back(masked);
        rec.found = true;
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(cursor));
        deleted = true;
      }
      emit("10", A, A, PayloadKind::ratio, 0, static_cast<int>(a));
      res.records.push_back(rec);
    }
    if (!deleted) ++cursor;
  }
  AuditReport rep = audit(res.messages);
  if (!rep.ok) throw std::runtime_error("cooperation_trace: privacy audit failed: " + rep.violations.front());
  return res;
}

}  // namespace vflkit
