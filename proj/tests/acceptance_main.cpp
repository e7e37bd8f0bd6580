// Acceptance runner: prints one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5,9] [--fuzz-minutes 30] [--cache DIR] [--workers N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "vflkit/assessment.hpp"
#include "vflkit/checkpoint.hpp"
#include "vflkit/config.hpp"
#include "vflkit/variance.hpp"

namespace fs = std::filesystem;
using namespace vflkit;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::set<int> only;
  double fuzz_minutes = 30.0;
  std::string cache = "acceptance-cache";
  int workers = 1;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

/// A dataset, its views and a trained (or cached) model.
struct Task {
  RunConfig cfg;
  PreparedData data;
  VFLSystem system;
  std::string name;
};

std::unique_ptr<Task> make_task(const Options& opt, const std::string& name, RunConfig cfg) {
  auto t = std::make_unique<Task>();
  t->name = name;
  t->cfg = std::move(cfg);
  t->data = prepare_data(t->cfg.dataset, t->cfg.seed);
  fs::create_directories(opt.cache);
  char lr[32];
  std::snprintf(lr, sizeof lr, "%g", t->cfg.train.lr);
  fs::path path = fs::path(opt.cache) / (name + "-e" + std::to_string(t->cfg.train.epochs) + "-lr" + lr + "-s" +
                                         std::to_string(t->cfg.seed) + ".json");
  if (fs::exists(path)) {
    VFLSystem s = load_system(path.string());
    if (s.partition() == t->data.spec) {
      t->system = std::move(s);
      return t;
    }
  }
  t->system = train_from_config(t->cfg, t->data).system;
  save_system(t->system, path.string());
  return t;
}

RunConfig credit_config() {
  RunConfig c;
  c.dataset.kind = "credit";
  c.dataset.partition = "counts";
  c.dataset.counts = {13, 10};
  c.protocol = ProtocolKind::heterolr;
  c.train.epochs = 30;
  c.train.lr = 0.05;
  c.seed = 1;
  c.train.seed = 1;
  return c;
}

RunConfig vehicle_config() {
  RunConfig c;
  c.dataset.kind = "vehicle";
  c.dataset.partition = "counts";
  c.dataset.counts = {9, 9};
  c.protocol = ProtocolKind::heterolr;
  c.train.epochs = 30;
  c.train.lr = 0.05;
  c.seed = 1;
  c.train.seed = 1;
  return c;
}

RunConfig mnist_config() {
  RunConfig c;
  c.dataset.kind = "mnist";
  c.dataset.partition = "mnist";
  c.dataset.participants = 2;
  c.protocol = ProtocolKind::splitnn;
  c.train.epochs = 10;
  c.train.lr = 0.01;
  c.seed = 1;
  c.train.seed = 1;
  return c;
}

class Suite {
 public:
  explicit Suite(Options opt) : opt_(std::move(opt)) {}

  Task& credit() { return lazy(credit_, "credit", credit_config); }
  Task& vehicle() { return lazy(vehicle_, "vehicle", vehicle_config); }
  Task& mnist() { return lazy(mnist_, "mnist", mnist_config); }

  std::string credit_tag() { return credit().data.surrogate ? " [credit: surrogate data]" : ""; }

  const Options& opt() const { return opt_; }

  /// Synthesis over `samples` test rows of A with the shared tiny set S; cached per key.
  const SuccessReport& synthesis(Task& t, MutationStrategy strategy, GradientMode mode, int samples = 200) {
    std::string key = t.name + to_string(strategy) + to_string(mode) + std::to_string(samples);
    auto it = synth_cache_.find(key);
    if (it != synth_cache_.end()) return it->second;
    int n = static_cast<int>(t.data.test_views[0].rows());
    Views tiny = select_rows(t.data.test_views, sample_indices(n, 20, t.cfg.seed));
    Matrix rows = select_rows(t.data.test_views[0], sample_rows(t, samples));
    AdiSynthesizer synth(t.system, tiny, t.data.test_views, 0);
    SynthesisConfig cfg;
    cfg.strategy = strategy;
    cfg.mode = mode;
    cfg.threshold = 0.95;
    cfg.seed = t.cfg.seed;
    if (strategy == MutationStrategy::bounded) cfg.bound = default_bound(t.data.train_views[0]);
    return synth_cache_[key] = success_rate(synth, rows, cfg, TargetPolicy::majority, opt_.workers);
  }

  std::vector<int> sample_rows(const Task& t, int samples) const {
    int n = static_cast<int>(t.data.test_views[0].rows());
    return sample_indices(n, std::min(samples, n), t.cfg.seed + 1);
  }

 private:
  Task& lazy(std::unique_ptr<Task>& slot, const std::string& name, RunConfig (*make)()) {
    if (!slot) slot = make_task(opt_, name, make());
    return *slot;
  }

  Options opt_;
  std::unique_ptr<Task> credit_, vehicle_, mnist_;
  std::map<std::string, SuccessReport> synth_cache_;
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Random d-dimensional mixture with K components and a projection whose scalar spread stays O(1).
struct RandomCase {
  Gmm gmm;
  Vector theta;
  double offset = 0.0;
};

RandomCase random_case(int k, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(-1, 1), w(0.2, 1.0), off(-2, 2);
  RandomCase c;
  double total = 0;
  for (int i = 0; i < k; ++i) {
    c.gmm.weights.push_back(w(rng));
    total += c.gmm.weights.back();
    Vector mu(d);
    for (int j = 0; j < d; ++j) mu[j] = u(rng);
    Matrix l(d, d);
    for (Eigen::Index j = 0; j < l.size(); ++j) l.data()[j] = 0.5 * nd(rng);
    c.gmm.means.push_back(mu);
    c.gmm.covariances.push_back(l * l.transpose() / d + 0.1 * Matrix::Identity(d, d));
  }
  for (double& x : c.gmm.weights) x /= total;
  c.theta = Vector(d);
  for (int j = 0; j < d; ++j) c.theta[j] = nd(rng) / std::sqrt(static_cast<double>(d));
  c.offset = off(rng);
  return c;
}

Outcome criterion_1(Suite&) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_k(1, 3);
  const int n = 1000000, d = 3;
  double worst_h = 0, worst_s = 0;
  for (int i = 0; i < 50; ++i) {
    RandomCase c = random_case(pick_k(rng), d, rng);
    double analytic = heterolr_variance(project_mixture(c.gmm, c.theta, c.offset)).value;
    double mc = variance_monte_carlo([&](const Vector& x) { return sigmoid(c.theta.dot(x) + c.offset); }, c.gmm, n, 100 + i);
    worst_h = std::max(worst_h, std::abs(analytic - mc));
  }
  for (int i = 0; i < 50; ++i) {
    RandomCase c = random_case(1, d, rng);
    double analytic = splitnn_unit_variance(project_mixture(c.gmm, c.theta, c.offset));
    double mc =
        variance_monte_carlo([&](const Vector& x) { return std::max(c.theta.dot(x) + c.offset, 0.0); }, c.gmm, n, 500 + i);
    worst_s = std::max(worst_s, std::abs(analytic - mc));
  }
  return {worst_h <= 0.02 && worst_s <= 0.005,
          "50 mixtures K in {1,2,3}: max |heterolr - MC| = " + num(worst_h) + " (<= 0.02); 50 K=1: max |splitnn - MC| = " +
              num(worst_s) + " (<= 0.005)"};
}

Outcome criterion_2(Suite&) {
  auto single = [](double m, double s) { return ScalarMixture{{1.0, m, s}}; };
  double h50 = heterolr_variance(single(-50, 1)).value, s50 = splitnn_unit_variance(single(-50, 1));
  bool pass = h50 < 1e-6 && s50 < 1e-6;
  double rebound_h = 0, rebound_s = 0;
  for (double sd : {0.5, 1.0, 2.0}) {
    double prev_h = INFINITY, prev_s = INFINITY;
    for (int m = 0; m >= -20; m -= 2) {
      double h = heterolr_variance(single(m, sd)).value, s = splitnn_unit_variance(single(m, sd));
      rebound_h = std::max(rebound_h, h - prev_h);
      rebound_s = std::max(rebound_s, s - prev_s);
      prev_h = h;
      prev_s = s;
    }
  }
  pass = pass && rebound_h <= 0 && rebound_s <= 0;
  return {pass, "at mu'=-50: heterolr " + num(h50) + ", splitnn " + num(s50) +
                    " (< 1e-6); grid 0..-20 over sigma' in {0.5,1,2}: largest step up heterolr " + num(rebound_h) +
                    ", splitnn " + num(rebound_s) + " (must be <= 0)"};
}

Outcome criterion_3(Suite& s) {
  auto start = Clock::now();
  Task& c = s.credit();
  Metrics mc = evaluate(c.system, c.data.test_views, c.data.test.labels);
  Task& v = s.vehicle();
  Metrics mv = evaluate(v.system, v.data.test_views, v.data.test.labels);
  Task& m = s.mnist();
  Metrics mm = evaluate(m.system, m.data.test_views, m.data.test.labels);
  double secs = since(start);
  double auc = mc.auc_roc.value_or(0.0);
  return {auc >= 0.70 && mv.accuracy >= 0.78 && mm.accuracy >= 0.93 && secs < 600,
          "credit auc_roc " + num(auc) + " (>= 0.70); vehicle accuracy " + num(mv.accuracy) + " (>= 0.78); mnist accuracy " +
              num(mm.accuracy) + " (>= 0.93); " + num(secs, 3) + " s" + s.credit_tag()};
}

Outcome criterion_4(Suite& s) {
  Task& m = s.mnist();
  double dm = dominating_rate(m.system, m.data.test_views, 0.95, 0, s.opt().workers);
  Task& c = s.credit();
  double dc = dominating_rate(c.system, c.data.test_views, 0.95, 0, s.opt().workers);
  return {dm < 0.05 && dc >= 0.10 && dc <= 0.40,
          "dominating@95 mnist " + num(dm) + " (< 0.05); credit " + num(dc) + " (in [0.10, 0.40])" + s.credit_tag()};
}

Outcome criterion_5(Suite& s) {
  double cr = s.synthesis(s.credit(), MutationStrategy::random, GradientMode::whitebox).rate;
  double vr = s.synthesis(s.vehicle(), MutationStrategy::random, GradientMode::whitebox).rate;
  double cb = s.synthesis(s.credit(), MutationStrategy::bounded, GradientMode::whitebox).rate;
  double mr = s.synthesis(s.mnist(), MutationStrategy::random, GradientMode::whitebox).rate;
  return {cr >= 0.90 && vr >= 0.90 && cb >= 0.60 && mr >= 0.70,
          "success@95 over 200 inputs: credit random " + num(cr) + " (>= 0.90); vehicle random " + num(vr) +
              " (>= 0.90); credit bounded " + num(cb) + " (>= 0.60); mnist random " + num(mr) + " (>= 0.70)" +
              s.credit_tag()};
}

Outcome criterion_6(Suite& s) {
  double w = s.synthesis(s.mnist(), MutationStrategy::random, GradientMode::whitebox).rate;
  double b = s.synthesis(s.mnist(), MutationStrategy::random, GradientMode::blackbox).rate;
  return {std::abs(w - b) <= 0.20,
          "mnist random success@95 whitebox " + num(w) + ", blackbox " + num(b) + ", gap " + num(std::abs(w - b)) +
              " (<= 0.20)"};
}

SweepSetup sweep_setup(Suite& s) {
  Task& m = s.mnist();
  SweepSetup setup;
  setup.train = m.data.train;
  setup.test = m.data.test;
  setup.train_cfg = m.cfg.train;
  setup.threshold = 0.95;
  setup.model_cache_dir = (fs::path(s.opt().cache) / "sweeps").string();
  setup.seed = m.cfg.seed;
  setup.workers = s.opt().workers;
  return setup;
}

Outcome criterion_7(Suite& s) {
  std::vector<double> ratios = {0.40, 0.65, 1.00, 1.33, 1.80, 2.11};
  ExperimentReport rep = partition_ratio_sweep(sweep_setup(s), ratios);
  bool a_up = true, b_down = true;
  std::string a_seq, b_seq;
  for (size_t i = 0; i < rep.rows().size(); ++i) {
    const std::string& r = rep.rows()[i];
    a_seq += (i ? "," : "") + num(rep.get(r, "dominating_a"), 3);
    b_seq += (i ? "," : "") + num(rep.get(r, "dominating_b"), 3);
    if (i > 0) {
      const std::string& p = rep.rows()[i - 1];
      a_up = a_up && rep.get(r, "dominating_a") >= rep.get(p, "dominating_a");
      b_down = b_down && rep.get(r, "dominating_b") <= rep.get(p, "dominating_b");
    }
  }
  double a_last = rep.get(rep.rows().back(), "dominating_a"), b_first = rep.get(rep.rows().front(), "dominating_b");
  return {a_up && b_down && a_last >= 0.40 && b_first >= 0.60,
          "ratios 0.40..2.11: dominating on A [" + a_seq + "] (non-decreasing, last >= 0.40); on B [" + b_seq +
              "] (non-increasing, first >= 0.60)"};
}

Outcome criterion_8(Suite& s) {
  Task& m = s.mnist();
  int n = static_cast<int>(m.data.test_views[0].rows());
  Vector x = m.data.test_views[0].row(0).transpose();
  FixedPeers peers(m.system, m.data.test_views, 0);
  int majority = peers.majority(x).first;
  int target = majority == 0 ? 1 : 0;
  SynthesisConfig cfg;
  cfg.target = target;
  cfg.max_rounds = 50;
  cfg.threshold = 0.95;
  Views rows = select_rows(m.data.test_views, sample_indices(n, std::min(1000, n), m.cfg.seed));
  PerturbationMatrix pm = build_perturbation_matrix(m.system, rows, x, cfg, 0, s.opt().workers);
  Vector sigma = singular_spectrum(pm.columns);
  Vector base = singular_spectrum(random_unit_columns(static_cast<int>(x.size()), static_cast<int>(pm.columns.cols()), 7));
  double ratio = sigma[9] / sigma[0], base_ratio = base[9] / base[0];
  double r1 = reconstruct_and_rate(pm, 1, x, peers, target);
  double r10 = reconstruct_and_rate(pm, 10, x, peers, target);
  return {ratio < base_ratio && r10 >= 0.80,
          "h=" + std::to_string(pm.columns.cols()) + " columns (" + std::to_string(pm.dropped.size()) +
              " zero dropped): sigma10/sigma1 " + num(ratio) + " vs random " + num(base_ratio) +
              " (must be lower); top-10 reconstruction rate " + num(r10) + " (>= 0.80); top-1 " + num(r1)};
}

Outcome criterion_9(Suite& s) {
  auto start = Clock::now();
  Task& c = s.credit();
  int n = static_cast<int>(c.data.test_views[0].rows());
  Views tiny = select_rows(c.data.test_views, sample_indices(n, 20, c.cfg.seed));
  FuzzContext ctx(c.system, tiny, c.data.test_views, calibrate_saliency(c.system, c.data.train_views),
                  default_bound(c.data.train_views[0]), 0);
  ctx.set_value_range(c.data.train_views[0].colwise().minCoeff().transpose(),
                      c.data.train_views[0].colwise().maxCoeff().transpose());
  std::vector<Vector> corpus = resolve_corpus("sample:500", c.data.test_views[0], c.cfg.seed + 2);
  CampaignConfig cfg;
  cfg.budget_seconds = s.opt().fuzz_minutes * 60;
  cfg.seed = c.cfg.seed;
  CampaignResult res = fuzz_campaign(corpus, ctx, cfg);
  // Independent re-verification on the full benign test view.
  FixedPeers verify(c.system, c.data.test_views, 0);
  int verified = 0;
  for (const auto& a : res.adis)
    if (a.candidate.attack_accuracy >= 0.95 && verify.fraction_with_label(a.candidate.input(), a.candidate.target) >= 0.95)
      ++verified;
  double secs = since(start);
  return {verified >= 10 && verified == res.count_at(0.95) && secs <= s.opt().fuzz_minutes * 60 + 60,
          std::to_string(verified) + " ADIs@95 re-verified of " + std::to_string(res.count_at(0.95)) + " reported (>= 10); " +
              std::to_string(res.iterations) + " iterations, " + std::to_string(res.mutations) + " mutations in " +
              num(secs, 4) + " s (budget " + num(s.opt().fuzz_minutes, 3) + " min)" + s.credit_tag()};
}

Outcome criterion_10(Suite& s) {
  Task& c = s.credit();
  RewardShares normal = reward_shares(c.system, c.data.test_views);
  const SuccessReport& sr = s.synthesis(c, MutationStrategy::random, GradientMode::whitebox);
  std::vector<int> idx = s.sample_rows(c, 200);
  std::vector<int> keep;
  for (size_t i = 0; i < sr.candidates.size(); ++i)
    if (sr.candidates[i].attack_accuracy >= 0.95) keep.push_back(static_cast<int>(i));
  if (keep.empty()) return {false, "no successful ADIs to attribute"};
  Views adv = {Matrix(static_cast<Eigen::Index>(keep.size()), c.data.test_views[0].cols()),
               Matrix(static_cast<Eigen::Index>(keep.size()), c.data.test_views[1].cols())};
  for (size_t i = 0; i < keep.size(); ++i) {
    adv[0].row(static_cast<Eigen::Index>(i)) = sr.candidates[keep[i]].input().transpose();
    adv[1].row(static_cast<Eigen::Index>(i)) = c.data.test_views[1].row(idx[keep[i]]);
  }
  RewardShares attacked = reward_shares(c.system, adv);
  double a0 = normal.shares[0], a1 = attacked.shares[0];
  return {a0 >= 0.35 && a0 <= 0.60 && a1 >= 0.75,
          "credit share of A on normal inputs " + num(a0) + " (in [0.35, 0.60]); under " + std::to_string(keep.size()) +
              " ADIs " + num(a1) + " (>= 0.75)" + s.credit_tag()};
}

Outcome criterion_11(Suite& s) {
  SweepSetup setup = sweep_setup(s);
  setup.synth_samples = 200;
  ExperimentReport rep = participants_sweep(setup, {2, 3, 5});
  double s2 = rep.get("m=2", "success_random"), s3 = rep.get("m=3", "success_random"), s5 = rep.get("m=5", "success_random");
  return {s2 > s3 && s3 > s5,
          "random success@95 m=2 " + num(s2) + ", m=3 " + num(s3) + ", m=5 " + num(s5) +
              " (required: strictly decreasing); bounded m=2 " + num(rep.get("m=2", "success_bounded")) + ", m=5 " +
              num(rep.get("m=5", "success_bounded"))};
}

Outcome criterion_12(Suite& s) {
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  Task& c = s.credit();
  Task& m = s.mnist();
  Task& v = s.vehicle();

  // Gradient checks.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  auto random_rows = [&](int r, int d) {
    Matrix x(r, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
    return x;
  };
  int checked = 0;
  double worst = 0;
  auto gc = [&](const LocalModel& model, const Matrix& input, const std::string& name) {
    GradCheckReport r = grad_check(model, input, 1e-6, 1e-3);
    checked += r.checked;
    worst = std::max(worst, r.max_rel_error);
    check(r.pass, "grad check " + name);
  };
  gc(c.system.participants[0].model, c.data.test_views[0].topRows(4), "credit A");
  gc(v.system.participants[1].model, v.data.test_views[1].topRows(4), "vehicle B");
  gc(m.system.coordinator.top, random_rows(3, m.system.coordinator.top.input_dim()), "mnist top");
  gc(make_mlp({6, 8, 5, 3}, rng, LayerKind::sigmoid, true, LayerKind::softmax), random_rows(4, 6), "sigmoid mlp");

  // Partition round trips.
  check(concat_views(c.data.test_views, c.data.spec) == concat_views(partition_vertical(c.data.test, c.data.spec), c.data.spec),
        "credit partition");
  check(concat_views(partition_vertical(c.data.test.features, c.data.spec), c.data.spec) == c.data.test.features,
        "credit round trip");
  check(concat_views(partition_vertical(v.data.test.features, v.data.spec), v.data.spec) == v.data.test.features,
        "vehicle round trip");
  for (int parties : {2, 3, 5}) {
    PartitionSpec spec = expand_image_columns(mnist_column_split(parties), 28, 28);
    check(concat_views(partition_vertical(m.data.test.features, spec), spec) == m.data.test.features,
          "mnist round trip m=" + std::to_string(parties));
  }

  // Privacy audit on traced inference and a cooperation run.
  for (Task* t : {&c, &v, &m})
    check(audit(run_with_trace(t->system, select_rows(t->data.test_views, sample_indices(t->data.test.n(), 50, 3))).messages).ok,
          "audit " + t->name);
  int n = c.data.test.n();
  Views tiny = select_rows(c.data.test_views, sample_indices(n, 20, c.cfg.seed));
  Vector bound = default_bound(c.data.train_views[0]);
  FuzzContext ctx(c.system, tiny, c.data.test_views, calibrate_saliency(c.system, c.data.train_views), bound, 0);
  std::vector<Vector> corpus = resolve_corpus("sample:10", c.data.test_views[0], 5);
  CampaignConfig cc;
  cc.inner_repeats = 2;
  CooperationResult coop = cooperation_trace(corpus, ctx, cc, 6);
  check(audit(coop.messages).ok, "audit cooperation");
  CooperationResult coop2 = cooperation_trace(corpus, ctx, cc, 6);
  check(to_jsonl(coop.messages) == to_jsonl(coop2.messages) && coop.adis.size() == coop2.adis.size(),
        "cooperation determinism");

  // Bounded mutation clamp.
  const SuccessReport& bounded = s.synthesis(c, MutationStrategy::bounded, GradientMode::whitebox, 20);
  for (const auto& cand : bounded.candidates)
    check(((cand.perturbation.array().abs() - bound.array()) <= 1e-12).all(), "bounded synthesis clamp");
  CampaignConfig fc;
  fc.max_iter = 60;
  fc.energy = 5;
  CampaignResult f1 = fuzz_campaign(corpus, ctx, fc);
  for (const auto& a : f1.adis) check(ctx.within_bound(a.candidate.input(), corpus[a.lineage]), "fuzz clamp");

  // Seed determinism of every campaign kind.
  CampaignResult f2 = fuzz_campaign(corpus, ctx, fc);
  check(f1.log_jsonl() == f2.log_jsonl() && f1.adis_jsonl() == f2.adis_jsonl(), "fuzz determinism");
  int rows = static_cast<int>(c.data.test_views[0].rows());
  AdiSynthesizer synth(c.system, tiny, c.data.test_views, 0);
  Matrix few = select_rows(c.data.test_views[0], sample_indices(rows, 10, 9));
  for (GradientMode mode : {GradientMode::whitebox, GradientMode::blackbox}) {
    SynthesisConfig sc;
    sc.mode = mode;
    sc.max_rounds = 30;
    check(to_jsonl(success_rate(synth, few, sc).candidates) == to_jsonl(success_rate(synth, few, sc, TargetPolicy::majority, 2).candidates),
          "synthesis determinism " + to_string(mode));
  }
  RunConfig again = c.cfg;
  again.train.epochs = 2;
  check(system_to_json(train_from_config(again, c.data).system).dump() ==
            system_to_json(train_from_config(again, c.data).system).dump(),
        "training determinism");

  std::string detail = std::to_string(checked) + " gradient entries (max rel err " + num(worst) +
                       ", tol 1e-3); partition round trips; audit on 4 traces; clamp and determinism of fuzz, "
                       "cooperation, synthesis and training";
  if (!failures.empty()) {
    detail += "; failed:";
    for (const auto& f : failures) detail += " " + f + ";";
  }
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Options opt;
  std::vector<int> only;
  opt.workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--fuzz-minutes", opt.fuzz_minutes, "fuzzing budget for criterion 9");
  app.add_option("--cache", opt.cache, "model cache directory");
  app.add_option("--workers", opt.workers, "worker threads");
  CLI11_PARSE(app, argc, argv);
  opt.only.insert(only.begin(), only.end());

  std::vector<std::pair<std::string, std::function<Outcome(Suite&)>>> criteria = {
      {"variance fidelity", criterion_1},   {"variance limits", criterion_2},   {"model quality", criterion_3},
      {"baseline dominance", criterion_4},  {"synthesis success", criterion_5}, {"blackbox vs whitebox", criterion_6},
      {"partition-ratio trend", criterion_7}, {"svd structure", criterion_8}, {"fuzzing yield", criterion_9},
      {"reward hogging", criterion_10},     {"participant-count trend", criterion_11}, {"invariant suites", criterion_12},
  };
  Suite suite(opt);
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i) + 1;
    if (!opt.only.empty() && !opt.only.count(id)) continue;
    auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(suite);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] " << o.detail
              << " (" << num(since(start), 4) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
