// Command-line entry point: train, dominance, synthesize, fuzz, variance, svd, sweep.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "vflkit/assessment.hpp"
#include "vflkit/checkpoint.hpp"
#include "vflkit/config.hpp"
#include "vflkit/variance.hpp"

namespace fs = std::filesystem;
using namespace vflkit;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> output_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "JSON run config")->required();
  cmd->add_option("--seed", f.seed, "global seed (overrides config and VFLKIT_SEED)");
  cmd->add_option("--workers", f.workers, "worker threads");
  cmd->add_option("--output-dir", f.output_dir, "output directory");
}

RunConfig load(const CommonFlags& f) {
  RunConfig cfg = load_run_config(f.config);
  apply_seed_env(cfg);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
    cfg.synthesis.synth.seed = *f.seed;
    cfg.fuzz.campaign.seed = *f.seed;
  }
  if (f.workers) {
    if (*f.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.workers = *f.workers;
  }
  if (f.output_dir) cfg.output_dir = *f.output_dir;
  fs::create_directories(cfg.output_dir);
  return cfg;
}

void write_text(const RunConfig& cfg, const std::string& name, const std::string& text) {
  std::ofstream out(fs::path(cfg.output_dir) / name);
  if (!out) throw DataError("cannot write " + name + " in " + cfg.output_dir);
  out << text;
}

VFLSystem load_checkpoint(const RunConfig& cfg, const PreparedData& data) {
  std::string path = cfg.checkpoint_path();
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path + " (run `vflkit train` first)");
  VFLSystem s;
  try {
    s = load_system(path);
  } catch (const std::exception& e) {
    throw DataError("bad checkpoint " + path + ": " + e.what());
  }
  if (s.partition() != data.spec) throw DataError("checkpoint partition does not match the configured dataset");
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_train(const RunConfig& cfg) {
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  TrainResult tr = train_from_config(cfg, data);
  save_system(tr.system, cfg.checkpoint_path());
  Metrics m = evaluate(tr.system, data.test_views, data.test.labels);
  nlohmann::json j = {{"accuracy", m.accuracy}, {"final_loss", tr.loss_history.empty() ? 0.0 : tr.loss_history.back()},
                      {"surrogate_data", data.surrogate}, {"config", cfg.to_json()}};
  if (m.auc_roc) j["auc_roc"] = *m.auc_roc;
  write_text(cfg, "metrics.json", j.dump(2) + "\n");
  std::cout << "accuracy = " << fmt(m.accuracy);
  if (m.auc_roc) std::cout << " auc_roc = " << fmt(*m.auc_roc);
  std::cout << "\n";
  return 0;
}

int cmd_dominance(const RunConfig& cfg) {
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  VFLSystem sys = load_checkpoint(cfg, data);
  ExperimentReport rep("dominance", cfg.to_json(), cfg.seed);
  for (size_t p = 0; p < sys.size(); ++p)
    for (double t : {0.95, 0.99})
      rep.set(party_name(p), "dominating@" + fmt(t * 100), dominating_rate(sys, data.test_views, t, p, cfg.workers));
  rep.write(cfg.output_dir);
  std::cout << "dominating_rate@95 = " << fmt(rep.get(party_name(0), "dominating@95")) << "\n";
  return 0;
}

int cmd_synthesize(RunConfig cfg, const std::optional<std::string>& mode, const std::optional<std::string>& mutation,
                   const std::optional<int>& samples, const std::optional<int>& max_rounds) {
  try {
    if (mode) cfg.synthesis.synth.mode = gradient_mode_from_string(*mode);
    if (mutation) cfg.synthesis.synth.strategy = mutation_strategy_from_string(*mutation);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (samples) cfg.synthesis.samples = *samples;
  if (max_rounds) cfg.synthesis.synth.max_rounds = *max_rounds;
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  VFLSystem sys = load_checkpoint(cfg, data);
  int n = static_cast<int>(data.test_views[0].rows());
  Views tiny = select_rows(data.test_views, sample_indices(n, std::min(cfg.synthesis.tiny_size, n), cfg.seed));
  Matrix sample = select_rows(data.test_views[0], sample_indices(n, std::min(cfg.synthesis.samples, n), cfg.seed + 1));
  SynthesisConfig sc = cfg.synthesis.synth;
  if (sc.strategy == MutationStrategy::bounded) sc.bound = default_bound(data.train_views[0], cfg.synthesis.bound_multiplier);
  AdiSynthesizer synth(sys, tiny, data.test_views, 0);
  TargetPolicy policy = cfg.synthesis.target_policy == "fixed" ? TargetPolicy::fixed : TargetPolicy::majority;
  SuccessReport sr = success_rate(synth, sample, sc, policy, cfg.workers);
  write_text(cfg, "candidates.jsonl", to_jsonl(sr.candidates));
  ExperimentReport rep("synthesize", cfg.to_json(), cfg.seed);
  rep.set(to_string(sc.mode) + "/" + to_string(sc.strategy), "success_rate", sr.rate);
  rep.write(cfg.output_dir);
  std::cout << "success_rate = " << fmt(sr.rate) << "\n";
  return 0;
}

int cmd_fuzz(RunConfig cfg, const std::optional<double>& budget_mins, const std::optional<int>& seeds,
             const std::optional<int>& max_iter) {
  if (budget_mins) {
    if (*budget_mins < 0) throw ConfigError("--budget-mins must be >= 0");
    cfg.fuzz.campaign.budget_seconds = *budget_mins * 60;
  }
  if (seeds) cfg.fuzz.seeds = *seeds;
  if (max_iter) cfg.fuzz.campaign.max_iter = *max_iter;
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  VFLSystem sys = load_checkpoint(cfg, data);
  int n = static_cast<int>(data.test_views[0].rows());
  Views tiny = select_rows(data.test_views, sample_indices(n, std::min(cfg.synthesis.tiny_size, n), cfg.seed));
  SaliencyCalibration cal = calibrate_saliency(sys, data.train_views);
  FuzzContext ctx(sys, tiny, data.test_views, cal, default_bound(data.train_views[0], cfg.synthesis.bound_multiplier), 0);
  ctx.set_value_range(data.train_views[0].colwise().minCoeff().transpose(),
                      data.train_views[0].colwise().maxCoeff().transpose());
  std::string corpus_spec = cfg.fuzz.corpus.empty() ? "sample:" + std::to_string(cfg.fuzz.seeds) : cfg.fuzz.corpus;
  std::vector<Vector> corpus = resolve_corpus(corpus_spec, data.test_views[0], cfg.seed + 2);
  CampaignResult res = fuzz_campaign(corpus, ctx, cfg.fuzz.campaign);
  write_text(cfg, "fuzz_log.jsonl", res.log_jsonl());
  write_text(cfg, "fuzz_adis.jsonl", res.adis_jsonl());
  ExperimentReport rep("fuzz", cfg.to_json(), cfg.seed);
  for (double t : cfg.fuzz.campaign.thresholds) rep.set("campaign", "adis@" + fmt(t * 100), res.count_at(t));
  rep.set("campaign", "iterations", res.iterations);
  rep.set("campaign", "mutations", static_cast<double>(res.mutations));
  rep.set("campaign", "seconds", res.seconds);
  if (res.budget_exhausted) rep.note("wallclock budget exhausted; partial results");
  rep.write(cfg.output_dir);
  std::cout << "adis@" << fmt(cfg.fuzz.campaign.thresholds.front() * 100) << " = "
            << res.count_at(cfg.fuzz.campaign.thresholds.front()) << "\n";
  return 0;
}

int cmd_variance(const RunConfig& cfg) {
  const auto& v = cfg.variance;
  Gmm gmm;
  try {
    gmm.weights = v.weights;
    for (const auto& m : v.means) gmm.means.push_back(Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())));
    for (const auto& c : v.covariances) gmm.covariances.push_back(make_matrix(c));
    gmm.validate();
    if (static_cast<int>(v.theta.size()) != gmm.dim()) throw std::invalid_argument("theta length != mixture dimension");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("variance fixture: ") + e.what());
  }
  Vector theta = Eigen::Map<const Vector>(v.theta.data(), static_cast<Eigen::Index>(v.theta.size()));
  ScalarMixture sm = project_mixture(gmm, theta, v.offset);
  double analytic = 0, mc = 0;
  if (v.protocol == "heterolr") {
    analytic = heterolr_variance(sm).value;
    mc = variance_monte_carlo([](double z) { return 1.0 / (1.0 + std::exp(-z)); }, sm, v.mc_samples, cfg.seed);
  } else {
    auto mode = v.splitnn_mode == "per_component" ? SplitnnVarianceMode::per_component : SplitnnVarianceMode::exact;
    analytic = splitnn_unit_variance(sm, mode);
    mc = variance_monte_carlo([](double z) { return std::max(z, 0.0); }, sm, v.mc_samples, cfg.seed);
  }
  ExperimentReport rep("variance", cfg.to_json(), cfg.seed);
  rep.set(v.protocol, "analytic", analytic);
  rep.set(v.protocol, "monte_carlo", mc);
  rep.set(v.protocol, "gap", std::abs(analytic - mc));
  rep.write(cfg.output_dir);
  std::cout << "analytic = " << fmt(analytic) << " monte_carlo = " << fmt(mc) << " gap = " << fmt(std::abs(analytic - mc))
            << "\n";
  return 0;
}

int cmd_svd(const RunConfig& cfg) {
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  VFLSystem sys = load_checkpoint(cfg, data);
  const auto& sv = cfg.svd;
  int n = static_cast<int>(data.test_views[0].rows());
  if (sv.attacker_row < 0 || sv.attacker_row >= n) throw ConfigError("svd.attacker_row out of range");
  Vector x = data.test_views[0].row(sv.attacker_row).transpose();
  FixedPeers peers(sys, data.test_views, 0);
  int target = sv.target;
  if (target < 0) {
    int majority = peers.majority(x).first;
    target = majority == 0 ? 1 : 0;
  }
  SynthesisConfig sc = cfg.synthesis.synth;
  sc.target = target;
  sc.max_rounds = sv.max_rounds;
  Views rows = select_rows(data.test_views, sample_indices(n, std::min(sv.h, n), cfg.seed));
  PerturbationMatrix pm = build_perturbation_matrix(sys, rows, x, sc, 0, cfg.workers);
  if (pm.columns.cols() == 0) throw DataError("svd: every perturbation column was zero");
  Vector sigma = singular_spectrum(pm.columns);
  Vector base = singular_spectrum(random_unit_columns(static_cast<int>(x.size()), static_cast<int>(pm.columns.cols()), cfg.seed));
  ExperimentReport rep("svd", cfg.to_json(), cfg.seed);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) rep.set("sigma_" + std::to_string(i + 1), "perturbation", sigma[i]);
  for (Eigen::Index i = 0; i < base.size(); ++i) rep.set("sigma_" + std::to_string(i + 1), "random", base[i]);
  Eigen::BDCSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(pm.columns)};
  int rank = static_cast<int>(svd.rank());
  for (int k : sv.ks)
    if (k >= 1 && k <= rank) rep.set("k=" + std::to_string(k), "reconstruction_rate", reconstruct_and_rate(pm, k, x, peers, target));
  for (int i : pm.dropped) rep.note("dropped zero perturbation column " + std::to_string(i));
  rep.write(cfg.output_dir);
  int i10 = std::min<int>(9, static_cast<int>(sigma.size()) - 1);
  std::cout << "sigma10_over_sigma1 = " << fmt(sigma[i10] / sigma[0]) << " random = " << fmt(base[i10] / base[0]) << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  PreparedData data = prepare_data(cfg.dataset, cfg.seed);
  SweepSetup s;
  s.train = data.train;
  s.test = data.test;
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(data.train.d()))));
  if (side * side != data.train.d()) throw DataError("sweeps need square image data");
  s.width = s.height = side;
  s.train_cfg = cfg.train;
  s.synth = cfg.synthesis.synth;
  s.synth_samples = cfg.sweep.synth_samples;
  s.tiny_size = cfg.synthesis.tiny_size;
  s.threshold = cfg.synthesis.synth.threshold;
  if (cfg.sweep.fuzz_seeds > 0) {
    s.fuzz = cfg.fuzz.campaign;
    s.fuzz_seeds = cfg.sweep.fuzz_seeds;
  }
  s.model_cache_dir = (fs::path(cfg.output_dir) / "models").string();
  s.seed = cfg.seed;
  s.workers = cfg.workers;
  ExperimentReport rep = cfg.sweep.kind == "ratio" ? partition_ratio_sweep(s, cfg.sweep.ratios)
                                                   : participants_sweep(s, cfg.sweep.counts);
  std::string stem = rep.write(cfg.output_dir);
  std::cout << "report = " << stem << ".json rows = " << rep.rows().size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toolkit for adversarial dominating inputs in vertical federated learning"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, flags);
  auto* dominance = app.add_subcommand("dominance", "dominating rates of unperturbed inputs");
  add_common(dominance, flags);

  auto* synth = app.add_subcommand("synthesize", "gradient-based ADI synthesis success rate");
  add_common(synth, flags);
  std::optional<std::string> mode, mutation;
  std::optional<int> samples, max_rounds;
  synth->add_option("--mode", mode, "whitebox or blackbox");
  synth->add_option("--mutation", mutation, "random or bounded");
  synth->add_option("--samples", samples, "attacker inputs to sample");
  synth->add_option("--max-rounds", max_rounds, "round cap T");

  auto* fuzz = app.add_subcommand("fuzz", "saliency-guided greybox fuzzing campaign");
  add_common(fuzz, flags);
  std::optional<double> budget;
  std::optional<int> seeds, max_iter;
  fuzz->add_option("--budget-mins", budget, "wallclock budget in minutes (0: none)");
  fuzz->add_option("--seeds", seeds, "corpus size when sampling");
  fuzz->add_option("--max-iter", max_iter, "iteration cap");

  auto* variance = app.add_subcommand("variance", "analytic vs Monte-Carlo output variance");
  add_common(variance, flags);
  auto* svd = app.add_subcommand("svd", "singular spectrum of single-input perturbations");
  add_common(svd, flags);
  auto* sweep = app.add_subcommand("sweep", "partition-ratio or participant-count sweep");
  add_common(sweep, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = load(flags);
    if (*train) return cmd_train(cfg);
    if (*dominance) return cmd_dominance(cfg);
    if (*synth) return cmd_synthesize(cfg, mode, mutation, samples, max_rounds);
    if (*fuzz) return cmd_fuzz(cfg, budget, seeds, max_iter);
    if (*variance) return cmd_variance(cfg);
    if (*svd) return cmd_svd(cfg);
    if (*sweep) return cmd_sweep(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
