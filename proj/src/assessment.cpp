#include "vflkit/assessment.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vflkit/checkpoint.hpp"

namespace vflkit {

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (workers == 1 || n < 2) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double dominating_rate(const FixedPeers& peers, const Matrix& attacker_rows, double threshold, int workers) {
  if (attacker_rows.rows() == 0) throw std::invalid_argument("dominating_rate: no attacker rows");
  if (!(threshold > 0 && threshold <= 1)) throw std::invalid_argument("dominating_rate: threshold must be in (0, 1]");
  int n = static_cast<int>(attacker_rows.rows());
  std::vector<char> hit(n, 0);
  parallel_for(n, workers, [&](int i) {
    hit[i] = peers.majority(attacker_rows.row(i).transpose()).second >= threshold - 1e-12;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / n;
}

double dominating_rate(const VFLSystem& system, const Views& test_views, double threshold, size_t attacker,
                       int workers) {
  return dominating_rate(FixedPeers(system, test_views, attacker), test_views.at(attacker), threshold, workers);
}

SuccessReport success_rate(const AdiSynthesizer& synth, const Matrix& attacker_rows, const SynthesisConfig& cfg,
                           TargetPolicy policy, int workers) {
  int n = static_cast<int>(attacker_rows.rows());
  if (n == 0) throw std::invalid_argument("success_rate: empty sample");
  if (cfg.mode == GradientMode::blackbox && workers > 1)
    synth.saliency(attacker_rows.row(0).transpose(), 0, GradientMode::blackbox, cfg.fdm_step);  // build shared cache
  SuccessReport rep;
  rep.candidates.resize(n);
  parallel_for(n, workers, [&](int i) {
    Vector x = attacker_rows.row(i).transpose();
    SynthesisConfig c = cfg;
    if (policy == TargetPolicy::majority) c.target = synth.test_peers().majority(x).first;
    rep.candidates[i] = synth.generate(x, c);
  });
  int ok = 0;
  for (const auto& c : rep.candidates)
    if (c.attack_accuracy >= cfg.threshold - 1e-12) ++ok;
  rep.rate = static_cast<double>(ok) / n;
  return rep;
}

RewardShares reward_shares(const VFLSystem& system, const Views& inputs, AttributionMode mode) {
  JointPass pass = joint_forward(system, inputs);
  Matrix seed(pass.output.rows(), pass.output.cols());
  for (Eigen::Index i = 0; i < seed.rows(); ++i)
    seed.row(i) = output_spread_grad(pass.output.row(i).transpose()).transpose();
  JointGrads g = joint_backward(system, pass, seed, false, false, true);
  RewardShares out;
  double total = 0;
  for (size_t p = 0; p < system.size(); ++p) {
    const Matrix& gp = g.input_grads[p];
    double v = mode == AttributionMode::gradient ? gp.cwiseAbs().sum() : gp.cwiseProduct(inputs[p]).cwiseAbs().sum();
    out.shares.push_back(v);
    total += v;
  }
  if (!(total > 0)) {
    out.degenerate = true;
    std::fill(out.shares.begin(), out.shares.end(), 1.0 / static_cast<double>(system.size()));
    return out;
  }
  for (double& s : out.shares) s /= total;
  return out;
}

PerturbationMatrix build_perturbation_matrix(const VFLSystem& system, const Views& benign_rows, const Vector& x,
                                             const SynthesisConfig& cfg, size_t attacker, int workers) {
  if (benign_rows.size() != system.size()) throw std::invalid_argument("perturbation matrix: need a view per participant");
  size_t any = attacker == 0 ? 1 : 0;
  int h = static_cast<int>(benign_rows[any].rows());
  if (h < 2) throw std::invalid_argument("perturbation matrix: need at least 2 benign rows");
  int d = static_cast<int>(x.size());
  Matrix raw(d, h);
  std::vector<int> rounds(h, 0);
  parallel_for(h, workers, [&](int i) {
    Views one;
    for (size_t p = 0; p < system.size(); ++p)
      one.push_back(p == attacker ? Matrix(x.transpose()) : Matrix(benign_rows[p].row(i)));
    AdiSynthesizer synth(system, one, one, attacker);
    Vector v = synth.run(x, cfg, rounds[i], [&](const Vector& pert) {
      return class_probabilities(synth.tiny_peers().outputs(x + pert))(0, cfg.target) >= cfg.threshold;
    });
    raw.col(i) = v;
  });
  PerturbationMatrix out;
  std::vector<int> keep;
  for (int i = 0; i < h; ++i) {
    if (raw.col(i).norm() > 1e-12)
      keep.push_back(i);
    else
      out.dropped.push_back(i);
  }
  out.raw.resize(d, static_cast<Eigen::Index>(keep.size()));
  out.columns.resize(d, static_cast<Eigen::Index>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j) {
    out.raw.col(j) = raw.col(keep[j]);
    out.columns.col(j) = raw.col(keep[j]).normalized();
    out.rounds.push_back(rounds[keep[j]]);
  }
  return out;
}

Vector singular_spectrum(const Matrix& n) {
  if (n.size() == 0) throw std::invalid_argument("singular_spectrum: empty matrix");
  require_finite(n, "singular_spectrum input");
  Eigen::BDCSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(n)};
  return svd.singularValues();  // already descending
}

Matrix random_unit_columns(int d, int h, uint64_t seed) {
  if (d < 1 || h < 1) throw std::invalid_argument("random_unit_columns: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(d, h);
  for (int j = 0; j < h; ++j) {
    Vector v(d);
    do {
      for (int i = 0; i < d; ++i) v[i] = normal(rng);
    } while (v.norm() == 0);
    m.col(j) = v.normalized();
  }
  return m;
}

double reconstruct_and_rate(const PerturbationMatrix& n, int k, const Vector& x, const FixedPeers& test_peers,
                            int target) {
  if (n.columns.cols() == 0) throw std::invalid_argument("reconstruct: empty perturbation matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(n.columns), Eigen::ComputeThinU);
  int rank = static_cast<int>(svd.rank());
  if (k < 1 || k > rank) throw std::invalid_argument("reconstruct: k must be in [1, rank]");
  Eigen::MatrixXd u = svd.matrixU().leftCols(k);
  Vector mean = n.raw.rowwise().mean();
  Vector proj = u * (u.transpose() * mean);
  return test_peers.fraction_with_label(x + proj, target);
}

ExperimentReport::ExperimentReport(std::string kind, nlohmann::json config, uint64_t seed)
    : kind_(std::move(kind)), config_(std::move(config)), seed_(seed) {}

void ExperimentReport::set(const std::string& row, const std::string& col, double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("report: non-finite cell " + row + "/" + col);
  auto r = std::find(rows_.begin(), rows_.end(), row);
  size_t ri = static_cast<size_t>(r - rows_.begin());
  if (r == rows_.end()) {
    rows_.push_back(row);
    cells_.emplace_back(cols_.size());
  }
  auto c = std::find(cols_.begin(), cols_.end(), col);
  size_t ci = static_cast<size_t>(c - cols_.begin());
  if (c == cols_.end()) {
    cols_.push_back(col);
    for (auto& line : cells_) line.resize(cols_.size());
  }
  cells_[ri][ci] = value;
}

bool ExperimentReport::has(const std::string& row, const std::string& col) const {
  auto r = std::find(rows_.begin(), rows_.end(), row);
  auto c = std::find(cols_.begin(), cols_.end(), col);
  if (r == rows_.end() || c == cols_.end()) return false;
  return cells_[r - rows_.begin()][c - cols_.begin()].has_value();
}

double ExperimentReport::get(const std::string& row, const std::string& col) const {
  if (!has(row, col)) throw std::out_of_range("report: no cell " + row + "/" + col);
  auto r = std::find(rows_.begin(), rows_.end(), row) - rows_.begin();
  auto c = std::find(cols_.begin(), cols_.end(), col) - cols_.begin();
  return *cells_[r][c];
}

std::string ExperimentReport::artifact_hash() const {
  // FNV-1a over the config snapshot and the metric table.
  std::string text = config_.dump() + to_csv();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json table = nlohmann::json::object();
  for (size_t r = 0; r < rows_.size(); ++r) {
    nlohmann::json row = nlohmann::json::object();
    for (size_t c = 0; c < cols_.size(); ++c)
      if (cells_[r][c]) row[cols_[c]] = *cells_[r][c];
    table[rows_[r]] = row;
  }
  return {{"experiment", kind_},
          {"config", config_},
          {"rows", rows_},
          {"columns", cols_},
          {"metrics", table},
          {"notes", notes_},
          {"provenance", {{"seed", seed_}, {"artifact_hash", artifact_hash()}, {"wallclock_seconds", wallclock_}}}};
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17) << "row";
  for (const auto& c : cols_) os << "," << c;
  os << "\n";
  for (size_t r = 0; r < rows_.size(); ++r) {
    os << rows_[r];
    for (size_t c = 0; c < cols_.size(); ++c) {
      os << ",";
      if (cells_[r][c]) os << *cells_[r][c];
    }
    os << "\n";
  }
  return os.str();
}

std::string ExperimentReport::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", std::gmtime(&now));
  std::string stem = (std::filesystem::path(dir) / (kind_ + "-" + std::to_string(seed_) + "-" + stamp)).string();
  std::ofstream(stem + ".json") << to_json().dump(2) << "\n";
  std::ofstream(stem + ".csv") << to_csv();
  return stem;
}

nlohmann::json SweepSetup::snapshot() const {
  return {{"train_rows", train.n()},
          {"test_rows", test.n()},
          {"width", width},
          {"height", height},
          {"train", {{"epochs", train_cfg.epochs}, {"lr", train_cfg.lr}, {"batch", train_cfg.batch},
                     {"momentum", train_cfg.momentum}, {"seed", train_cfg.seed}}},
          {"synthesis", {{"alpha", synth.alpha}, {"beta", synth.beta}, {"gamma", synth.gamma},
                         {"momentum", synth.momentum}, {"max_rounds", synth.max_rounds},
                         {"mode", to_string(synth.mode)}}},
          {"synth_samples", synth_samples},
          {"tiny_size", tiny_size},
          {"threshold", threshold},
          {"fuzz_seeds", fuzz ? fuzz_seeds : 0},
          {"seed", seed}};
}

VFLSystem train_or_load_splitnn(const Views& train_views, const std::vector<int>& labels, int num_classes,
                                const TrainConfig& cfg, const PartitionSpec& spec, const std::string& cache_dir,
                                const std::string& name) {
  std::string path;
  if (!cache_dir.empty()) {
    path = (std::filesystem::path(cache_dir) / (name + ".json")).string();
    if (std::filesystem::exists(path)) {
      VFLSystem s = load_system(path);
      if (s.partition() == spec) return s;
    }
  }
  VFLSystem s = train_splitnn(train_views, labels, num_classes, default_splitnn_arch(train_views.size()), cfg, spec).system;
  if (!path.empty()) {
    std::filesystem::create_directories(cache_dir);
    save_system(s, path);
  }
  return s;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string model_name(const std::string& prefix, const SweepSetup& s) {
  return prefix + "-n" + std::to_string(s.train.n()) + "-e" + std::to_string(s.train_cfg.epochs) + "-s" +
         std::to_string(s.train_cfg.seed) + "-lr" + fixed2(s.train_cfg.lr * 1000);
}

double sweep_success(const VFLSystem& system, const Views& train_views, const Views& test_views, const SweepSetup& s,
                     MutationStrategy strategy) {
  int n = static_cast<int>(test_views[0].rows());
  Views tiny = select_rows(test_views, sample_indices(n, s.tiny_size, s.seed));
  Matrix sample = select_rows(test_views[0], sample_indices(n, std::min(s.synth_samples, n), s.seed + 1));
  AdiSynthesizer synth(system, tiny, test_views, 0);
  SynthesisConfig cfg = s.synth;
  cfg.strategy = strategy;
  cfg.threshold = s.threshold;
  if (strategy == MutationStrategy::bounded) cfg.bound = default_bound(train_views[0]);
  return success_rate(synth, sample, cfg, TargetPolicy::majority, s.workers).rate;
}

double sweep_fuzz(const VFLSystem& system, const Views& train_views, const Views& test_views, const SweepSetup& s) {
  int n = static_cast<int>(test_views[0].rows());
  Views tiny = select_rows(test_views, sample_indices(n, s.tiny_size, s.seed));
  int cal_rows = std::min<int>(static_cast<int>(train_views[0].rows()), 2000);
  SaliencyCalibration cal =
      calibrate_saliency(system, select_rows(train_views, sample_indices(static_cast<int>(train_views[0].rows()), cal_rows, s.seed)));
  FuzzContext ctx(system, tiny, test_views, cal, default_bound(train_views[0]), 0);
  int d = static_cast<int>(train_views[0].cols());
  ctx.set_value_range(Vector::Zero(d), Vector::Ones(d));
  std::vector<Vector> corpus;
  for (int i : sample_indices(n, std::min(s.fuzz_seeds, n), s.seed + 2)) corpus.push_back(test_views[0].row(i).transpose());
  CampaignConfig cfg = *s.fuzz;
  cfg.thresholds = {s.threshold};
  return fuzz_campaign(corpus, ctx, cfg).count_at(s.threshold);
}

struct SweepCell {
  Views train_views, test_views;
  VFLSystem system;
};

SweepCell prepare_cell(const SweepSetup& s, const PartitionSpec& column_spec, const std::string& name) {
  PartitionSpec spec = expand_image_columns(column_spec, s.width, s.height);
  SweepCell cell;
  cell.train_views = partition_vertical(s.train.features, spec);
  cell.test_views = partition_vertical(s.test.features, spec);
  int classes = std::max(s.train.num_classes(), s.test.num_classes());
  cell.system = train_or_load_splitnn(cell.train_views, s.train.labels, classes, s.train_cfg, spec, s.model_cache_dir,
                                      model_name(name, s));
  return cell;
}

}  // namespace

ExperimentReport partition_ratio_sweep(const SweepSetup& s, const std::vector<double>& ratios) {
  auto start = std::chrono::steady_clock::now();
  nlohmann::json cfg = s.snapshot();
  cfg["ratios"] = ratios;
  ExperimentReport rep("partition_ratio_sweep", cfg, s.seed);
  for (double ratio : ratios) {
    std::string row = fixed2(ratio);
    SweepCell cell = prepare_cell(s, ratio_split(s.width, ratio), "ratio-" + row);
    rep.set(row, "accuracy", evaluate(cell.system, cell.test_views, s.test.labels).accuracy);
    rep.set(row, "dominating_a", dominating_rate(cell.system, cell.test_views, s.threshold, 0, s.workers));
    rep.set(row, "dominating_b", dominating_rate(cell.system, cell.test_views, s.threshold, 1, s.workers));
    if (s.synth_samples > 0)
      rep.set(row, "success_random", sweep_success(cell.system, cell.train_views, cell.test_views, s, MutationStrategy::random));
    if (s.fuzz && s.fuzz_seeds > 0) rep.set(row, "fuzz_adis", sweep_fuzz(cell.system, cell.train_views, cell.test_views, s));
  }
  rep.set_wallclock(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return rep;
}

ExperimentReport participants_sweep(const SweepSetup& s, const std::vector<int>& counts) {
  auto start = std::chrono::steady_clock::now();
  nlohmann::json cfg = s.snapshot();
  cfg["counts"] = counts;
  ExperimentReport rep("participants_sweep", cfg, s.seed);
  for (int m : counts) {
    std::string row = "m=" + std::to_string(m);
    SweepCell cell = prepare_cell(s, mnist_column_split(m), "parties-" + std::to_string(m));
    rep.set(row, "accuracy", evaluate(cell.system, cell.test_views, s.test.labels).accuracy);
    rep.set(row, "dominating", dominating_rate(cell.system, cell.test_views, s.threshold, 0, s.workers));
    if (s.synth_samples > 0) {
      rep.set(row, "success_random", sweep_success(cell.system, cell.train_views, cell.test_views, s, MutationStrategy::random));
      rep.set(row, "success_bounded",
              sweep_success(cell.system, cell.train_views, cell.test_views, s, MutationStrategy::bounded));
    }
    if (s.fuzz && s.fuzz_seeds > 0) rep.set(row, "fuzz_adis", sweep_fuzz(cell.system, cell.train_views, cell.test_views, s));
  }
  rep.set_wallclock(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return rep;
}

}  // namespace vflkit
