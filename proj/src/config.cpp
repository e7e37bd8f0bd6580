#include "vflkit/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace vflkit {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

DatasetConfig parse_dataset(const json& j) {
  check_keys(j, {"kind", "path", "labels_path", "label_column", "partition", "ratio", "participants", "counts",
                 "normalize", "test_fraction", "max_rows"},
             "dataset");
  DatasetConfig d;
  read(j, "kind", d.kind, "dataset");
  read(j, "path", d.path, "dataset");
  read(j, "labels_path", d.labels_path, "dataset");
  read(j, "label_column", d.label_column, "dataset");
  read(j, "partition", d.partition, "dataset");
  read(j, "ratio", d.ratio, "dataset");
  read(j, "participants", d.participants, "dataset");
  read(j, "counts", d.counts, "dataset");
  if (j.contains("normalize")) {
    bool b = false;
    read(j, "normalize", b, "dataset");
    d.normalize = b;
  }
  read(j, "test_fraction", d.test_fraction, "dataset");
  read(j, "max_rows", d.max_rows, "dataset");
  static const std::set<std::string> kinds = {"credit", "vehicle", "mnist", "csv", "idx"};
  require(kinds.count(d.kind), "dataset.kind: unsupported '" + d.kind + "'");
  static const std::set<std::string> partitions = {"ratio", "counts", "mnist"};
  require(partitions.count(d.partition), "dataset.partition: unsupported '" + d.partition + "'");
  require(d.ratio > 0, "dataset.ratio must be positive");
  require(d.test_fraction > 0 && d.test_fraction < 1, "dataset.test_fraction must be in (0, 1)");
  require(d.max_rows >= 0, "dataset.max_rows must be >= 0");
  if (d.partition == "counts") require(d.counts.size() >= 2, "dataset.counts needs at least two entries");
  return d;
}

SynthesisRunConfig parse_synthesis(const json& j) {
  check_keys(j, {"strategy", "mode", "alpha", "beta", "gamma", "momentum", "max_rounds", "threshold", "inner_lr",
                 "inner_steps", "fdm_step", "bound_multiplier", "samples", "tiny_size", "target_policy", "target"},
             "synthesis");
  SynthesisRunConfig s;
  std::string strategy = "random", mode = "whitebox";
  read(j, "strategy", strategy, "synthesis");
  read(j, "mode", mode, "synthesis");
  try {
    s.synth.strategy = mutation_strategy_from_string(strategy);
    s.synth.mode = gradient_mode_from_string(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("synthesis: ") + e.what());
  }
  read(j, "alpha", s.synth.alpha, "synthesis");
  read(j, "beta", s.synth.beta, "synthesis");
  read(j, "gamma", s.synth.gamma, "synthesis");
  read(j, "momentum", s.synth.momentum, "synthesis");
  read(j, "max_rounds", s.synth.max_rounds, "synthesis");
  read(j, "threshold", s.synth.threshold, "synthesis");
  read(j, "inner_lr", s.synth.inner_lr, "synthesis");
  read(j, "inner_steps", s.synth.inner_steps, "synthesis");
  read(j, "fdm_step", s.synth.fdm_step, "synthesis");
  read(j, "target", s.synth.target, "synthesis");
  read(j, "bound_multiplier", s.bound_multiplier, "synthesis");
  read(j, "samples", s.samples, "synthesis");
  read(j, "tiny_size", s.tiny_size, "synthesis");
  read(j, "target_policy", s.target_policy, "synthesis");
  require(s.target_policy == "majority" || s.target_policy == "fixed", "synthesis.target_policy: majority or fixed");
  require(s.samples >= 1 && s.tiny_size >= 1, "synthesis: samples and tiny_size must be >= 1");
  require(s.bound_multiplier > 0, "synthesis.bound_multiplier must be positive");
  require(s.synth.threshold > 0 && s.synth.threshold <= 1, "synthesis.threshold must be in (0, 1]");
  require(s.synth.max_rounds >= 0, "synthesis.max_rounds must be >= 0");
  return s;
}

FuzzRunConfig parse_fuzz(const json& j) {
  check_keys(j, {"max_iter", "energy", "mask_alpha", "stable_fraction", "beta", "gamma", "Gamma", "budget_minutes",
                 "thresholds", "noise_scale", "seeds", "corpus"},
             "fuzz");
  FuzzRunConfig f;
  auto& c = f.campaign;
  read(j, "max_iter", c.max_iter, "fuzz");
  read(j, "energy", c.energy, "fuzz");
  read(j, "mask_alpha", c.mask_alpha, "fuzz");
  read(j, "stable_fraction", c.stable_fraction, "fuzz");
  read(j, "beta", c.noise_trials, "fuzz");
  read(j, "gamma", c.inner_repeats, "fuzz");
  read(j, "Gamma", c.outer_repeats, "fuzz");
  double minutes = 0;
  read(j, "budget_minutes", minutes, "fuzz");
  c.budget_seconds = minutes * 60;
  read(j, "thresholds", c.thresholds, "fuzz");
  read(j, "noise_scale", c.noise_scale, "fuzz");
  read(j, "seeds", f.seeds, "fuzz");
  read(j, "corpus", f.corpus, "fuzz");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(f.seeds >= 1, "fuzz.seeds must be >= 1");
  return f;
}

VarianceRunConfig parse_variance(const json& j) {
  check_keys(j, {"protocol", "weights", "means", "covariances", "theta", "offset", "mc_samples", "splitnn_mode"},
             "variance");
  VarianceRunConfig v;
  read(j, "protocol", v.protocol, "variance");
  read(j, "weights", v.weights, "variance");
  read(j, "means", v.means, "variance");
  read(j, "covariances", v.covariances, "variance");
  read(j, "theta", v.theta, "variance");
  read(j, "offset", v.offset, "variance");
  read(j, "mc_samples", v.mc_samples, "variance");
  read(j, "splitnn_mode", v.splitnn_mode, "variance");
  require(v.protocol == "heterolr" || v.protocol == "splitnn", "variance.protocol: heterolr or splitnn");
  require(v.splitnn_mode == "exact" || v.splitnn_mode == "per_component", "variance.splitnn_mode: exact or per_component");
  require(v.mc_samples >= 2, "variance.mc_samples must be >= 2");
  require(v.weights.size() == v.means.size() && v.means.size() == v.covariances.size() && !v.weights.empty(),
          "variance: weights, means and covariances need one entry per component");
  return v;
}

SvdRunConfig parse_svd(const json& j) {
  check_keys(j, {"h", "ks", "max_rounds", "target", "attacker_row"}, "svd");
  SvdRunConfig s;
  read(j, "h", s.h, "svd");
  read(j, "ks", s.ks, "svd");
  read(j, "max_rounds", s.max_rounds, "svd");
  read(j, "target", s.target, "svd");
  read(j, "attacker_row", s.attacker_row, "svd");
  require(s.h >= 2, "svd.h must be >= 2");
  require(!s.ks.empty(), "svd.ks must be nonempty");
  return s;
}

SweepRunConfig parse_sweep(const json& j) {
  check_keys(j, {"kind", "ratios", "counts", "synth_samples", "fuzz_seeds"}, "sweep");
  SweepRunConfig s;
  read(j, "kind", s.kind, "sweep");
  read(j, "ratios", s.ratios, "sweep");
  read(j, "counts", s.counts, "sweep");
  read(j, "synth_samples", s.synth_samples, "sweep");
  read(j, "fuzz_seeds", s.fuzz_seeds, "sweep");
  require(s.kind == "ratio" || s.kind == "participants", "sweep.kind: ratio or participants");
  return s;
}

}  // namespace

std::string RunConfig::checkpoint_path() const {
  if (!checkpoint.empty()) return checkpoint;
  return (std::filesystem::path(output_dir) / "checkpoint.json").string();
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, {"dataset", "protocol", "architecture", "train", "synthesis", "fuzz", "variance", "svd", "sweep",
                 "output_dir", "checkpoint", "seed", "workers"},
             "config");
  RunConfig c;
  if (j.contains("dataset")) c.dataset = parse_dataset(j["dataset"]);
  std::string protocol = "heterolr";
  read(j, "protocol", protocol, "config");
  try {
    c.protocol = protocol_kind_from_string(protocol);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.protocol: ") + e.what());
  }
  if (j.contains("architecture")) {
    const json& a = j["architecture"];
    check_keys(a, {"local_hidden", "local_out", "top_hidden"}, "architecture");
    read(a, "local_hidden", c.arch.local_hidden, "architecture");
    read(a, "local_out", c.arch.local_out, "architecture");
    read(a, "top_hidden", c.arch.top_hidden, "architecture");
    require(c.arch.local_hidden >= 1 && c.arch.local_out >= 1 && c.arch.top_hidden >= 1,
            "architecture: widths must be >= 1");
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, {"epochs", "lr", "batch", "momentum"}, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "batch", c.train.batch, "train");
    read(t, "momentum", c.train.momentum, "train");
    require(c.train.epochs >= 0 && c.train.lr >= 0 && c.train.batch >= 1, "train: invalid hyperparameters");
    require(c.train.momentum >= 0 && c.train.momentum < 1, "train.momentum must be in [0, 1)");
  }
  // Unstated training defaults differ by protocol and data kind.
  bool lr_given = j.contains("train") && j["train"].contains("lr");
  bool epochs_given = j.contains("train") && j["train"].contains("epochs");
  if (!lr_given && c.protocol == ProtocolKind::splitnn) c.train.lr = 0.01;
  if (!epochs_given && (c.dataset.kind == "mnist" || c.dataset.kind == "idx")) c.train.epochs = 10;
  if (j.contains("synthesis")) c.synthesis = parse_synthesis(j["synthesis"]);
  if (j.contains("fuzz")) c.fuzz = parse_fuzz(j["fuzz"]);
  if (j.contains("variance")) c.variance = parse_variance(j["variance"]);
  if (j.contains("svd")) c.svd = parse_svd(j["svd"]);
  if (j.contains("sweep")) c.sweep = parse_sweep(j["sweep"]);
  read(j, "output_dir", c.output_dir, "config");
  read(j, "checkpoint", c.checkpoint, "config");
  read(j, "seed", c.seed, "config");
  read(j, "workers", c.workers, "config");
  require(c.workers >= 1, "config.workers must be >= 1");
  require(!c.output_dir.empty(), "config.output_dir must be nonempty");
  c.train.seed = c.seed;
  c.synthesis.synth.seed = c.seed;
  c.fuzz.campaign.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

void apply_seed_env(RunConfig& cfg) {
  const char* env = std::getenv("VFLKIT_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("VFLKIT_SEED is not an unsigned integer: ") + env);
  cfg.seed = v;
  cfg.train.seed = v;
  cfg.synthesis.synth.seed = v;
  cfg.fuzz.campaign.seed = v;
}

nlohmann::json RunConfig::to_json() const {
  json ds = {{"kind", dataset.kind},
             {"path", dataset.path},
             {"labels_path", dataset.labels_path},
             {"label_column", dataset.label_column},
             {"partition", dataset.partition},
             {"ratio", dataset.ratio},
             {"participants", dataset.participants},
             {"counts", dataset.counts},
             {"test_fraction", dataset.test_fraction},
             {"max_rows", dataset.max_rows}};
  if (dataset.normalize) ds["normalize"] = *dataset.normalize;
  const auto& s = synthesis.synth;
  const auto& f = fuzz.campaign;
  return {{"dataset", ds},
          {"protocol", to_string(protocol)},
          {"architecture", {{"local_hidden", arch.local_hidden}, {"local_out", arch.local_out}, {"top_hidden", arch.top_hidden}}},
          {"train", {{"epochs", train.epochs}, {"lr", train.lr}, {"batch", train.batch}, {"momentum", train.momentum}}},
          {"synthesis",
           {{"strategy", to_string(s.strategy)}, {"mode", to_string(s.mode)}, {"alpha", s.alpha}, {"beta", s.beta},
            {"gamma", s.gamma}, {"momentum", s.momentum}, {"max_rounds", s.max_rounds}, {"threshold", s.threshold},
            {"inner_lr", s.inner_lr}, {"inner_steps", s.inner_steps}, {"fdm_step", s.fdm_step}, {"target", s.target},
            {"bound_multiplier", synthesis.bound_multiplier}, {"samples", synthesis.samples},
            {"tiny_size", synthesis.tiny_size}, {"target_policy", synthesis.target_policy}}},
          {"fuzz",
           {{"max_iter", f.max_iter}, {"energy", f.energy}, {"mask_alpha", f.mask_alpha},
            {"stable_fraction", f.stable_fraction}, {"beta", f.noise_trials}, {"gamma", f.inner_repeats},
            {"Gamma", f.outer_repeats}, {"budget_minutes", f.budget_seconds / 60}, {"thresholds", f.thresholds},
            {"noise_scale", f.noise_scale}, {"seeds", fuzz.seeds}, {"corpus", fuzz.corpus}}},
          {"variance",
           {{"protocol", variance.protocol}, {"weights", variance.weights}, {"means", variance.means},
            {"covariances", variance.covariances}, {"theta", variance.theta}, {"offset", variance.offset},
            {"mc_samples", variance.mc_samples}, {"splitnn_mode", variance.splitnn_mode}}},
          {"svd", {{"h", svd.h}, {"ks", svd.ks}, {"max_rounds", svd.max_rounds}, {"target", svd.target},
                   {"attacker_row", svd.attacker_row}}},
          {"sweep", {{"kind", sweep.kind}, {"ratios", sweep.ratios}, {"counts", sweep.counts},
                     {"synth_samples", sweep.synth_samples}, {"fuzz_seeds", sweep.fuzz_seeds}}},
          {"output_dir", output_dir},
          {"checkpoint", checkpoint},
          {"seed", seed},
          {"workers", workers}};
}

namespace {

std::string data_path(const std::string& rel) { return (std::filesystem::path(VFLKIT_SOURCE_DIR) / "data" / rel).string(); }

bool is_image(const DatasetConfig& cfg) { return cfg.kind == "mnist" || cfg.kind == "idx"; }

Dataset load_raw(const DatasetConfig& cfg, bool& surrogate) {
  surrogate = false;
  std::string label = cfg.label_column.empty() ? (cfg.kind == "credit" ? "default" : "class") : cfg.label_column;
  try {
    if (cfg.kind == "credit") {
      std::string path = cfg.path.empty() ? data_path("credit.csv") : cfg.path;
      if (cfg.path.empty() && !std::filesystem::exists(path)) {
        surrogate = true;
        return credit_surrogate();
      }
      return load_csv(path, label);
    }
    if (cfg.kind == "vehicle") return load_csv(cfg.path.empty() ? data_path("vehicle.csv") : cfg.path, label);
    if (cfg.kind == "csv") {
      if (cfg.path.empty()) throw DataError("dataset.path is required for csv data");
      return load_csv(cfg.path, label);
    }
    if (cfg.kind == "mnist")
      return load_idx(cfg.path.empty() ? data_path("mnist/images.idx3-ubyte") : cfg.path,
                      cfg.labels_path.empty() ? data_path("mnist/labels.idx1-ubyte") : cfg.labels_path);
    if (cfg.path.empty() || cfg.labels_path.empty()) throw DataError("idx data needs path and labels_path");
    return load_idx(cfg.path, cfg.labels_path);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

}  // namespace

PreparedData prepare_data(const DatasetConfig& cfg, uint64_t seed) {
  PreparedData out;
  Dataset all = load_raw(cfg, out.surrogate);
  if (cfg.max_rows > 0 && cfg.max_rows < all.n()) all = subset(all, sample_indices(all.n(), cfg.max_rows, seed));
  bool image = is_image(cfg);
  int side = 0;
  if (image) {
    side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(all.d()))));
    if (side * side != all.d()) throw DataError("image data is not square");
  }
  try {
    if (cfg.partition == "ratio") {
      out.spec = image ? expand_image_columns(ratio_split(side, cfg.ratio), side, side) : ratio_split(all.d(), cfg.ratio);
    } else if (cfg.partition == "counts") {
      out.spec = image ? expand_image_columns(contiguous_split(cfg.counts), side, side) : contiguous_split(cfg.counts);
    } else {
      if (!image) throw ConfigError("dataset.partition 'mnist' needs image data");
      out.spec = expand_image_columns(mnist_column_split(cfg.participants), side, side);
    }
    validate_partition(out.spec, all.d());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset partition: ") + e.what());
  }
  SplitIndices split = stratified_split(all.labels, cfg.test_fraction, seed);
  out.train = subset(all, split.train);
  out.test = subset(all, split.test);
  if (cfg.normalize.value_or(!image)) {
    NormStats stats = fit_norm(out.train.features);
    out.train.features = apply_norm(out.train.features, stats);
    out.test.features = apply_norm(out.test.features, stats);
    out.train.norm_stats = stats;
    out.test.norm_stats = stats;
  }
  out.train_views = partition_vertical(out.train.features, out.spec);
  out.test_views = partition_vertical(out.test.features, out.spec);
  return out;
}

TrainResult train_from_config(const RunConfig& cfg, const PreparedData& data) {
  int classes = std::max(data.train.num_classes(), data.test.num_classes());
  if (cfg.protocol == ProtocolKind::heterolr)
    return train_heterolr(data.train_views, data.train.labels, cfg.train, data.spec, classes > 2);
  SplitNNArch arch = default_splitnn_arch(data.train_views.size(), cfg.arch.local_hidden, cfg.arch.local_out,
                                          cfg.arch.top_hidden);
  return train_splitnn(data.train_views, data.train.labels, classes, arch, cfg.train, data.spec);
}

std::vector<Vector> resolve_corpus(const std::string& spec, const Matrix& view, uint64_t seed) {
  std::vector<Vector> out;
  const std::string prefix = "sample:";
  if (spec.rfind(prefix, 0) == 0) {
    int n = 0;
    try {
      n = std::stoi(spec.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ConfigError("corpus: bad sample directive '" + spec + "'");
    }
    if (n < 1) throw ConfigError("corpus: sample count must be >= 1");
    for (int i : sample_indices(static_cast<int>(view.rows()), std::min<int>(n, static_cast<int>(view.rows())), seed))
      out.push_back(view.row(i).transpose());
    return out;
  }
  std::ifstream in(spec);
  if (!in) throw DataError("cannot open corpus " + spec);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    for (const auto& row : j) {
      auto v = row.get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != view.cols()) throw DataError("corpus input has wrong length");
      out.push_back(Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed corpus " + spec + ": " + e.what());
  }
  if (out.empty()) throw DataError("corpus " + spec + " is empty");
  return out;
}

}  // namespace vflkit
