#include "vflkit/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include "json.hpp"
#include <numeric>
#include <random>
#include <stdexcept>

namespace vflkit {

std::string to_string(ProtocolKind kind) { return kind == ProtocolKind::heterolr ? "heterolr" : "splitnn"; }

ProtocolKind protocol_kind_from_string(const std::string& s) {
  if (s == "heterolr") return ProtocolKind::heterolr;
  if (s == "splitnn") return ProtocolKind::splitnn;
  throw std::invalid_argument("unknown protocol: " + s);
}

PartitionSpec VFLSystem::partition() const {
  PartitionSpec spec;
  for (const auto& p : participants) spec.push_back(p.columns);
  return spec;
}

int VFLSystem::aggregate_dim() const {
  if (coordinator.kind == ProtocolKind::heterolr) return participants.front().model.output_dim();
  int d = 0;
  for (const auto& p : participants) d += p.model.output_dim();
  return d;
}

void VFLSystem::validate() const {
  if (participants.empty()) throw std::invalid_argument("system: no participants");
  int d = 0;
  for (const auto& p : participants) {
    p.model.validate();
    if (p.model.input_dim() != static_cast<int>(p.columns.size()))
      throw std::invalid_argument("system: participant " + std::to_string(p.id) + " model input != column count");
    d += static_cast<int>(p.columns.size());
  }
  validate_partition(partition(), d);
  coordinator.top.validate();
  if (coordinator.kind == ProtocolKind::heterolr) {
    for (const auto& p : participants)
      if (p.model.output_dim() != participants.front().model.output_dim())
        throw std::invalid_argument("system: heterolr local scores differ in width");
  }
  if (coordinator.top.input_dim() != aggregate_dim())
    throw std::invalid_argument("system: coordinator input does not match local outputs");
  LayerKind last = coordinator.top.layers().back().kind;
  if (last != LayerKind::sigmoid && last != LayerKind::softmax)
    throw std::invalid_argument("system: coordinator must end in sigmoid or softmax");
  if (num_classes < 2) throw std::invalid_argument("system: need at least two classes");
}

int VFLSystem::local_offset(size_t p) const {
  if (coordinator.kind == ProtocolKind::heterolr) return 0;
  int off = 0;
  for (size_t i = 0; i < p; ++i) off += participants[i].model.output_dim();
  return off;
}

Matrix VFLSystem::local_output(size_t p, const Matrix& x) const { return forward(participants.at(p).model, x); }

Matrix VFLSystem::assemble(const std::vector<Matrix>& locals) const {
  if (locals.size() != participants.size()) throw std::invalid_argument("assemble: local output count mismatch");
  Eigen::Index n = locals.front().rows();
  Matrix agg = Matrix::Zero(n, aggregate_dim());
  for (size_t p = 0; p < locals.size(); ++p) {
    if (locals[p].rows() != n) throw std::invalid_argument("assemble: row count mismatch");
    place_local(agg, locals[p], p);
  }
  return agg;
}

void VFLSystem::place_local(Matrix& agg, const Matrix& local, size_t p) const {
  int w = participants[p].model.output_dim();
  if (local.cols() != w) throw std::invalid_argument("place_local: width mismatch");
  bool bcast = local.rows() == 1 && agg.rows() != 1;
  if (!bcast && local.rows() != agg.rows()) throw std::invalid_argument("place_local: row mismatch");
  if (coordinator.kind == ProtocolKind::heterolr) {
    if (bcast) agg.rowwise() += local.row(0);
    else agg += local;
  } else {
    int off = local_offset(p);
    if (bcast) agg.middleCols(off, w).rowwise() = local.row(0);
    else agg.middleCols(off, w) = local;
  }
}

Matrix VFLSystem::local_grad(const Matrix& agg_grad, size_t p) const {
  if (coordinator.kind == ProtocolKind::heterolr) return agg_grad;
  return agg_grad.middleCols(local_offset(p), participants[p].model.output_dim());
}

static void check_views(const VFLSystem& system, const Views& views) {
  if (views.size() != system.size()) throw std::invalid_argument("views: expected one per participant");
  for (size_t p = 0; p < views.size(); ++p) {
    if (views[p].cols() != system.participants[p].model.input_dim())
      throw std::invalid_argument("views: participant " + std::to_string(p) + " input width mismatch");
    if (views[p].rows() != views.front().rows()) throw std::invalid_argument("views: row counts differ");
  }
}

Matrix joint_inference(const VFLSystem& system, const Views& views) {
  check_views(system, views);
  std::vector<Matrix> locals;
  for (size_t p = 0; p < views.size(); ++p) locals.push_back(system.local_output(p, views[p]));
  return forward(system.coordinator.top, system.assemble(locals));
}

Matrix local_output(const Participant& participant, const Matrix& input) { return forward(participant.model, input); }

Matrix class_probabilities(const Matrix& output) {
  if (output.cols() != 1) return output;
  Matrix out(output.rows(), 2);
  out.col(0) = 1.0 - output.col(0).array();
  out.col(1) = output.col(0);
  return out;
}

std::vector<int> predict_labels(const Matrix& output) {
  std::vector<int> out(output.rows());
  if (output.cols() == 1) {
    for (Eigen::Index i = 0; i < output.rows(); ++i) out[i] = output(i, 0) > 0.5 ? 1 : 0;
    return out;
  }
  for (Eigen::Index i = 0; i < output.rows(); ++i) {
    Eigen::Index j;
    output.row(i).maxCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

Matrix loss_preactivation_grad(const Matrix& output, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != output.rows()) throw std::invalid_argument("loss: label count mismatch");
  Matrix g = output;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (g.cols() == 1) g(i, 0) -= labels[i];
    else g(i, labels[i]) -= 1.0;
  }
  return g / static_cast<double>(std::max<Eigen::Index>(1, g.rows()));
}

double mean_loss(const Matrix& output, const std::vector<int>& labels) {
  constexpr double kEps = 1e-15;
  double s = 0;
  for (Eigen::Index i = 0; i < output.rows(); ++i) {
    double p = output.cols() == 1 ? (labels[i] ? output(i, 0) : 1.0 - output(i, 0)) : output(i, labels[i]);
    s -= std::log(std::max(p, kEps));
  }
  return s / std::max<Eigen::Index>(1, output.rows());
}

JointPass joint_forward(const VFLSystem& system, const Views& views) {
  check_views(system, views);
  JointPass pass;
  pass.local_traces.resize(views.size());
  for (size_t p = 0; p < views.size(); ++p)
    pass.locals.push_back(forward(system.participants[p].model, views[p], pass.local_traces[p]));
  pass.output = forward(system.coordinator.top, system.assemble(pass.locals), pass.top_trace);
  return pass;
}

JointGrads joint_backward(const VFLSystem& system, const JointPass& pass, const Matrix& grad, bool preactivation,
                          bool want_params, bool want_inputs) {
  const LocalModel& top = system.coordinator.top;
  size_t upto = preactivation ? top.num_layers() - 1 : top.num_layers();
  BackwardResult tb = backward(top, pass.top_trace, grad, want_params, upto);
  JointGrads out;
  if (want_params) out.top_params = std::move(tb.params);
  for (size_t p = 0; p < system.size(); ++p) {
    Matrix g = system.local_grad(tb.input_grad, p);
    BackwardResult lb = backward(system.participants[p].model, pass.local_traces[p], g, want_params);
    if (want_params) out.local_params.push_back(std::move(lb.params));
    if (want_inputs) out.input_grads.push_back(std::move(lb.input_grad));
  }
  return out;
}

static PartitionSpec default_spec(const Views& views) {
  std::vector<int> counts;
  for (const auto& v : views) counts.push_back(static_cast<int>(v.cols()));
  return contiguous_split(counts);
}

static int count_classes(const std::vector<int>& labels) {
  int c = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("labels must be non-negative class indices");
    c = std::max(c, l + 1);
  }
  return c;
}

std::vector<double> fit(VFLSystem& system, const Views& views, const std::vector<int>& labels, const TrainConfig& cfg) {
  check_views(system, views);
  if (static_cast<Eigen::Index>(labels.size()) != views.front().rows())
    throw std::invalid_argument("fit: label count mismatch");
  if (cfg.lr < 0 || cfg.batch < 1 || cfg.epochs < 0) throw std::invalid_argument("fit: invalid hyperparameters");
  std::vector<double> history;
  int n = static_cast<int>(labels.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  bool frozen = cfg.lr == 0.0;
  std::vector<SgdOptimizer> local_opt;
  std::optional<SgdOptimizer> top_opt;
  if (!frozen) {
    for (size_t p = 0; p < system.size(); ++p) local_opt.emplace_back(cfg.lr, cfg.momentum);
    top_opt.emplace(cfg.lr, cfg.momentum);
  }
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int end = std::min(n, start + cfg.batch);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      Views batch = select_rows(views, idx);
      std::vector<int> y;
      for (int i : idx) y.push_back(labels[i]);
      JointPass pass = joint_forward(system, batch);
      total += mean_loss(pass.output, y) * idx.size();
      if (frozen) continue;
      JointGrads g = joint_backward(system, pass, loss_preactivation_grad(pass.output, y), true, true, false);
      top_opt->step(system.coordinator.top, g.top_params);
      for (size_t p = 0; p < system.size(); ++p) local_opt[p].step(system.participants[p].model, g.local_params[p]);
    }
    history.push_back(total / n);
  }
  return history;
}

TrainResult train_heterolr(const Views& views, const std::vector<int>& labels, const TrainConfig& cfg,
                           const PartitionSpec& spec, bool allow_multiclass) {
  if (views.size() < 2) throw std::invalid_argument("heterolr: need two or more participants");
  int c = std::max(2, count_classes(labels));
  if (c > 2 && !allow_multiclass) throw std::invalid_argument("heterolr: labels are not binary");
  int width = c == 2 ? 1 : c;
  TrainResult res;
  VFLSystem& sys = res.system;
  sys.num_classes = c;
  PartitionSpec cols = spec.empty() ? default_spec(views) : spec;
  for (size_t p = 0; p < views.size(); ++p) {
    Layer l = Layer::linear(Matrix::Zero(width, views[p].cols()), Vector::Zero(width));
    sys.participants.push_back({static_cast<int>(p), cols.at(p), LocalModel({l})});
  }
  sys.coordinator.kind = ProtocolKind::heterolr;
  sys.coordinator.top = LocalModel({Layer::activation(width == 1 ? LayerKind::sigmoid : LayerKind::softmax, width)});
  sys.validate();
  res.loss_history = fit(sys, views, labels, cfg);
  return res;
}

SplitNNArch default_splitnn_arch(size_t participants, int local_hidden, int local_out, int top_hidden) {
  SplitNNArch a;
  for (size_t p = 0; p < participants; ++p) a.local_widths.push_back({local_hidden, local_out});
  a.top_hidden = {top_hidden};
  return a;
}

TrainResult train_splitnn(const Views& views, const std::vector<int>& labels, int num_classes, const SplitNNArch& arch,
                          const TrainConfig& cfg, const PartitionSpec& spec) {
  if (views.empty()) throw std::invalid_argument("splitnn: no participants");
  if (arch.local_widths.size() != views.size()) throw std::invalid_argument("splitnn: one local architecture per view");
  if (num_classes < 2 || count_classes(labels) > num_classes) throw std::invalid_argument("splitnn: bad class count");
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  VFLSystem& sys = res.system;
  sys.num_classes = num_classes;
  PartitionSpec cols = spec.empty() ? default_spec(views) : spec;
  int concat = 0;
  for (size_t p = 0; p < views.size(); ++p) {
    if (arch.local_widths[p].empty()) throw std::invalid_argument("splitnn: empty local architecture");
    std::vector<int> dims = {static_cast<int>(views[p].cols())};
    dims.insert(dims.end(), arch.local_widths[p].begin(), arch.local_widths[p].end());
    sys.participants.push_back({static_cast<int>(p), cols.at(p), make_mlp(dims, rng, LayerKind::relu, true)});
    concat += dims.back();
  }
  int width = num_classes == 2 ? 1 : num_classes;
  std::vector<int> dims = {concat};
  dims.insert(dims.end(), arch.top_hidden.begin(), arch.top_hidden.end());
  dims.push_back(width);
  sys.coordinator.kind = ProtocolKind::splitnn;
  sys.coordinator.top =
      make_mlp(dims, rng, LayerKind::relu, true, width == 1 ? LayerKind::sigmoid : LayerKind::softmax);
  sys.validate();
  res.loss_history = fit(sys, views, labels, cfg);
  return res;
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (i + j) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, sum = 0;
  for (size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      ++pos;
      sum += rank[i];
    }
  double neg = n - pos;
  if (pos == 0 || neg == 0) return 0.5;
  return (sum - pos * (pos + 1) / 2) / (pos * neg);
}

Metrics evaluate(const VFLSystem& system, const Views& views, const std::vector<int>& labels) {
  if (views.empty() || views.front().rows() == 0) throw std::invalid_argument("evaluate: empty test set");
  Matrix out = joint_inference(system, views);
  std::vector<int> pred = predict_labels(out);
  Metrics m;
  int correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  m.accuracy = static_cast<double>(correct) / pred.size();
  if (system.num_classes == 2) {
    Matrix probs = class_probabilities(out);
    std::vector<double> scores(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) scores[i] = probs(i, 1);
    m.auc_roc = auc_roc(scores, labels);
  }
  return m;
}

std::string to_string(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::raw_features: return "raw_features";
    case PayloadKind::local_output: return "local_output";
    case PayloadKind::noised_local_output: return "noised_local_output";
    case PayloadKind::aggregate: return "aggregate";
    case PayloadKind::prediction: return "prediction";
    case PayloadKind::gradient: return "gradient";
    case PayloadKind::saliency_score: return "saliency_score";
    case PayloadKind::attack_rate: return "attack_rate";
    case PayloadKind::ratio: return "ratio";
    case PayloadKind::label: return "label";
  }
  return "unknown";
}

std::string party_name(size_t participant) { return "P" + std::to_string(participant); }

TracedRun run_with_trace(const VFLSystem& system, const Views& views) {
  check_views(system, views);
  TracedRun run;
  std::vector<Matrix> locals;
  for (size_t p = 0; p < views.size(); ++p) {
    locals.push_back(system.local_output(p, views[p]));
    run.messages.push_back({"4", party_name(p), kCoordinatorName, PayloadKind::local_output,
                            static_cast<size_t>(locals.back().size()), static_cast<int>(p)});
  }
  Matrix agg = system.assemble(locals);
  run.messages.push_back({"5", kCoordinatorName, kCoordinatorName, PayloadKind::aggregate, static_cast<size_t>(agg.size()), -1});
  run.output = forward(system.coordinator.top, agg);
  run.messages.push_back({"6", kCoordinatorName, kBroadcastName, PayloadKind::prediction,
                          static_cast<size_t>(run.output.size()), -1});
  return run;
}

AuditReport audit(const std::vector<ProtocolMessage>& messages) {
  AuditReport rep;
  for (size_t i = 0; i < messages.size(); ++i) {
    const auto& m = messages[i];
    if (m.kind != PayloadKind::raw_features) continue;
    std::string owner = m.owner >= 0 ? party_name(m.owner) : m.sender;
    if (m.receiver != owner || m.sender != owner) {
      rep.ok = false;
      rep.violations.push_back("message " + std::to_string(i) + " (step " + m.step + "): raw features of " + owner +
                               " sent " + m.sender + " -> " + m.receiver);
    }
  }
  return rep;
}

std::string to_jsonl(const std::vector<ProtocolMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    nlohmann::json j = {{"step", m.step},   {"sender", m.sender},         {"receiver", m.receiver},
                        {"kind", to_string(m.kind)}, {"payload_size", m.payload_size}, {"owner", m.owner}};
    out += j.dump() + "\n";
  }
  return out;
}

FixedPeers::FixedPeers(const VFLSystem& system, const Views& views, size_t attacker)
    : system_(&system), attacker_(attacker) {
  if (views.size() != system.size() || attacker >= system.size())
    throw std::invalid_argument("FixedPeers: bad view set or attacker index");
  Eigen::Index n = -1;
  std::vector<Matrix> locals(system.size());
  for (size_t p = 0; p < system.size(); ++p) {
    if (p == attacker) continue;
    if (n < 0) n = views[p].rows();
    if (views[p].rows() != n) throw std::invalid_argument("FixedPeers: row counts differ");
    locals[p] = system.local_output(p, views[p]);
  }
  base_ = Matrix::Zero(std::max<Eigen::Index>(n, 0), system.aggregate_dim());
  for (size_t p = 0; p < system.size(); ++p)
    if (p != attacker) system.place_local(base_, locals[p], p);
}

FixedPeers FixedPeers::from_locals(const VFLSystem& system, const std::vector<Matrix>& peer_locals, size_t attacker) {
  FixedPeers fp;
  fp.system_ = &system;
  fp.attacker_ = attacker;
  if (peer_locals.size() != system.size()) throw std::invalid_argument("FixedPeers: need a slot per participant");
  Eigen::Index n = -1;
  for (size_t p = 0; p < system.size(); ++p)
    if (p != attacker) n = peer_locals[p].rows();
  fp.base_ = Matrix::Zero(std::max<Eigen::Index>(n, 0), system.aggregate_dim());
  for (size_t p = 0; p < system.size(); ++p)
    if (p != attacker) system.place_local(fp.base_, peer_locals[p], p);
  return fp;
}

Matrix FixedPeers::outputs_from_local(const Matrix& l_attacker) const {
  Matrix agg = base_;
  system_->place_local(agg, l_attacker, attacker_);
  return forward(system_->coordinator.top, agg);
}

Matrix FixedPeers::outputs(const Vector& x) const {
  return outputs_from_local(system_->local_output(attacker_, x.transpose()));
}

std::vector<int> FixedPeers::predictions(const Vector& x) const { return predict_labels(outputs(x)); }

double FixedPeers::fraction_with_label(const Vector& x, int label) const {
  if (rows() == 0) throw std::invalid_argument("attack accuracy: empty peer view");
  auto pred = predictions(x);
  return static_cast<double>(std::count(pred.begin(), pred.end(), label)) / pred.size();
}

std::pair<int, double> FixedPeers::majority(const Vector& x) const {
  auto pred = predictions(x);
  std::map<int, int> counts;
  for (int l : pred) ++counts[l];
  int best = 0, best_count = -1;
  for (auto [l, c] : counts)
    if (c > best_count) {
      best = l;
      best_count = c;
    }
  return {best, static_cast<double>(best_count) / pred.size()};
}

FixedPeers FixedPeers::subset(const std::vector<int>& idx) const {
  FixedPeers out;
  out.system_ = system_;
  out.attacker_ = attacker_;
  out.base_ = select_rows(base_, idx);
  return out;
}

}  // namespace vflkit
