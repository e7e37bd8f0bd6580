#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vflkit/dataset.hpp"
#include "vflkit/model.hpp"

namespace vflkit {

enum class ProtocolKind { heterolr, splitnn };

std::string to_string(ProtocolKind kind);
ProtocolKind protocol_kind_from_string(const std::string& s);

struct Participant {
  int id = 0;
  std::vector<int> columns;
  LocalModel model;
};

/// HeteroLR: top is a single sigmoid/softmax over the sum of local scores.
/// SplitNN: top is an MLP over the concatenated local outputs.
struct Coordinator {
  ProtocolKind kind = ProtocolKind::heterolr;
  LocalModel top;
};

class VFLSystem {
 public:
  std::vector<Participant> participants;
  Coordinator coordinator;
  int num_classes = 2;

  size_t size() const { return participants.size(); }
  PartitionSpec partition() const;
  void validate() const;

  /// Width of the coordinator input.
  int aggregate_dim() const;
  int output_dim() const { return coordinator.top.output_dim(); }

  Matrix local_output(size_t p, const Matrix& x) const;
  Matrix assemble(const std::vector<Matrix>& locals) const;
  /// Writes participant p's local rows into a coordinator-input matrix (broadcast if one row).
  void place_local(Matrix& aggregate, const Matrix& local, size_t p) const;
  /// Gradient with respect to participant p's local output, from a coordinator-input gradient.
  Matrix local_grad(const Matrix& aggregate_grad, size_t p) const;
  int local_offset(size_t p) const;
};

Matrix joint_inference(const VFLSystem& system, const Views& views);
Matrix local_output(const Participant& participant, const Matrix& input);

/// Coordinator output to an n x C probability table (sigmoid column p becomes [1-p, p]).
Matrix class_probabilities(const Matrix& output);
std::vector<int> predict_labels(const Matrix& output);

/// Gradient of the mean training loss with respect to the final activation's input.
Matrix loss_preactivation_grad(const Matrix& output, const std::vector<int>& labels);
double mean_loss(const Matrix& output, const std::vector<int>& labels);

struct JointPass {
  std::vector<ForwardTrace> local_traces;
  std::vector<Matrix> locals;
  ForwardTrace top_trace;
  Matrix output;
};

JointPass joint_forward(const VFLSystem& system, const Views& views);

struct JointGrads {
  std::vector<ParamGrads> local_params;
  ParamGrads top_params;
  std::vector<Matrix> input_grads;
};

/// Backward through the coordinator and every participant. With `preactivation` the
/// gradient is taken with respect to the final activation's input.
JointGrads joint_backward(const VFLSystem& system, const JointPass& pass, const Matrix& grad, bool preactivation,
                          bool want_params, bool want_inputs);

struct TrainConfig {
  int epochs = 30;
  double lr = 0.05;
  int batch = 64;
  double momentum = 0.9;
  uint64_t seed = 1;
};

struct TrainResult {
  VFLSystem system;
  std::vector<double> loss_history;
};

/// Binary HeteroLR. With allow_multiclass, C > 2 labels train a softmax-headed linear model.
TrainResult train_heterolr(const Views& views, const std::vector<int>& labels, const TrainConfig& cfg,
                           const PartitionSpec& spec = {}, bool allow_multiclass = false);

struct SplitNNArch {
  /// Hidden and output widths of each participant's local MLP (input width implied).
  std::vector<std::vector<int>> local_widths;
  /// Hidden widths of the top model (class-count output appended).
  std::vector<int> top_hidden;
};

SplitNNArch default_splitnn_arch(size_t participants, int local_hidden = 128, int local_out = 64, int top_hidden = 64);

TrainResult train_splitnn(const Views& views, const std::vector<int>& labels, int num_classes, const SplitNNArch& arch,
                          const TrainConfig& cfg, const PartitionSpec& spec = {});

/// Continues training an existing system in place.
std::vector<double> fit(VFLSystem& system, const Views& views, const std::vector<int>& labels, const TrainConfig& cfg);

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> auc_roc;
};

Metrics evaluate(const VFLSystem& system, const Views& views, const std::vector<int>& labels);
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

enum class PayloadKind {
  raw_features,
  local_output,
  noised_local_output,
  aggregate,
  prediction,
  gradient,
  saliency_score,
  attack_rate,
  ratio,
  label,
};

std::string to_string(PayloadKind kind);

/// One hop of the simulated protocol. `owner` is the participant whose data the payload derives from (-1: none).
struct ProtocolMessage {
  std::string step;
  std::string sender;
  std::string receiver;
  PayloadKind kind = PayloadKind::local_output;
  size_t payload_size = 0;
  int owner = -1;
};

std::string party_name(size_t participant);
inline constexpr const char* kCoordinatorName = "C";
inline constexpr const char* kBroadcastName = "*";

struct TracedRun {
  Matrix output;
  std::vector<ProtocolMessage> messages;
};

TracedRun run_with_trace(const VFLSystem& system, const Views& views);

struct AuditReport {
  bool ok = true;
  std::vector<std::string> violations;
};

/// Raw features may never leave their owner.
AuditReport audit(const std::vector<ProtocolMessage>& messages);

std::string to_jsonl(const std::vector<ProtocolMessage>& messages);

/// Joint inference with every participant except `attacker` pinned to cached rows.
class FixedPeers {
 public:
  FixedPeers(const VFLSystem& system, const Views& views, size_t attacker);
  /// From precomputed local outputs; the attacker's slot is ignored.
  static FixedPeers from_locals(const VFLSystem& system, const std::vector<Matrix>& peer_locals, size_t attacker);

  const VFLSystem& system() const { return *system_; }
  size_t attacker() const { return attacker_; }
  Eigen::Index rows() const { return base_.rows(); }
  /// Coordinator input with the attacker's slot zeroed.
  const Matrix& base() const { return base_; }

  Matrix outputs(const Vector& x_attacker) const;
  Matrix outputs_from_local(const Matrix& l_attacker) const;
  std::vector<int> predictions(const Vector& x_attacker) const;
  double fraction_with_label(const Vector& x_attacker, int label) const;
  /// Most frequent predicted label and its frequency.
  std::pair<int, double> majority(const Vector& x_attacker) const;
  FixedPeers subset(const std::vector<int>& idx) const;

 private:
  FixedPeers() = default;
  const VFLSystem* system_ = nullptr;
  size_t attacker_ = 0;
  Matrix base_;
};

}  // namespace vflkit
