#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vflkit/matrix.hpp"

namespace vflkit {

enum class LayerKind { linear, relu, sigmoid, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

struct Layer {
  LayerKind kind = LayerKind::linear;
  int in_dim = 0;
  int out_dim = 0;
  Matrix weights;  // out_dim x in_dim, linear only
  Vector bias;     // out_dim, linear only

  static Layer linear(Matrix weights, Vector bias);
  static Layer activation(LayerKind kind, int dim);
  bool has_params() const { return kind == LayerKind::linear; }
};

class LocalModel {
 public:
  LocalModel() = default;
  explicit LocalModel(std::vector<Layer> layers);

  int input_dim() const;
  int output_dim() const;
  size_t num_layers() const { return layers_.size(); }
  const Layer& layer(size_t i) const { return layers_[i]; }
  Layer& layer(size_t i) { return layers_[i]; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Throws std::invalid_argument when shapes do not chain.
  void validate() const;

 private:
  std::vector<Layer> layers_;
};

/// Per-layer activations for one batch: inputs[i] feeds layer i, outputs[i] leaves it.
struct ForwardTrace {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
  size_t size() const { return inputs.size(); }
};

/// Gradients for every layer; entries of activation layers stay empty.
struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> bias;

  static ParamGrads zeros_like(const LocalModel& model);
  void add(const ParamGrads& other, double scale = 1.0);
};

struct BackwardResult {
  ParamGrads params;
  Matrix input_grad;
};

Matrix apply_layer(const Layer& layer, const Matrix& x);

Matrix forward(const LocalModel& model, const Matrix& input);
Matrix forward(const LocalModel& model, const Matrix& input, ForwardTrace& trace);

/// Backpropagates `output_grad` through layers [0, upto). With upto < num_layers the
/// gradient is taken to be with respect to the input of layer `upto`.
BackwardResult backward(const LocalModel& model, const ForwardTrace& trace,
                        const Matrix& output_grad, bool want_params = true,
                        size_t upto = static_cast<size_t>(-1));

struct GradCheckReport {
  bool pass = true;
  double max_rel_error = 0.0;
  int checked = 0;
  int indeterminate = 0;  // entries near a ReLU kink, excluded from failures
  int failures = 0;
};

GradCheckReport grad_check(const LocalModel& model, const Matrix& input, double step, double tol);

/// Momentum SGD: v = momentum * v + g; p -= lr * v. Velocity persists across calls.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum);
  void step(LocalModel& model, const ParamGrads& grads);
  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  ParamGrads velocity_;
  bool initialized_ = false;
};

/// One-shot update without persistent velocity.
void sgd_step(LocalModel& model, const ParamGrads& grads, double lr);

/// Uniform init in +-sqrt(6/(in+out)).
Layer xavier_linear(int in_dim, int out_dim, std::mt19937_64& rng);

/// Linear layers of the given widths with `hidden` activations between them and an
/// optional final activation.
LocalModel make_mlp(const std::vector<int>& dims, std::mt19937_64& rng,
                    LayerKind hidden = LayerKind::relu, bool final_activation = false,
                    LayerKind final_kind = LayerKind::relu);

}  // namespace vflkit
