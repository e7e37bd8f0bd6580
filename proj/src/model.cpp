#include "vflkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vflkit {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "linear") return LayerKind::linear;
  if (s == "relu") return LayerKind::relu;
  if (s == "sigmoid") return LayerKind::sigmoid;
  if (s == "softmax") return LayerKind::softmax;
  throw std::invalid_argument("unknown layer kind: " + s);
}

Layer Layer::linear(Matrix weights, Vector bias) {
  if (bias.size() != weights.rows()) throw std::invalid_argument("linear layer: bias/weight mismatch");
  require_finite(weights, "linear layer weights");
  require_finite(bias.transpose(), "linear layer bias");
  Layer l;
  l.kind = LayerKind::linear;
  l.in_dim = static_cast<int>(weights.cols());
  l.out_dim = static_cast<int>(weights.rows());
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::activation(LayerKind kind, int dim) {
  if (kind == LayerKind::linear) throw std::invalid_argument("activation layer cannot be linear");
  if (dim <= 0) throw std::invalid_argument("activation layer needs positive dim");
  Layer l;
  l.kind = kind;
  l.in_dim = dim;
  l.out_dim = dim;
  return l;
}

LocalModel::LocalModel(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

int LocalModel::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
int LocalModel::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }

void LocalModel::validate() const {
  if (layers_.empty()) throw std::invalid_argument("model has no layers");
  for (size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.in_dim <= 0 || l.out_dim <= 0) throw std::invalid_argument("layer with empty dimension");
    if (l.kind == LayerKind::linear) {
      if (l.weights.rows() != l.out_dim || l.weights.cols() != l.in_dim || l.bias.size() != l.out_dim)
        throw std::invalid_argument("linear layer " + std::to_string(i) + " has wrong parameter shape");
    } else if (l.in_dim != l.out_dim || l.weights.size() != 0 || l.bias.size() != 0) {
      throw std::invalid_argument("activation layer " + std::to_string(i) + " must be square and parameter-free");
    }
    if (i > 0 && layers_[i - 1].out_dim != l.in_dim)
      throw std::invalid_argument("layer " + std::to_string(i) + " input does not match previous output");
  }
}

ParamGrads ParamGrads::zeros_like(const LocalModel& model) {
  ParamGrads g;
  for (const auto& l : model.layers()) {
    if (l.has_params()) {
      g.weights.push_back(Matrix::Zero(l.out_dim, l.in_dim));
      g.bias.push_back(Vector::Zero(l.out_dim));
    } else {
      g.weights.emplace_back();
      g.bias.emplace_back();
    }
  }
  return g;
}

void ParamGrads::add(const ParamGrads& other, double scale) {
  if (other.weights.size() != weights.size()) throw std::invalid_argument("ParamGrads::add: layer count mismatch");
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].size() == 0) continue;
    weights[i] += scale * other.weights[i];
    bias[i] += scale * other.bias[i];
  }
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Matrix apply_layer(const Layer& layer, const Matrix& x) {
  switch (layer.kind) {
    case LayerKind::linear: {
      Matrix y = x * layer.weights.transpose();
      y.rowwise() += layer.bias.transpose();
      return y;
    }
    case LayerKind::relu:
      return x.cwiseMax(0.0);
    case LayerKind::sigmoid:
      return x.unaryExpr([](double z) { return sigmoid(z); });
    case LayerKind::softmax: {
      Matrix y(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        RowVector e = (x.row(i).array() - x.row(i).maxCoeff()).exp();
        y.row(i) = e / e.sum();
      }
      return y;
    }
  }
  throw std::logic_error("unreachable layer kind");
}

static void check_input(const LocalModel& model, const Matrix& input) {
  if (input.cols() != model.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(input.cols()) + " columns, model expects " +
                                std::to_string(model.input_dim()));
  require_finite(input, "forward input");
}

Matrix forward(const LocalModel& model, const Matrix& input) {
  check_input(model, input);
  Matrix x = input;
  for (const auto& l : model.layers()) x = apply_layer(l, x);
  return x;
}

Matrix forward(const LocalModel& model, const Matrix& input, ForwardTrace& trace) {
  check_input(model, input);
  trace.inputs.clear();
  trace.outputs.clear();
  trace.inputs.reserve(model.num_layers());
  trace.outputs.reserve(model.num_layers());
  Matrix x = input;
  for (const auto& l : model.layers()) {
    trace.inputs.push_back(x);
    x = apply_layer(l, x);
    trace.outputs.push_back(x);
  }
  return x;
}

BackwardResult backward(const LocalModel& model, const ForwardTrace& trace, const Matrix& output_grad,
                        bool want_params, size_t upto) {
  upto = std::min(upto, model.num_layers());
  if (trace.size() != model.num_layers()) throw std::invalid_argument("backward: trace does not match model");
  if (upto == 0) return {ParamGrads::zeros_like(model), output_grad};
  const Matrix& top_out = upto == model.num_layers() ? trace.outputs.back() : trace.inputs[upto];
  if (output_grad.rows() != top_out.rows() || output_grad.cols() != top_out.cols())
    throw std::invalid_argument("backward: output_grad shape mismatch");

  BackwardResult res;
  if (want_params) res.params = ParamGrads::zeros_like(model);
  Matrix g = output_grad;
  for (size_t k = upto; k-- > 0;) {
    const Layer& l = model.layer(k);
    const Matrix& x = trace.inputs[k];
    const Matrix& y = trace.outputs[k];
    switch (l.kind) {
      case LayerKind::linear:
        if (want_params) {
          res.params.weights[k] = g.transpose() * x;
          res.params.bias[k] = g.colwise().sum().transpose();
        }
        g = g * l.weights;
        break;
      case LayerKind::relu:
        g = g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        break;
      case LayerKind::sigmoid:
        g = g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
        break;
      case LayerKind::softmax: {
        Vector dots = g.cwiseProduct(y).rowwise().sum();
        Matrix shifted = g;
        shifted.colwise() -= dots;
        g = y.cwiseProduct(shifted);
        break;
      }
    }
  }
  res.input_grad = std::move(g);
  return res;
}

namespace {

// Sign pattern of every ReLU pre-activation; a change between probes means a kink was crossed.
std::vector<bool> relu_signs(const LocalModel& model, const Matrix& input) {
  std::vector<bool> signs;
  Matrix x = input;
  for (const auto& l : model.layers()) {
    if (l.kind == LayerKind::relu)
      for (Eigen::Index i = 0; i < x.size(); ++i) signs.push_back(x.data()[i] > 0.0);
    x = apply_layer(l, x);
  }
  return signs;
}

double objective(const LocalModel& model, const Matrix& input, const Matrix& weights) {
  return forward(model, input).cwiseProduct(weights).sum();
}

}  // namespace

GradCheckReport grad_check(const LocalModel& model, const Matrix& input, double step, double tol) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport rep;
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> nd;
  ForwardTrace trace;
  Matrix out = forward(model, input, trace);
  Matrix w = out.unaryExpr([&](double) { return nd(rng); });
  BackwardResult an = backward(model, trace, w, true);
  std::vector<bool> base_signs = relu_signs(model, input);

  auto record = [&](double analytic, double numeric, bool kink) {
    if (kink) {
      ++rep.indeterminate;
      return;
    }
    ++rep.checked;
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    double rel = std::abs(analytic - numeric) / denom;
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    if (rel > tol) ++rep.failures;
  };

  Matrix x = input;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double orig = x.data()[i];
    x.data()[i] = orig + step;
    bool kink = relu_signs(model, x) != base_signs;
    double fp = objective(model, x, w);
    x.data()[i] = orig - step;
    kink = kink || relu_signs(model, x) != base_signs;
    double fm = objective(model, x, w);
    x.data()[i] = orig;
    record(an.input_grad.data()[i], (fp - fm) / (2 * step), kink);
  }

  LocalModel m = model;
  auto probe = [&](double& p, double analytic) {
    double orig = p;
    p = orig + step;
    bool kink = relu_signs(m, input) != base_signs;
    double fp = objective(m, input, w);
    p = orig - step;
    kink = kink || relu_signs(m, input) != base_signs;
    double fm = objective(m, input, w);
    p = orig;
    record(analytic, (fp - fm) / (2 * step), kink);
  };
  for (size_t k = 0; k < m.num_layers(); ++k) {
    Layer& l = m.layer(k);
    if (!l.has_params()) continue;
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) probe(l.weights.data()[i], an.params.weights[k].data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) probe(l.bias[i], an.params.bias[k][i]);
  }
  rep.pass = rep.failures == 0;
  return rep;
}

SgdOptimizer::SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0)) throw std::invalid_argument("sgd: lr must be positive");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("sgd: momentum must be in [0, 1)");
}

static void check_grad_shapes(const LocalModel& model, const ParamGrads& grads) {
  if (grads.weights.size() != model.num_layers() || grads.bias.size() != model.num_layers())
    throw std::invalid_argument("sgd: gradient layer count mismatch");
  for (size_t k = 0; k < model.num_layers(); ++k) {
    const Layer& l = model.layer(k);
    if (!l.has_params()) continue;
    if (grads.weights[k].rows() != l.weights.rows() || grads.weights[k].cols() != l.weights.cols() ||
        grads.bias[k].size() != l.bias.size())
      throw std::invalid_argument("sgd: gradient shape mismatch at layer " + std::to_string(k));
  }
}

void SgdOptimizer::step(LocalModel& model, const ParamGrads& grads) {
  check_grad_shapes(model, grads);
  if (!initialized_) {
    velocity_ = ParamGrads::zeros_like(model);
    initialized_ = true;
  }
  for (size_t k = 0; k < model.num_layers(); ++k) {
    Layer& l = model.layer(k);
    if (!l.has_params()) continue;
    velocity_.weights[k] = momentum_ * velocity_.weights[k] + grads.weights[k];
    velocity_.bias[k] = momentum_ * velocity_.bias[k] + grads.bias[k];
    l.weights -= lr_ * velocity_.weights[k];
    l.bias -= lr_ * velocity_.bias[k];
  }
}

void sgd_step(LocalModel& model, const ParamGrads& grads, double lr) {
  check_grad_shapes(model, grads);
  for (size_t k = 0; k < model.num_layers(); ++k) {
    Layer& l = model.layer(k);
    if (!l.has_params()) continue;
    l.weights -= lr * grads.weights[k];
    l.bias -= lr * grads.bias[k];
  }
}

Layer xavier_linear(int in_dim, int out_dim, std::mt19937_64& rng) {
  double a = std::sqrt(6.0 / (in_dim + out_dim));
  std::uniform_real_distribution<double> ud(-a, a);
  Matrix w(out_dim, in_dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = ud(rng);
  return Layer::linear(std::move(w), Vector::Zero(out_dim));
}

LocalModel make_mlp(const std::vector<int>& dims, std::mt19937_64& rng, LayerKind hidden, bool final_activation,
                    LayerKind final_kind) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  std::vector<Layer> layers;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.push_back(xavier_linear(dims[i], dims[i + 1], rng));
    bool last = i + 2 == dims.size();
    if (!last) layers.push_back(Layer::activation(hidden, dims[i + 1]));
    else if (final_activation) layers.push_back(Layer::activation(final_kind, dims[i + 1]));
  }
  return LocalModel(std::move(layers));
}

}  // namespace vflkit
