#include "tastekit/network.hpp"

#include <cmath>

#include "tastekit/error.hpp"

namespace tastekit {

namespace {

struct ActivationDerivs {
  double value;
  double first;
  double second;
};

ActivationDerivs evaluate(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      // Kinks use the zero subgradient.
      return x > 0.0 ? ActivationDerivs{x, 1.0, 0.0} : ActivationDerivs{0.0, 0.0, 0.0};
    case Activation::tanh: {
      const double t = std::tanh(x);
      const double d = 1.0 - t * t;
      return {t, d, -2.0 * t * d};
    }
    case Activation::softplus: {
      const double value = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      const double s = 1.0 / (1.0 + std::exp(-x));
      return {value, s, s * (1.0 - s)};
    }
  }
  return {0.0, 0.0, 0.0};
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  throw Error(ErrorKind::invalid_argument, "unknown activation '" + name + "'");
}

Network::Network(const std::vector<std::size_t>& widths, Activation activation, Rng& rng)
    : activation_(activation) {
  require(widths.size() >= 2, "network needs at least input and output widths");
  for (std::size_t w : widths) require(w > 0, "layer widths must be positive");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l];
    const std::size_t fan_out = widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Mat(fan_out, fan_in), Vec(fan_out, 0.0)};
    for (auto& w : layer.weight.data) w = (2.0 * rng.uniform() - 1.0) * limit;
    layers_.push_back(std::move(layer));
  }
}

Network::Network(std::vector<DenseLayer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  require(!layers_.empty(), "network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    require(layers_[l].bias.size() == layers_[l].weight.rows, "bias size mismatch");
    require(layers_[l].weight.data.size() == layers_[l].weight.rows * layers_[l].weight.cols,
            "weight size mismatch");
    if (l > 0)
      require(layers_[l].weight.cols == layers_[l - 1].weight.rows, "layer shape mismatch");
  }
}

std::size_t Network::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols; }
std::size_t Network::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows; }

std::vector<std::size_t> Network::widths() const {
  std::vector<std::size_t> w;
  if (layers_.empty()) return w;
  w.push_back(input_dim());
  for (const auto& layer : layers_) w.push_back(layer.weight.rows);
  return w;
}

Vec Network::forward(const Vec& x) const {
  require(x.size() == input_dim(), "dimension mismatch");
  Vec a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vec z = matvec(layers_[l].weight, a);
    axpy(1.0, layers_[l].bias, z);
    if (l + 1 < layers_.size())
      for (auto& v : z) v = evaluate(activation_, v).value;
    a = std::move(z);
  }
  return a;
}

Network::Tape Network::record(const Vec& x) const {
  require(x.size() == input_dim(), "dimension mismatch");
  Tape tape;
  Vec a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    tape.inputs.push_back(a);
    Vec z = matvec(layers_[l].weight, a);
    axpy(1.0, layers_[l].bias, z);
    tape.preactivations.push_back(z);
    if (l + 1 < layers_.size())
      for (auto& v : z) v = evaluate(activation_, v).value;
    a = std::move(z);
  }
  tape.output = std::move(a);
  return tape;
}

Vec Network::backward(const Tape& tape, const Vec& upstream, Vec& param_grad) const {
  require(upstream.size() == output_dim(), "dimension mismatch");
  if (param_grad.size() != parameter_count()) param_grad.assign(parameter_count(), 0.0);

  std::vector<std::size_t> offsets(layers_.size());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = offset;
    offset += layers_[l].weight.data.size() + layers_[l].bias.size();
  }

  Vec grad = upstream;  // d loss / d preactivation of the current layer
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const Vec& in = tape.inputs[l];
    double* w_grad = param_grad.data() + offsets[l];
    double* b_grad = w_grad + layer.weight.data.size();
    for (std::size_t i = 0; i < layer.weight.rows; ++i) {
      const double g = grad[i];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < layer.weight.cols; ++j) w_grad[i * layer.weight.cols + j] += g * in[j];
      b_grad[i] += g;
    }
    Vec down(layer.weight.cols, 0.0);
    for (std::size_t i = 0; i < layer.weight.rows; ++i) {
      const double g = grad[i];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < layer.weight.cols; ++j) down[j] += layer.weight(i, j) * g;
    }
    if (l > 0) {
      const Vec& pre = tape.preactivations[l - 1];
      for (std::size_t j = 0; j < down.size(); ++j) down[j] *= evaluate(activation_, pre[j]).first;
    }
    grad = std::move(down);
  }
  return grad;
}

Vec Network::input_vjp(const Tape& tape, const Vec& upstream) const {
  require(upstream.size() == output_dim(), "dimension mismatch");
  Vec grad = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    Vec down(layer.weight.cols, 0.0);
    for (std::size_t i = 0; i < layer.weight.rows; ++i) {
      const double g = grad[i];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < layer.weight.cols; ++j) down[j] += layer.weight(i, j) * g;
    }
    if (l > 0) {
      const Vec& pre = tape.preactivations[l - 1];
      for (std::size_t j = 0; j < down.size(); ++j) down[j] *= evaluate(activation_, pre[j]).first;
    }
    grad = std::move(down);
  }
  return grad;
}

Jet Network::jet(const Vec& x, const Vec& direction) const {
  require(x.size() == input_dim() && direction.size() == input_dim(), "dimension mismatch");
  Jet j{x, direction, Vec(x.size(), 0.0)};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Jet out{matvec(layer.weight, j.value), matvec(layer.weight, j.first),
            matvec(layer.weight, j.second)};
    axpy(1.0, layer.bias, out.value);
    if (l + 1 < layers_.size()) {
      for (std::size_t i = 0; i < out.value.size(); ++i) {
        const auto d = evaluate(activation_, out.value[i]);
        const double t = out.first[i];
        out.value[i] = d.value;
        out.first[i] = d.first * t;
        out.second[i] = d.second * t * t + d.first * out.second[i];
      }
    }
    j = std::move(out);
  }
  return j;
}

Mat Network::input_jacobian(const Vec& x) const {
  const std::size_t d = input_dim();
  Mat jac(output_dim(), d);
  Vec e(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    e[c] = 1.0;
    const Jet j = jet(x, e);
    for (std::size_t r = 0; r < jac.rows; ++r) jac(r, c) = j.first[r];
    e[c] = 0.0;
  }
  return jac;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.data.size() + layer.bias.size();
  return n;
}

Vec Network::parameters() const {
  Vec flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    flat.insert(flat.end(), layer.weight.data.begin(), layer.weight.data.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void Network::set_parameters(const Vec& flat) {
  require(flat.size() == parameter_count(), "parameter count mismatch");
  std::size_t k = 0;
  for (auto& layer : layers_) {
    for (auto& w : layer.weight.data) w = flat[k++];
    for (auto& b : layer.bias) b = flat[k++];
  }
}

Optimizer::Optimizer(OptimizerConfig config, std::size_t parameter_count)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {
  require(config.learning_rate > 0.0, "learning rate must be positive");
}

void Optimizer::step(Vec& params, const Vec& grad) {
  require(params.size() == grad.size() && grad.size() == m_.size(), "optimizer size mismatch");
  if (config_.kind == OptimizerConfig::Kind::sgd) {
    axpy(-config_.learning_rate, grad, params);
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

}  // namespace tastekit
