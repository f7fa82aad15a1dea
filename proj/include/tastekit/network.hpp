#pragma once

// Fully connected network with exact input derivatives.
//
// Hidden layers apply the chosen activation; the last layer is affine.
// Besides the usual forward/backward passes, the network propagates
// second-order jets along an input direction v, which yields the exact
// directional derivatives d/dt z(x + t v) and d^2/dt^2 z(x + t v) at t = 0.

#include <string>
#include <vector>

#include "tastekit/numkit.hpp"

namespace tastekit {

enum class Activation { relu, tanh, softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

// Value, first and second directional derivative of a vector quantity.
struct Jet {
  Vec value;
  Vec first;
  Vec second;
};

class Network {
 public:
  Network() = default;
  // widths = {input, hidden..., output}; glorot-uniform weights, zero biases.
  Network(const std::vector<std::size_t>& widths, Activation activation, Rng& rng);
  Network(std::vector<DenseLayer> layers, Activation activation);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<std::size_t> widths() const;
  Activation activation() const noexcept { return activation_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::size_t hidden_layers() const { return layers_.empty() ? 0 : layers_.size() - 1; }

  Vec forward(const Vec& x) const;

  // Activations of every layer, kept for the backward pass.
  struct Tape {
    std::vector<Vec> inputs;       // input to layer l
    std::vector<Vec> preactivations;  // affine output of layer l
    Vec output;
  };
  Tape record(const Vec& x) const;

  // Vector-Jacobian product dz/dx^T * upstream.
  Vec input_vjp(const Tape& tape, const Vec& upstream) const;

  // Accumulates dL/dtheta (flat, canonical order) given dL/dz; returns dL/dx.
  Vec backward(const Tape& tape, const Vec& upstream, Vec& param_grad) const;

  Jet jet(const Vec& x, const Vec& direction) const;

  // Jacobian of the outputs w.r.t. the input, output_dim x input_dim.
  Mat input_jacobian(const Vec& x) const;

  // Flat parameter view: for each layer, weights row-major then bias.
  std::size_t parameter_count() const;
  Vec parameters() const;
  void set_parameters(const Vec& flat);

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::tanh;
};

// Adam / SGD update on a flat parameter vector.
struct OptimizerConfig {
  enum class Kind { sgd, adam } kind = Kind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::size_t parameter_count);
  void step(Vec& params, const Vec& grad);

 private:
  OptimizerConfig config_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

}  // namespace tastekit
