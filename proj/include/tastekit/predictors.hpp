#pragma once

// Scalar test functions f: R^d -> R with exact first and second input
// derivatives. MlpPredictor is the deployed-model stand-in; QuadraticPredictor
// is a closed-form test function used in checks.

#include <optional>
#include <string>
#include <vector>

#include "tastekit/network.hpp"
#include "tastekit/numkit.hpp"

namespace tastekit {

// Largest input dimension for which the exact Laplacian route is allowed.
inline constexpr std::size_t kExactLaplacianMaxDim = 64;

class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::string id() const = 0;

  virtual double value(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  // Diagonal of the input Hessian, exact.
  virtual Vec hessian_diagonal(const Vec& x) const = 0;
  // v^T H(x) v, exact.
  virtual double curvature_along(const Vec& x, const Vec& v) const = 0;
};

enum class Head { linear, sigmoid, softmax };

std::string to_string(Head h);
Head head_from_string(const std::string& name);

// Which softmax output feeds scalar diagnostics.
struct ClassSelection {
  bool use_argmax = true;
  std::size_t pinned = 0;

  static ClassSelection argmax() { return {}; }
  static ClassSelection pin(std::size_t k) { return {false, k}; }
};

class MlpPredictor final : public Predictor {
 public:
  MlpPredictor(Network backbone, Head head, ClassSelection selection = ClassSelection::argmax());

  // f(x) = w.x + b, no hidden layers.
  static MlpPredictor affine(const Vec& w, double b);
  // Fresh network with glorot-uniform weights.
  static MlpPredictor random(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             Activation activation, Head head, std::size_t outputs, Rng& rng);

  std::size_t dimension() const override { return net_.input_dim(); }
  std::string id() const override;

  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec hessian_diagonal(const Vec& x) const override;
  double curvature_along(const Vec& x, const Vec& v) const override;

  const Network& network() const noexcept { return net_; }
  Network& network() noexcept { return net_; }
  Head head() const noexcept { return head_; }
  const ClassSelection& selection() const noexcept { return selection_; }
  void set_selection(ClassSelection s);

  Vec logits(const Vec& x) const { return net_.forward(x); }
  // Head outputs: the scalar for linear/sigmoid heads, class probabilities
  // for softmax.
  Vec outputs(const Vec& x) const;
  std::size_t selected_class(const Vec& logits) const;

  // True when every hidden layer is ReLU (or there are none): the logits
  // are piecewise affine in x.
  bool piecewise_affine() const;

 private:
  double head_second(const Jet& z, std::size_t k) const;

  Network net_;
  Head head_;
  ClassSelection selection_;
};

// f(x) = x^T A x + b.x + c.
class QuadraticPredictor final : public Predictor {
 public:
  QuadraticPredictor(Mat a, Vec b, double c);
  static QuadraticPredictor squared_norm(std::size_t d);

  std::size_t dimension() const override { return b_.size(); }
  std::string id() const override { return "quadratic"; }

  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Vec hessian_diagonal(const Vec& x) const override;
  double curvature_along(const Vec& x, const Vec& v) const override;

 private:
  Mat a_;
  Vec b_;
  double c_;
};

Vec input_gradient(const Predictor& f, const Vec& x);

// Trace of the exact input Hessian. Throws "use hutchinson route" above
// kExactLaplacianMaxDim.
double input_laplacian_exact(const Predictor& f, const Vec& x);

/// Laplacian of softmax output k over a piecewise-affine backbone:
///   sum_{i,j} d^2 sigma_k / dz_i dz_j * <grad z_i, grad z_j>
/// using only logit gradients. With top_k set, i and j range over the
/// top_k largest logits only.
double input_laplacian_softmax_shortcut(const MlpPredictor& f, const Vec& x, std::size_t k,
                                        std::optional<std::size_t> top_k = std::nullopt);

// d^2 sigma_k / dz_i dz_j for the softmax at probabilities sigma.
Mat softmax_hessian(const Vec& sigma, std::size_t k);

struct Dataset {
  Points inputs;
  Vec targets;  // regression value or class index
};

enum class Loss { mse, cross_entropy };

struct TrainConfig {
  OptimizerConfig optimizer{OptimizerConfig::Kind::adam, 1e-3};
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  Loss loss = Loss::mse;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpPredictor model;
  std::vector<double> loss_history;  // entry 0 is the loss before training
  std::vector<std::string> warnings;
};

// Minibatch training. mse needs a linear head; cross_entropy a sigmoid
// (targets 0/1) or softmax (targets are class indices) head.
TrainResult train(MlpPredictor model, const Dataset& data, const TrainConfig& config);

double mean_loss(const MlpPredictor& model, const Dataset& data, Loss loss);

}  // namespace tastekit
