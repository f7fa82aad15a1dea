#include "tastekit/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tastekit/error.hpp"

namespace tastekit {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vec softmax(const Vec& z) {
  const double m = *std::max_element(z.begin(), z.end());
  Vec p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

std::string to_string(Head h) {
  switch (h) {
    case Head::linear: return "linear";
    case Head::sigmoid: return "sigmoid";
    case Head::softmax: return "softmax";
  }
  return "unknown";
}

Head head_from_string(const std::string& name) {
  if (name == "linear") return Head::linear;
  if (name == "sigmoid") return Head::sigmoid;
  if (name == "softmax") return Head::softmax;
  throw Error(ErrorKind::invalid_argument, "unknown head '" + name + "'");
}

MlpPredictor::MlpPredictor(Network backbone, Head head, ClassSelection selection)
    : net_(std::move(backbone)), head_(head), selection_(selection) {
  require(net_.input_dim() > 0, "predictor needs a non-empty network");
  if (head_ == Head::softmax)
    require(net_.output_dim() >= 2, "softmax head needs at least two logits");
  else
    require(net_.output_dim() == 1, "scalar head needs exactly one output");
  set_selection(selection);
}

void MlpPredictor::set_selection(ClassSelection s) {
  if (!s.use_argmax) require(s.pinned < net_.output_dim(), "pinned class out of range");
  selection_ = s;
}

MlpPredictor MlpPredictor::affine(const Vec& w, double b) {
  require(!w.empty(), "affine predictor needs weights");
  DenseLayer layer{Mat(1, w.size()), Vec{b}};
  layer.weight.data = w;
  return MlpPredictor(Network({layer}, Activation::relu), Head::linear);
}

MlpPredictor MlpPredictor::random(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                  Activation activation, Head head, std::size_t outputs, Rng& rng) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(outputs);
  return MlpPredictor(Network(widths, activation, rng), head);
}

std::string MlpPredictor::id() const {
  std::ostringstream os;
  os << "mlp(";
  const auto w = net_.widths();
  for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "-" : "") << w[i];
  os << "," << to_string(net_.activation()) << "," << to_string(head_);
  if (head_ == Head::softmax)
    os << ",class=" << (selection_.use_argmax ? std::string("argmax") : std::to_string(selection_.pinned));
  os << ")";
  return os.str();
}

std::size_t MlpPredictor::selected_class(const Vec& logits) const {
  if (head_ != Head::softmax) return 0;
  if (!selection_.use_argmax) return selection_.pinned;
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

bool MlpPredictor::piecewise_affine() const {
  return net_.hidden_layers() == 0 || net_.activation() == Activation::relu;
}

Vec MlpPredictor::outputs(const Vec& x) const {
  const Vec z = net_.forward(x);
  switch (head_) {
    case Head::linear: return z;
    case Head::sigmoid: return {sigmoid(z[0])};
    case Head::softmax: return softmax(z);
  }
  return z;
}

double MlpPredictor::value(const Vec& x) const {
  const Vec z = net_.forward(x);
  switch (head_) {
    case Head::linear: return z[0];
    case Head::sigmoid: return sigmoid(z[0]);
    case Head::softmax: return softmax(z)[selected_class(z)];
  }
  return 0.0;
}

Vec MlpPredictor::gradient(const Vec& x) const {
  const auto tape = net_.record(x);
  const Vec& z = tape.output;
  Vec upstream(z.size(), 0.0);
  switch (head_) {
    case Head::linear:
      upstream[0] = 1.0;
      break;
    case Head::sigmoid: {
      const double s = sigmoid(z[0]);
      upstream[0] = s * (1.0 - s);
      break;
    }
    case Head::softmax: {
      const Vec p = softmax(z);
      const std::size_t k = selected_class(z);
      for (std::size_t i = 0; i < z.size(); ++i) upstream[i] = p[k] * ((i == k ? 1.0 : 0.0) - p[i]);
      break;
    }
  }
  return net_.input_vjp(tape, upstream);
}

double MlpPredictor::head_second(const Jet& z, std::size_t k) const {
  switch (head_) {
    case Head::linear:
      return z.second[0];
    case Head::sigmoid: {
      const double s = sigmoid(z.value[0]);
      const double s1 = s * (1.0 - s);
      const double s2 = s1 * (1.0 - 2.0 * s);
      return s2 * z.first[0] * z.first[0] + s1 * z.second[0];
    }
    case Head::softmax: {
      // sigma_k = exp(u), u = z_k - logsumexp(z).
      const Vec p = softmax(z.value);
      double m1 = 0.0, m2 = 0.0, msq = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m1 += p[j] * z.first[j];
        m2 += p[j] * z.second[j];
        msq += p[j] * z.first[j] * z.first[j];
      }
      const double u1 = z.first[k] - m1;
      const double u2 = z.second[k] - (m2 + msq - m1 * m1);
      return p[k] * (u2 + u1 * u1);
    }
  }
  return 0.0;
}

Vec MlpPredictor::hessian_diagonal(const Vec& x) const {
  require(x.size() == dimension(), "dimension mismatch");
  const std::size_t k = selected_class(net_.forward(x));
  Vec diag(x.size());
  Vec e(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = 1.0;
    diag[i] = head_second(net_.jet(x, e), k);
    e[i] = 0.0;
  }
  return diag;
}

double MlpPredictor::curvature_along(const Vec& x, const Vec& v) const {
  const Jet j = net_.jet(x, v);
  return head_second(j, selected_class(j.value));
}

QuadraticPredictor::QuadraticPredictor(Mat a, Vec b, double c)
    : a_(std::move(a)), b_(std::move(b)), c_(c) {
  require(a_.rows == b_.size() && a_.cols == b_.size() && !b_.empty(),
          "quadratic predictor shape mismatch");
}

QuadraticPredictor QuadraticPredictor::squared_norm(std::size_t d) {
  return QuadraticPredictor(Mat::identity(d), Vec(d, 0.0), 0.0);
}

double QuadraticPredictor::value(const Vec& x) const {
  return dot(x, matvec(a_, x)) + dot(b_, x) + c_;
}

Vec QuadraticPredictor::gradient(const Vec& x) const {
  require(x.size() == dimension(), "dimension mismatch");
  Vec g = b_;
  for (std::size_t i = 0; i < a_.rows; ++i)
    for (std::size_t j = 0; j < a_.cols; ++j) g[i] += (a_(i, j) + a_(j, i)) * x[j];
  return g;
}

Vec QuadraticPredictor::hessian_diagonal(const Vec& x) const {
  require(x.size() == dimension(), "dimension mismatch");
  Vec diag(x.size());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = 2.0 * a_(i, i);
  return diag;
}

double QuadraticPredictor::curvature_along(const Vec& x, const Vec& v) const {
  require(x.size() == dimension() && v.size() == dimension(), "dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a_.rows; ++i)
    for (std::size_t j = 0; j < a_.cols; ++j) s += v[i] * (a_(i, j) + a_(j, i)) * v[j];
  return s;
}

Vec input_gradient(const Predictor& f, const Vec& x) { return f.gradient(x); }

double input_laplacian_exact(const Predictor& f, const Vec& x) {
  require(f.dimension() <= kExactLaplacianMaxDim, "use hutchinson route");
  const Vec diag = f.hessian_diagonal(x);
  return std::accumulate(diag.begin(), diag.end(), 0.0);
}

Mat softmax_hessian(const Vec& sigma, std::size_t k) {
  const std::size_t n = sigma.size();
  Mat h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dki = (k == i) ? 1.0 : 0.0;
      const double dkj = (k == j) ? 1.0 : 0.0;
      const double dij = (i == j) ? 1.0 : 0.0;
      h(i, j) = sigma[k] * ((dki - sigma[i]) * (dkj - sigma[j]) - dij * sigma[i] + sigma[i] * sigma[j]);
    }
  }
  return h;
}

double input_laplacian_softmax_shortcut(const MlpPredictor& f, const Vec& x, std::size_t k,
                                        std::optional<std::size_t> top_k) {
  require(f.head() == Head::softmax, "shortcut requires a softmax head");
  require(f.piecewise_affine(), "shortcut requires piecewise-affine backbone");
  const Vec z = f.logits(x);
  require(k < z.size(), "class index out of range");
  const Mat jac = f.network().input_jacobian(x);
  const Mat h = softmax_hessian(softmax(z), k);

  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (top_k && *top_k < z.size()) {
    require(*top_k >= 1, "top-k truncation must keep at least one logit");
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    idx.resize(*top_k);
  }
  double lap = 0.0;
  for (std::size_t i : idx)
    for (std::size_t j : idx) lap += h(i, j) * dot(jac.row(i), jac.row(j));
  return lap;
}

namespace {

// Per-sample loss and its gradient w.r.t. the logits.
double sample_loss(const MlpPredictor& model, const Vec& z, double target, Loss loss, Vec* grad) {
  if (loss == Loss::mse) {
    const double r = z[0] - target;
    if (grad) *grad = {2.0 * r};
    return r * r;
  }
  if (model.head() == Head::sigmoid) {
    const double s = sigmoid(z[0]);
    if (grad) *grad = {s - target};
    const double softplus = z[0] > 0 ? z[0] + std::log1p(std::exp(-z[0])) : std::log1p(std::exp(z[0]));
    return softplus - target * z[0];
  }
  const auto y = static_cast<std::size_t>(target);
  require(target >= 0 && y < z.size() && static_cast<double>(y) == target,
          "class label out of range", ErrorKind::data);
  const Vec p = softmax(z);
  if (grad) {
    *grad = p;
    (*grad)[y] -= 1.0;
  }
  return -std::log(std::max(p[y], 1e-300));
}

void check_compatible(const MlpPredictor& model, Loss loss) {
  if (loss == Loss::mse)
    require(model.head() == Head::linear, "mse loss needs a linear head");
  else
    require(model.head() != Head::linear, "cross-entropy loss needs a sigmoid or softmax head");
}

}  // namespace

double mean_loss(const MlpPredictor& model, const Dataset& data, Loss loss) {
  check_compatible(model, loss);
  require(!data.inputs.empty(), "dataset is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < data.inputs.size(); ++i)
    total += sample_loss(model, model.logits(data.inputs[i]), data.targets[i], loss, nullptr);
  return total / static_cast<double>(data.inputs.size());
}

TrainResult train(MlpPredictor model, const Dataset& data, const TrainConfig& config) {
  require(!data.inputs.empty(), "dataset is empty");
  require(data.inputs.size() == data.targets.size(), "inputs and targets differ in length");
  require(config.epochs >= 1, "epochs must be at least 1");
  require(config.batch_size >= 1, "batch size must be at least 1");
  check_compatible(model, config.loss);
  for (const auto& x : data.inputs) {
    require(x.size() == model.dimension(), "dimension mismatch", ErrorKind::data);
    require(all_finite(x), "non-finite input", ErrorKind::data);
  }

  std::vector<std::string> warnings;
  if (std::all_of(data.inputs.begin(), data.inputs.end(),
                  [&](const Vec& x) { return x == data.inputs.front(); }))
    warnings.emplace_back("degenerate data");

  Rng rng(config.seed);
  Network& net = model.network();
  Optimizer optimizer(config.optimizer, net.parameter_count());
  Vec params = net.parameters();
  Vec grad(params.size());
  std::vector<std::size_t> order(data.inputs.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> history{mean_loss(model, data, config.loss)};
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto tape = net.record(data.inputs[order[b]]);
        Vec upstream;
        sample_loss(model, tape.output, data.targets[order[b]], config.loss, &upstream);
        for (auto& u : upstream) u *= scale;
        net.backward(tape, upstream, grad);
      }
      optimizer.step(params, grad);
      net.set_parameters(params);
    }
    const double loss = mean_loss(model, data, config.loss);
    if (!std::isfinite(loss)) throw Error(ErrorKind::numerical, "training diverged");
    history.push_back(loss);
  }
  return TrainResult{std::move(model), std::move(history), std::move(warnings)};
}

}  // namespace tastekit
