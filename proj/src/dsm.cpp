#include <algorithm>
#include <cmath>
#include <numeric>

#include "tastekit/error.hpp"
#include "tastekit/score_models.hpp"

namespace tastekit {

namespace {

// Mean DSM loss over the dataset with one fixed noise draw per sample.
double dsm_loss(const Network& net, const Points& samples, const Points& noise, double sigma) {
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Vec noisy = samples[i];
    axpy(sigma, noise[i], noisy);
    const Vec out = net.forward(noisy);
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double r = out[j] + noise[i][j] / sigma;
      total += r * r;
    }
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

DsmResult train_dsm_score(const Points& samples, const DsmConfig& config) {
  require(samples.size() >= 100, "denoising score matching needs at least 100 samples");
  require(config.noise_std > 0.0 && std::isfinite(config.noise_std), "noise std must be positive");
  require(config.epochs >= 1, "epochs must be at least 1");
  require(config.batch_size >= 1, "batch size must be at least 1");
  const std::size_t d = samples.front().size();
  for (const auto& x : samples) {
    require(x.size() == d, "dimension mismatch", ErrorKind::data);
    require(all_finite(x), "non-finite input", ErrorKind::data);
  }

  std::vector<std::string> warnings;
  const bool degenerate = std::all_of(samples.begin(), samples.end(),
                                      [&](const Vec& x) { return x == samples.front(); });
  if (degenerate) warnings.emplace_back("degenerate data");

  Rng rng(config.seed);
  std::vector<std::size_t> widths{d};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(d);
  Network net(widths, config.activation, rng);
  Optimizer optimizer(config.optimizer, net.parameter_count());

  // Fixed evaluation noise so logged losses are comparable across epochs.
  Rng eval_rng(derive_seed(config.seed, 1, 0));
  Points eval_noise;
  eval_noise.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) eval_noise.push_back(eval_rng.normal_vec(d));

  const double sigma = config.noise_std;
  std::vector<double> history{dsm_loss(net, samples, eval_noise, sigma)};
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Vec params = net.parameters();
  Vec grad(params.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        Vec z = rng.normal_vec(d);
        // z and -z together: the z/sigma target noise cancels to leading order.
        const int draws = config.antithetic ? 2 : 1;
        for (int k = 0; k < draws; ++k) {
          if (k == 1) z = scaled(z, -1.0);
          Vec noisy = samples[order[b]];
          axpy(sigma, z, noisy);
          const auto tape = net.record(noisy);
          Vec upstream(d);
          for (std::size_t j = 0; j < d; ++j)
            upstream[j] = 2.0 * scale / draws * (tape.output[j] + z[j] / sigma);
          net.backward(tape, upstream, grad);
        }
      }
      optimizer.step(params, grad);
      net.set_parameters(params);
    }
    const double loss = dsm_loss(net, samples, eval_noise, sigma);
    if (!std::isfinite(loss)) throw Error(ErrorKind::numerical, "training diverged");
    history.push_back(loss);
  }

  std::map<std::string, double> metadata{
      {"epochs", static_cast<double>(config.epochs)},
      {"batch_size", static_cast<double>(config.batch_size)},
      {"learning_rate", config.optimizer.learning_rate},
      {"seed", static_cast<double>(config.seed)},
      {"antithetic", config.antithetic ? 1.0 : 0.0},
      {"initial_loss", history.front()},
      {"final_loss", history.back()},
      {"n_samples", static_cast<double>(samples.size())},
  };
  return DsmResult{ScoreModel::learned(std::move(net), sigma, std::move(metadata)),
                   std::move(history), std::move(warnings)};
}

}  // namespace tastekit
