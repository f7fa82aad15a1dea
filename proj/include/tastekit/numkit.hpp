#pragma once

// Shared numerical plumbing: seeded randomness, small dense vectors and
// matrices, descriptive statistics and a deterministic parallel map.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace tastekit {

using Vec = std::vector<double>;
using Points = std::vector<Vec>;

// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Mat identity(std::size_t n);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
};

/// xoshiro256** seeded through splitmix64.
///
/// Draw conventions (kept stable so other implementations can reproduce
/// the streams):
///   uniform()    = (next() >> 11) * 2^-53, in [0, 1)
///   normal()     = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), two uniforms per draw
///   rademacher() = +1 if the top bit of next() is set, else -1
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next();
  double uniform();
  double normal();
  double rademacher();
  std::size_t uniform_index(std::size_t n);

  Vec normal_vec(std::size_t d);
  Vec rademacher_vec(std::size_t d);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

// Mixes (seed, stream, index) into an independent child seed. Used to give
// each sample its own probe stream so results do not depend on batching or
// thread count.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);
Vec add(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
Vec scaled(std::span<const double> a, double s);
// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);
Vec matvec(const Mat& m, std::span<const double> x);
Vec rotate2d(std::span<const double> v, double angle);
bool all_finite(std::span<const double> a);

// A Monte-Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Arithmetic mean and standard error (sample std with n-1 divisor over
/// sqrt(n)). Throws on fewer than two samples or non-finite input.
Estimate mean_and_stderr(std::span<const double> samples);

double mean(std::span<const double> samples);
/// Unbiased sample covariance (divisor n - 1).
double covariance(std::span<const double> a, std::span<const double> b);
double variance(std::span<const double> samples);

/// Lower order statistic at index ceil(level * n) - 1 of the ascending sort.
/// level must lie strictly inside (0, 1).
double empirical_quantile(std::span<const double> samples, double level);

// Worker count: TASTEKIT_THREADS if set and positive, else hardware
// concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
// write results by index, so output never depends on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace tastekit
