// Acceptance run: one PASS/FAIL line per criterion, with its runtime.
// Usage: acceptance [workdir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "tastekit/cli.hpp"
#include "tastekit/detector.hpp"
#include "tastekit/io.hpp"
#include "tastekit/shift_lab.hpp"
#include "tastekit/stein_core.hpp"

using namespace tastekit;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

fs::path g_work;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int tk(std::vector<std::string> args) {
  args.insert(args.begin(), "tastekit");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw std::runtime_error("tastekit exited " + std::to_string(code) + ": " + err.str());
  return code;
}

std::map<std::string, Vec> read_table(const fs::path& path) {
  const PointTable t = read_points_csv(path);
  std::map<std::string, Vec> cols;
  for (std::size_t j = 0; j < t.columns.size(); ++j)
    for (const auto& row : t.points) cols[t.columns[j]].push_back(row[j]);
  return cols;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_text(e.path());
  return files;
}

// Shared fixtures ------------------------------------------------------------

const ScoreModel kStd2 = ScoreModel::standard_normal(2);

MlpPredictor linear_f() { return MlpPredictor::affine({-1, 1}, 0); }

QuadraticPredictor quad_f() {
  Mat a(2, 2);
  a(0, 0) = 1.0, a(0, 1) = a(1, 0) = 0.5, a(1, 1) = -0.3;
  return QuadraticPredictor(a, {0.2, -0.1}, 0.0);
}

MlpPredictor tanh_f() {
  Rng rng(101);
  return MlpPredictor::random(2, {16, 16}, Activation::tanh, Head::linear, 1, rng);
}

MlpPredictor softmax_f() {
  Rng rng(102);
  auto m = MlpPredictor::random(2, {16}, Activation::tanh, Head::softmax, 3, rng);
  m.set_selection(ClassSelection::pin(1));
  return m;
}

ScoreModel mixture_score() {
  return ScoreModel::gaussian_mixture({0.3, 0.7}, {{-1, 0.5}, {1.5, -1}}, {0.5, 1.2});
}

ScoreModel tilted_score() {
  return ScoreModel::tilted(ScoreModel::isotropic_gaussian({0.5, 0}, 0.8), Potential::linear({1, -0.5}), 0.7);
}

struct Named {
  std::string name;
  const Predictor* f;
};

// Criteria --------------------------------------------------------------------

Outcome stein_identity() {
  const auto a = linear_f();
  const auto q = quad_f();
  const auto t = tanh_f();
  const auto s = softmax_f();
  const std::vector<Named> fs{{"linear", &a}, {"quadratic", &q}, {"tanh", &t}, {"softmax", &s}};
  const std::vector<std::pair<std::string, ScoreModel>> scores{
      {"std-normal", kStd2}, {"mixture", mixture_score()}, {"tilted", tilted_score()}};
  int ok = 0, total = 0;
  double worst = 0.0;
  std::uint64_t stream = 0;
  for (const auto& [sname, score] : scores) {
    const SamplableDistribution p(score);
    for (const auto& [fname, f] : fs) {
      Rng rng(derive_seed(1, stream++, 0));
      const Points xs = p.sample(100000, rng);
      const Estimate e = mean_and_stderr(stein_values(xs, *f, score, LaplacianRoute::exact(), 1, 0));
      const double z = std::abs(e.value) / e.std_error;
      worst = std::max(worst, z);
      ok += z < 3.0;
      ++total;
      if (z >= 3.0) std::cerr << "  stein identity off: " << fname << " / " << sname << " z=" << z << '\n';
    }
  }
  return {ok == total, fmt("%d/%d combinations within 3 stderr, worst |z| %.2f", ok, total, worst)};
}

Outcome projection_identity() {
  const auto a = linear_f();
  const auto q = quad_f();
  const auto t = tanh_f();
  const auto s = softmax_f();
  const std::vector<Named> fs{{"linear", &a}, {"quadratic", &q}, {"tanh", &t}, {"softmax", &s}};
  const SamplableDistribution p(kStd2);
  const SamplableDistribution pm(mixture_score());
  struct Pair {
    std::string name;
    const SamplableDistribution* p;
    SamplableDistribution q;
  };
  std::vector<Pair> pairs{
      {"mean-shift", &p, SamplableDistribution(ScoreModel::isotropic_gaussian({2, 0}, 1.0))},
      {"tilt", &p, SamplableDistribution(ScoreModel::tilted(kStd2, Potential::linear({0.6, -0.8}), 0.7))},
      {"mixture", &p, SamplableDistribution(ScoreModel::gaussian_mixture({0.7, 0.3}, {{0, 0}, {2, -1}}, {1, 0.5}))},
      {"translated-mixture", &pm, translated(pm, {0.5, 0.5})},
  };
  int ok = 0, total = 0;
  double worst = 0.0;
  std::uint64_t stream = 0;
  for (const auto& pr : pairs)
    for (const auto& [fname, f] : fs) {
      Rng rng(derive_seed(2, stream++, 0));
      const auto r = projection_identity_check(*f, pr.p->model(), pr.q, 40000, rng);
      worst = std::max(worst, std::abs(r.discrepancy));
      ok += r.passes();
      ++total;
      if (!r.passes()) std::cerr << "  projection off: " << fname << " / " << pr.name << " z=" << r.discrepancy << '\n';
    }
  // Closed form: f = x2 - x1 under a mean shift mu gives mu1 - mu2 on both sides.
  const Vec mu{2, 0};
  const double expected = mu[0] - mu[1];
  Rng rng(derive_seed(2, 99, 0));
  const auto r = projection_identity_check(a, kStd2, SamplableDistribution(ScoreModel::isotropic_gaussian(mu, 1.0)),
                                           40000, rng);
  const bool lhs_ok = std::abs(r.lhs - expected) <= 3 * r.lhs_std_error;
  const bool rhs_ok = std::abs(r.rhs - expected) <= 3 * r.rhs_std_error + 1e-12;
  return {ok == total && lhs_ok && rhs_ok,
          fmt("%d/%d pairs agree (worst |z| %.2f); mean shift (2,0): lhs %.4f +- %.4f, rhs %.4f vs %.1f", ok, total,
              worst, r.lhs, r.lhs_std_error, r.rhs, expected)};
}

bool same_axis(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kPi);
  return d < 1e-9 || kPi - d < 1e-9;
}

bool loglik_flat(const std::map<std::string, Vec>& t) {
  const Vec& ll = t.at("loglik");
  const Vec& se = t.at("loglik_stderr");
  for (std::size_t i = 0; i < ll.size(); ++i)
    if (std::abs(ll[i] - ll[0]) > 3 * se[i]) return false;
  return true;
}

Outcome rotation_reproduction() {
  const fs::path exact_dir = g_work / "rotate", trained_dir = g_work / "rotate-trained";
  tk({"experiment", "--preset", "rotate", "--out", exact_dir.string()});
  tk({"experiment", "--preset", "rotate-trained", "--out", trained_dir.string()});

  const auto ex = read_table(exact_dir / "sweep.csv");
  int ok = 0;
  const auto n = ex.at("phi").size();
  for (std::size_t i = 0; i < n; ++i) {
    const double phi = ex.at("phi")[i];
    // mu(phi) = 10 R_phi (1,1)/sqrt2, so mu1 - mu2 = -10 sqrt2 sin(phi)
    const double gap = -10.0 * std::sqrt(2.0) * std::sin(phi);
    ok += std::abs(ex.at("taste")[i] - gap) <= 3 * ex.at("taste_stderr")[i];
  }

  const auto tr = read_table(trained_dir / "sweep.csv");
  const Vec& taste = tr.at("taste");
  const Vec& mse = tr.at("mse");
  const auto at = [&](const Vec& v, bool absolute) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if ((absolute ? std::abs(v[i]) : v[i]) > (absolute ? std::abs(v[best]) : v[best])) best = i;
    return tr.at("phi")[best];
  };
  const double phi_taste = at(taste, true), phi_mse = at(mse, false);
  const bool argmax_ok = same_axis(phi_taste, phi_mse);
  const bool flat = loglik_flat(ex) && loglik_flat(tr);
  return {ok == static_cast<int>(n) && argmax_ok && flat,
          fmt("exact f: %d/%zu angles match closed form; trained: argmax|S| %.3f vs argmax mse %.3f (mod pi %s); "
              "loglik flat %s",
              ok, n, phi_taste, phi_mse, argmax_ok ? "same" : "differ", flat ? "yes" : "no")};
}

Outcome tilt_expansion() {
  const SamplableDistribution p(kStd2);
  const auto a = linear_f();
  const auto t = tanh_f();
  const std::vector<Named> fs{{"linear", &a}, {"tanh", &t}};
  const std::vector<Vec> cs{{1, 0}, {0, 1}, {1, 1}};
  int ok = 0, total = 0;
  double orth_slope = NAN, orth_se = NAN;
  std::uint64_t stream = 0;
  for (const auto& [fname, f] : fs)
    for (const auto& c : cs) {
      Rng rng(derive_seed(4, stream++, 0));
      const auto res = tilt_slope_check(*f, p, Potential::linear(c), {0.01}, 20000, rng);
      const auto& rep = res.slope_checks.at(0);
      // Oracle Cov_p(L_p f, c.x): closed form for the linear f, a large
      // independent sample otherwise.
      Estimate oracle{c[0] - c[1], 0.0};
      if (f != &a) {
        Rng orng(derive_seed(4, 100 + stream, 0));
        const Points xs = p.sample(400000, orng);
        Vec l(xs.size()), h(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
          l[i] = langevin_apply(*f, kStd2, xs[i]);
          h[i] = c[0] * xs[i][0] + c[1] * xs[i][1];
        }
        const double ml = mean(l), mh = mean(h);
        Vec prod(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) prod[i] = (l[i] - ml) * (h[i] - mh);
        oracle = mean_and_stderr(prod);
      }
      const double tol = std::max(0.05 * std::abs(oracle.value), 3 * std::hypot(rep.lhs_std_error, oracle.std_error));
      const bool pass = std::abs(rep.lhs - oracle.value) <= tol;
      ok += pass;
      ++total;
      if (!pass) std::cerr << "  tilt slope off: " << fname << " c=(" << c[0] << "," << c[1] << ") " << rep.lhs
                           << " vs " << oracle.value << '\n';
      if (f == &a && c[0] == 1 && c[1] == 1) orth_slope = rep.lhs, orth_se = rep.lhs_std_error;
    }
  const bool orth_ok = std::abs(orth_slope) <= 3 * orth_se;
  return {ok == total && orth_ok, fmt("%d/%d slopes match Cov oracle; orthogonal c=(1,1): slope %.3g +- %.3g", ok,
                                      total, orth_slope, orth_se)};
}

Outcome score_error() {
  const SamplableDistribution p(kStd2);
  const SamplableDistribution q(ScoreModel::isotropic_gaussian({0.6, -0.2}, 1.0));
  const SamplableDistribution qm(ScoreModel::gaussian_mixture({0.5, 0.5}, {{-0.5, 0}, {1, 0.5}}, {1, 0.8}));
  Mat slope(2, 2);
  slope(0, 0) = 0.2, slope(1, 0) = -0.1, slope(1, 1) = 0.15;
  const std::vector<std::pair<std::string, ScoreModel>> approx{
      {"constant", ScoreModel::perturbed(kStd2, {0.5, -0.3}, {})},
      {"linear", ScoreModel::perturbed(kStd2, {0, 0}, slope)}};
  const auto a = linear_f();
  const auto t = tanh_f();
  const std::vector<Named> fs{{"linear", &a}, {"tanh", &t}};
  int dec_ok = 0, fb_ok = 0, nfa_ok = 0, total = 0;
  double worst_nfa = 0.0;
  std::uint64_t stream = 0;
  for (const auto& [aname, s] : approx)
    for (const auto& [fname, f] : fs) {
      ++total;
      for (const SamplableDistribution* qq : {&q, &qm}) {
        Rng rng(derive_seed(5, stream++, 0));
        dec_ok += directional_decomposition_check(*f, p, *qq, s, 40000, rng).passes();
        Rng rng2(derive_seed(5, stream++, 0));
        const auto fb = fisher_bound_check(*f, p, *qq, s, 40000, rng2);
        fb_ok += fb.passes() && fb.lhs <= fb.rhs;
      }
      // No shift: q = p with the biased score, baseline from an independent p-sample.
      Rng rng(derive_seed(5, stream++, 0));
      const Points test = p.sample(20000, rng), cal = p.sample(20000, rng);
      const auto [batch, base] = batch_adjusted_residuals(test, cal, *f, s, ResidualOptions{}, 5);
      const auto est = taste_functional_estimate(batch);
      const double z = std::abs(est.value) / std::hypot(est.std_error, base.baseline_std_error);
      worst_nfa = std::max(worst_nfa, z);
      nfa_ok += z < 3.0;
    }
  return {dec_ok == 2 * total && fb_ok == 2 * total && nfa_ok == total,
          fmt("decomposition %d/%d, Fisher bound %d/%d, no false alarm %d/%d (worst |z| %.2f)", dec_ok, 2 * total,
              fb_ok, 2 * total, nfa_ok, total, worst_nfa)};
}

Outcome per_dimension() {
  const auto q = quad_f();
  const auto t = tanh_f();
  const std::vector<Named> fs{{"quadratic", &q}, {"tanh", &t}};
  const std::vector<ScoreModel> scores{kStd2, mixture_score()};
  double worst_sum = 0.0, worst_z = 0.0;
  int ok = 0, total = 0;
  std::uint64_t stream = 0;
  for (const auto& score : scores) {
    const SamplableDistribution p(score);
    for (const auto& [fname, f] : fs) {
      Rng rng(derive_seed(6, stream++, 0));
      const Points xs = p.sample(100000, rng);
      Vec c0(xs.size()), c1(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const Vec r = per_dimension_residuals(*f, score, xs[i]);
        worst_sum = std::max(worst_sum, std::abs(r[0] + r[1] - langevin_apply(*f, score, xs[i])));
        c0[i] = r[0];
        c1[i] = r[1];
      }
      for (const Vec* c : {&c0, &c1}) {
        const auto e = mean_and_stderr(*c);
        const double z = std::abs(e.value) / e.std_error;
        worst_z = std::max(worst_z, z);
        ok += z < 3.0;
        ++total;
      }
    }
  }
  return {worst_sum <= 1e-9 && ok == total,
          fmt("max |row sum - residual| %.2e; %d/%d component means within 3 stderr (worst |z| %.2f)", worst_sum, ok,
              total, worst_z)};
}

Outcome hutchinson() {
  // Quadratic with a diagonal Hessian: v^T H v = tr H for every Rademacher
  // probe, so any K is exact. (Off-diagonal entries add 2 sum H_ij^2 variance.)
  Mat a(3, 3);
  a(0, 0) = 2.0, a(1, 1) = -0.5, a(2, 2) = 0.7;
  const QuadraticPredictor quad(a, {0.1, 0, -0.2}, 0);
  const double trace = 2 * (a(0, 0) + a(1, 1) + a(2, 2));
  Rng rng(derive_seed(7, 0, 0));
  double worst_quad = 0.0;
  for (std::size_t k : {1u, 2u, 4u, 16u, 64u, 1000u})
    for (int i = 0; i < 5; ++i) {
      const Vec x{rng.normal(), rng.normal(), rng.normal()};
      worst_quad = std::max(worst_quad, std::abs(hutchinson_laplacian(quad, x, k, rng).estimate - trace));
    }

  Rng nrng(103);
  const auto net = MlpPredictor::random(4, {16, 16}, Activation::tanh, Head::linear, 1, nrng);
  int close = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Vec x{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const auto r = hutchinson_laplacian(net, x, 1000, rng);
    const auto e = mean_and_stderr(r.probe_values);
    const double z = std::abs(e.value - input_laplacian_exact(net, x)) / e.std_error;
    worst_z = std::max(worst_z, z);
    close += z < 3.0;
  }

  // Repeat the K-probe estimate and watch its spread fall as K grows 4x.
  const Vec x0{0.3, -0.1, 0.7, 0.2};
  const std::vector<std::size_t> ks{4, 16, 64, 256};
  Vec sd;
  for (std::size_t k : ks) {
    Vec reps(400);
    for (auto& v : reps) v = hutchinson_laplacian(net, x0, k, rng).estimate;
    sd.push_back(std::sqrt(variance(reps)));
  }
  bool ratios_ok = true;
  std::string ratios;
  for (std::size_t i = 0; i + 1 < sd.size(); ++i) {
    const double ratio = sd[i] / sd[i + 1];
    ratios_ok = ratios_ok && ratio >= 1.0 && ratio <= 4.0;
    ratios += fmt("%s%.2f", i ? "," : "", ratio);
  }
  return {worst_quad < 1e-6 && close == 5 && ratios_ok,
          fmt("quadratic max error %.1e; tanh K=1000 %d/5 within 3 stderr (worst |z| %.2f); stderr ratio per 4x K "
              "[%s] (target 2, allowed 1..4)",
              worst_quad, close, worst_z, ratios.c_str())};
}

// min |pre-activation| over all hidden units: distance from a ReLU kink.
double kink_margin(const Network& net, const Vec& x) {
  Vec h = x;
  double margin = INFINITY;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Vec z = matvec(layers[l].weight, h);
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] += layers[l].bias[j];
      margin = std::min(margin, std::abs(z[j]));
      z[j] = std::max(z[j], 0.0);
    }
    h = std::move(z);
  }
  return margin;
}

Outcome softmax_shortcut() {
  Rng nrng(104);
  const std::vector<MlpPredictor> nets{
      MlpPredictor::random(2, {32}, Activation::relu, Head::softmax, 3, nrng),
      MlpPredictor::random(2, {32, 32}, Activation::relu, Head::softmax, 4, nrng)};
  Rng rng(derive_seed(8, 0, 0));
  int checked = 0, ok = 0;
  double worst_rel = 0.0;
  for (const auto& f : nets) {
    int taken = 0;
    while (taken < 50) {
      const Vec x{2 * rng.normal(), 2 * rng.normal()};
      if (kink_margin(f.network(), x) < 1e-3) continue;
      ++taken;
      const std::size_t k = f.selected_class(f.logits(x));
      const double exact = input_laplacian_exact(f, x);
      const double shortcut = input_laplacian_softmax_shortcut(f, x, k);
      const double rel = std::abs(shortcut - exact) / std::max(std::abs(exact), 1e-300);
      const bool pass = std::abs(shortcut - exact) <= 1e-6 * std::abs(exact) + 1e-15;
      if (std::abs(exact) > 1e-15) worst_rel = std::max(worst_rel, rel);
      ok += pass;
      ++checked;
    }
  }
  return {ok == checked && checked == 100,
          fmt("%d/%d off-kink points agree, worst relative error %.2e", ok, checked, worst_rel)};
}

Outcome blind_spot() {
  const auto f = linear_f();
  const double eps = 10.0;
  const auto thetas = angle_grid(16);
  Rng rng(derive_seed(9, 0, 0));
  const auto rows = blind_spot_sweep(f, eps, thetas, {1, 1}, 4000, rng);
  int fo_ok = 0, l2_ok = 0, blind = 0;
  double aligned_z = 0.0, fo_at_0 = NAN, fo_at_quarter = NAN;
  for (const auto& r : rows) {
    const double closed = eps * eps * std::cos(2 * r.theta);
    fo_ok += std::abs(r.first_order - closed) <= 3 * r.first_order_std_error;
    if (std::abs(r.theta) < 1e-12) fo_at_0 = r.first_order;
    if (std::abs(r.theta - kPi / 4) < 1e-12) fo_at_quarter = r.first_order;
    // cos 2 theta = 0: the projected first-order functional is blind here
    if (std::abs(std::cos(2 * r.theta)) < 1e-9) {
      ++blind;
      l2_ok += r.l2_corrected > 0.0;
    }
    // shift direction (cos, sin) at 3 pi/4 is parallel to grad f = (-1, 1)
    if (std::abs(r.theta - 3 * kPi / 4) < 1e-12) aligned_z = std::abs(r.langevin) / r.langevin_std_error;
  }
  const int n = static_cast<int>(rows.size());
  return {fo_ok == n && aligned_z > 10.0 && blind == 4 && l2_ok == blind,
          fmt("first-order matches eps^2 cos 2theta at %d/%d angles (theta=0: %.2f, pi/4: %.2f); Langevin at the "
              "grad-aligned blind angle |z| %.1f; L2-corrected positive at %d/%d blind angles",
              fo_ok, n, fo_at_0, fo_at_quarter, aligned_z, l2_ok, blind)};
}

double brute_auroc(const Vec& in, const Vec& out) {
  double s = 0.0;
  for (double o : out)
    for (double i : in) s += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return s / static_cast<double>(in.size() * out.size());
}

double brute_fpr95(const Vec& in, const Vec& out) {
  double best = -INFINITY;
  for (double t : out) {
    const auto caught = std::count_if(out.begin(), out.end(), [&](double o) { return o >= t; });
    if (20 * caught >= 19 * static_cast<long>(out.size())) best = std::max(best, t);
  }
  const auto fp = std::count_if(in.begin(), in.end(), [&](double s) { return s >= best; });
  return static_cast<double>(fp) / static_cast<double>(in.size());
}

Outcome calibrated_detector() {
  const double alpha = 0.05;
  const std::size_t n_cal = 20000, n_test = 1000;
  const auto f = tanh_f();
  const auto s = ScoreModel::perturbed(kStd2, {0.5, -0.3}, {});
  const SamplableDistribution p(kStd2);
  const double sigma = std::sqrt(alpha * (1 - alpha) / n_test);
  int seeds_ok = 0;
  double pooled = 0.0, worst_dev = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(10, seed, 0));
    const Points cal = p.sample(n_cal, rng), test = p.sample(n_test, rng);
    // D from the first half, threshold from the second half of calibration.
    const std::span<const Vec> half_a(cal.data(), n_cal / 2), half_b(cal.data() + n_cal / 2, n_cal / 2);
    const auto [cal_batch, base] = batch_adjusted_residuals(half_b, half_a, f, s, ResidualOptions{}, seed);
    const double tau = calibrate(cal_batch.adjusted, alpha, ResidualMode::absolute);
    std::size_t flagged = 0;
    for (const auto& x : test) flagged += decide(langevin_apply(f, s, x) - base.baseline, tau, ResidualMode::absolute);
    const double rate = static_cast<double>(flagged) / n_test;
    pooled += rate / 20;
    worst_dev = std::max(worst_dev, std::abs(rate - alpha) / sigma);
    seeds_ok += std::abs(rate - alpha) <= 3 * sigma;
  }
  const bool pooled_ok = std::abs(pooled - alpha) <= 3 * sigma / std::sqrt(20.0);

  Rng rng(derive_seed(10, 100, 0));
  int metric_ok = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const auto n_in = 1 + rng.uniform_index(50), n_out = 20 + rng.uniform_index(31);
    Vec in(n_in), out(n_out);
    for (auto& v : in) v = std::floor(rng.normal() * 3);
    for (auto& v : out) v = std::floor(rng.normal() * 3 + 1.5);
    metric_ok += auroc(in, out) == brute_auroc(in, out) && fpr_at_95_tpr(in, out) == brute_fpr95(in, out);
  }

  const fs::path dir = g_work / "mixed";
  tk({"experiment", "--preset", "mixed", "--out", dir.string()});
  const auto power = read_table(dir / "power_by_shift.csv");
  const Vec& pw = power.at("power");
  const bool monotone = std::is_sorted(pw.begin(), pw.end());
  std::string curve;
  for (std::size_t i = 0; i < pw.size(); ++i) curve += fmt("%s%.3f", i ? "," : "", pw[i]);
  return {seeds_ok == 20 && pooled_ok && metric_ok == trials && monotone,
          fmt("null rejection within alpha+-3sigma for %d/20 seeds (pooled %.4f, worst %.2f sigma); AUROC/FPR95 "
              "exact on %d/%d lists; power by shift [%s] %s",
              seeds_ok, pooled, worst_dev, metric_ok, trials, curve.c_str(), monotone ? "monotone" : "NOT monotone")};
}

Outcome determinism() {
  const fs::path root = g_work / "determinism";
  fs::remove_all(root);
  // a small labelled point set for the score command
  {
    Rng rng(11);
    PointTable t{{"x1", "x2"}, {}, std::vector<int>{}};
    for (int i = 0; i < 400; ++i) {
      const bool out = i % 4 == 0;
      t.points.push_back({rng.normal() + (out ? 3.0 : 0.0), rng.normal() - (out ? 3.0 : 0.0)});
      t.labels->push_back(out);
    }
    write_points_csv(root / "data" / "test.csv", t);
    t.points.clear();
    t.labels.reset();
    for (int i = 0; i < 500; ++i) t.points.push_back({rng.normal(), rng.normal()});
    write_points_csv(root / "data" / "cal.csv", t);
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> runs;
  for (const auto& name : cli::experiment_preset_names())
    runs.push_back({name, {"experiment", "--preset", name}});
  runs.push_back({"train-predictor", {"train-predictor", "--preset", "linear-task-2d"}});
  runs.push_back({"train-score", {"train-score", "--preset", "dsm-gauss2d"}});
  runs.push_back({"score", {"score", "--test", (root / "data" / "test.csv").string(), "--calibration",
                            (root / "data" / "cal.csv").string(), "--per-dimension"}});
  runs.push_back({"score-hutchinson", {"score", "--test", (root / "data" / "test.csv").string(), "--calibration",
                                       (root / "data" / "cal.csv").string(), "--route", "hutchinson:8"}});
  int same = 0;
  std::size_t files = 0;
  std::string differing;
  for (auto& [name, args] : runs) {
    const fs::path out = root / name;
    args.insert(args.end(), {"--seed", "7", "--out", out.string()});
    tk(args);
    const auto first = snapshot(out);
    tk(args);
    const auto second = snapshot(out);
    files += first.size();
    if (first == second && !first.empty())
      ++same;
    else
      differing += " " + name;
  }
  return {same == static_cast<int>(runs.size()),
          fmt("%d/%zu preset runs byte-identical on rerun (%zu files)%s%s", same, runs.size(), files,
              differing.empty() ? "" : "; differing:", differing.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  fs::create_directories(g_work);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "Stein identity", 60, stein_identity},
      {2, "projection identity", 60, projection_identity},
      {3, "rotation sweep", 120, rotation_reproduction},
      {4, "tilt expansion", 60, tilt_expansion},
      {5, "score-error machinery", 60, score_error},
      {6, "per-dimension decomposition", 30, per_dimension},
      {7, "Hutchinson estimator", 60, hutchinson},
      {8, "softmax shortcut", 30, softmax_shortcut},
      {9, "blind spot", 60, blind_spot},
      {10, "calibrated detector", 120, calibrated_detector},
      {11, "determinism", 0, determinism},
  };

  std::ofstream summary(g_work / "summary.txt");
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::string timing = c.budget_s > 0 ? fmt("%.1fs of %.0fs", secs, c.budget_s) : fmt("%.1fs", secs);
    if (!in_time) timing += ", over budget";
    std::ostringstream line;
    line << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " [" << timing
         << "]";
    std::cout << line.str() << std::endl;
    summary << line.str() << '\n';
  }
  std::ostringstream last;
  last << (failures ? "FAILED " : "ALL PASSED ") << criteria.size() - failures << "/" << criteria.size();
  std::cout << last.str() << std::endl;
  summary << last.str() << '\n';
  return failures ? 1 : 0;
}
