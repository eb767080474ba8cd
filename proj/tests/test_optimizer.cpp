#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "wt/errors.hpp"
#include "wt/optimizer.hpp"

using namespace wt;
using wt::test::random_tensor;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// (N, d_model) of every row of the paper's model-variation table.
const std::pair<std::size_t, std::size_t> kTableConfigs[] = {{2, 512}, {4, 512}, {6, 512}, {8, 512}, {6, 1024}};

double peak(double (*lr)(long, const ScheduleConfig&), const ScheduleConfig& cfg, long horizon) {
  double best = 0.0;
  for (long s = 1; s <= horizon; ++s) best = std::max(best, lr(s, cfg));
  return best;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("standard learning rate closed form") {
  ScheduleConfig cfg;
  const double expected = std::pow(512.0, -0.5) * std::pow(4000.0, -0.5);
  CHECK(rel(lr_standard(4000, cfg), expected) < 1e-12);
  CHECK(rel(lr_standard(4000, cfg), 6.9877e-4) < 1e-4);
  CHECK(rel(lr_standard(1, cfg), std::pow(512.0, -0.5) * std::pow(4000.0, -1.5)) < 1e-12);
  CHECK(rel(lr_standard(1, cfg), 1.7469e-7) < 1e-4);
  CHECK(lr_standard(8000, cfg) < lr_standard(4000, cfg));
  CHECK_THROWS_AS(lr_standard(0, cfg), ValueError);
}

TEST_CASE("branch learning rate closed form") {
  ScheduleConfig cfg;
  const double expected = std::pow(512.0 / 6.0, -0.5) * std::pow(400.0, -0.5);
  CHECK(rel(lr_branch(400, cfg), expected) < 1e-12);
  CHECK(rel(lr_branch(400, cfg), 5.4127e-3) < 1e-4);
  CHECK_THROWS_AS(lr_branch(-3, cfg), ValueError);
}

TEST_CASE("schedules are continuous at the warm-up corner") {
  ScheduleConfig cfg;
  const double s = 4000.0;
  CHECK(rel(1.0 / std::sqrt(s), s * std::pow(4000.0, -1.5)) < 1e-12);
  CHECK(rel(lr_standard(3999, cfg), lr_standard(4000, cfg)) < 1e-3);
  CHECK(rel(lr_standard(4001, cfg), lr_standard(4000, cfg)) < 1e-3);
  CHECK(rel(lr_branch(399, cfg), lr_branch(400, cfg)) < 1e-2);
  CHECK(rel(lr_branch(401, cfg), lr_branch(400, cfg)) < 1e-2);
}

TEST_CASE("peak branch rate exceeds peak standard rate for every table configuration") {
  for (const auto& [layers, d_model] : kTableConfigs) {
    ScheduleConfig cfg;
    cfg.n_layers = layers;
    cfg.d_model = d_model;
    CHECK(peak(lr_branch, cfg, 12000) > peak(lr_standard, cfg, 12000));
  }
}

TEST_CASE("branch rate is zero in the freeze window") {
  ScheduleConfig cfg;
  cfg.total_steps = 1000;
  cfg.freeze_fraction = 0.2;
  CHECK(lr_branch(800, cfg) > 0.0);
  CHECK_FALSE(branch_weights_frozen(800, cfg));
  for (long s = 801; s <= 1000; ++s) {
    CHECK(lr_branch(s, cfg) == 0.0);
    CHECK(lr_standard(s, cfg) > 0.0);
  }
}

TEST_CASE("adam examples") {
  Tensor p = Tensor::vector({1.0, -2.0});
  AdamMoments state(p.shape());
  adam_step(p, Tensor::vector({0.0, 0.0}), state, 0.1, 1);
  CHECK(p == Tensor::vector({1.0, -2.0}));

  for (double g : {3.0, -0.02, 1e-4}) {
    Tensor x = Tensor::scalar(0.5);
    AdamMoments s(x.shape());
    adam_step(x, Tensor::scalar(g), s, 0.01, 1);
    CHECK(std::abs((x[0] - 0.5) - (-0.01 * g / (std::abs(g) + 1e-9))) < 1e-15);
    CHECK(std::abs((x[0] - 0.5) + 0.01 * (g > 0 ? 1 : -1)) < 1e-6);
  }
}

TEST_CASE("adam matches a direct recurrence over several steps") {
  Rng rng(61);
  Tensor p = random_tensor({5}, rng);
  Tensor reference = p;
  AdamMoments state(p.shape());
  std::vector<double> m(5, 0.0), v(5, 0.0);
  for (long t = 1; t <= 30; ++t) {
    const Tensor g = random_tensor({5}, rng);
    const double lr = 0.01 / std::sqrt(static_cast<double>(t));
    adam_step(p, g, state, lr, t);
    for (std::size_t i = 0; i < 5; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.98 * v[i] + 0.02 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.98, t));
      reference[i] -= lr * mh / (std::sqrt(vh) + 1e-9);
    }
    CHECK(state.t == t);
    for (double x : state.v.values()) CHECK(x >= 0.0);
  }
  CHECK(wt::test::max_abs_diff(p, reference) < 1e-14);
}

TEST_CASE("adam is deterministic and rejects bad gradients") {
  Rng rng(62);
  const Tensor start = random_tensor({3}, rng);
  std::vector<Tensor> grads;
  for (int i = 0; i < 10; ++i) grads.push_back(random_tensor({3}, rng));
  auto run = [&] {
    Tensor p = start;
    AdamMoments s(p.shape());
    for (long t = 0; t < 10; ++t) adam_step(p, grads[static_cast<std::size_t>(t)], s, 0.05, t + 1);
    return std::pair{p, s};
  };
  CHECK(run() == run());

  Tensor p = start;
  AdamMoments s(p.shape());
  try {
    adam_step(p, Tensor::vector({0.0, std::nan(""), 1.0}), s, 0.1, 17);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.step() == 17);
  }
  CHECK(p == start);
  CHECK_THROWS_AS(adam_step(p, Tensor::vector({1.0}), s, 0.1, 1), DimensionError);
}

TEST_CASE("simplex projection examples") {
  CHECK(project_to_simplex(Tensor::vector({0.25, 0.75})) == Tensor::vector({0.25, 0.75}));
  CHECK(project_to_simplex(Tensor::vector({2, 2})) == Tensor::vector({0.5, 0.5}));
  const Tensor p = project_to_simplex(Tensor::vector({1.2, -0.2}));
  CHECK(std::abs(p[0] - 1.0) < 1e-15);
  CHECK(p[1] == 0.0);

  // Dense grid over the segment {(t, 1 - t)}.
  double best_t = 0.0, best = 1e300;
  for (int i = 0; i <= 100000; ++i) {
    const double t = i / 100000.0;
    const double d = (t - 1.2) * (t - 1.2) + (1 - t + 0.2) * (1 - t + 0.2);
    if (d < best) best = d, best_t = t;
  }
  CHECK(std::abs(best_t - p[0]) < 1e-5);
}

TEST_CASE("simplex projection is idempotent and lands on the simplex") {
  Rng rng(63);
  for (int i = 0; i < 200; ++i) {
    const std::size_t m = 1 + static_cast<std::size_t>(i % 7);
    const Tensor v = random_tensor({m}, rng, -3, 3);
    const Tensor p = project_to_simplex(v);
    CHECK(project_to_simplex(p) == p);
    double total = 0.0;
    for (double x : p.values()) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("simplex projection is nearer than random simplex samples") {
  Rng rng(64);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor v = random_tensor({3}, rng, -2, 2);
    const std::vector<double> vv(v.values().begin(), v.values().end());
    const std::vector<double> p = project_to_simplex(vv);
    const double dp = distance(p, vv);
    for (int s = 0; s < 10000; ++s) {
      std::vector<double> q{e(rng), e(rng), e(rng)};
      const double total = q[0] + q[1] + q[2];
      for (double& x : q) x /= total;
      if (distance(q, vv) < dp - 1e-12) {
        FAIL("a random simplex point is closer than the projection");
        break;
      }
    }
  }
}

TEST_CASE("normalize branch weights") {
  CHECK(normalize_branch_weights(Tensor::vector({0.2, 0.3, 0.5}), WeightParamMode::projection) ==
        Tensor::vector({0.2, 0.3, 0.5}));
  const Tensor u = normalize_branch_weights(Tensor::vector({0.7, 0.7, 0.7, 0.7}), WeightParamMode::softmax);
  for (double x : u.values()) CHECK(std::abs(x - 0.25) < 1e-15);
  const Tensor s =
      normalize_branch_weights(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}), WeightParamMode::softmax);
  CHECK(std::abs(s[0] - 1.0 / 6) < 1e-15);
  CHECK(std::abs(s[1] - 2.0 / 6) < 1e-15);
  CHECK(std::abs(s[2] - 3.0 / 6) < 1e-15);
  const auto both = normalize_branch_weights(Tensor::vector({3, 1}), Tensor::vector({0, 0}), WeightParamMode::projection);
  CHECK(both.kappa == Tensor::vector({1, 0}));
  CHECK(both.alpha == Tensor::vector({0.5, 0.5}));
}

TEST_CASE("optimizer keeps branch weights on the simplex and freezes them with their moments") {
  Rng rng(65);
  ParameterSet params;
  params.add("w", random_tensor({3, 3}, rng));
  params.add("kappa", Tensor::vector({0.2, 0.3, 0.5}), ParamGroup::branch);
  params.add("alpha", Tensor::vector({0.6, 0.2, 0.2}), ParamGroup::branch);
  Optimizer opt(params, WeightParamMode::projection);
  auto grads = [&] {
    return std::vector<Tensor>{random_tensor({3, 3}, rng), random_tensor({3}, rng, -5, 5),
                               random_tensor({3}, rng, -5, 5)};
  };
  for (long step = 1; step <= 50; ++step) {
    opt.step(params, grads(), 0.01, 0.2, step);
    for (std::size_t i = 1; i <= 2; ++i) {
      double total = 0.0;
      for (double x : params[i].value.values()) {
        CHECK(x >= 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
  const Tensor w_before = params[0].value;
  const Tensor k_before = params[1].value;
  const AdamMoments k_moments = opt.moments()[1];
  opt.step(params, grads(), 0.01, 0.0, 51);
  CHECK(params[1].value == k_before);
  CHECK(opt.moments()[1] == k_moments);
  CHECK(params[0].value != w_before);
  CHECK(opt.moments()[0].t == 51);

  std::vector<Tensor> bad = grads();
  bad[0][4] = std::numeric_limits<double>::infinity();
  const Tensor w_now = params[0].value;
  CHECK_THROWS_AS(opt.step(params, bad, 0.01, 0.1, 52), NumericError);
  CHECK(params[0].value == w_now);
}

TEST_CASE("schedule config validation") {
  ScheduleConfig cfg;
  cfg.warmup_main = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ScheduleConfig{};
  cfg.freeze_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
