#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "wt/autodiff.hpp"

namespace wt::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = u(rng);
  return t;
}

// Builds a scalar loss from leaves placed on a fresh tape.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double evaluate_loss(const LossFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value()[0];
}

// Largest relative error between reverse-mode and central-difference
// gradients over all inputs, measured per input as
// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12).
inline double gradient_error(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5,
                             const std::vector<bool>& differentiate = {}) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiate.empty() && !differentiate[i]) continue;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + h;
      const double up = evaluate_loss(f, inputs);
      inputs[i][k] = saved - h;
      const double down = evaluate_loss(f, inputs);
      inputs[i][k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][k];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// sum(x * r) for a fixed random r, so every output entry carries a distinct
// weight into the loss.
inline Var random_projection(Var x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r = random_tensor(x.shape(), rng);
  return sum(mul(x, x.tape().constant(r)));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace wt::test
