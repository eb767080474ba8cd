#include "wt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "wt/errors.hpp"

namespace wt {

void ScheduleConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (warmup_main <= 0 || warmup_branch <= 0) throw ConfigError("warm-up lengths must be positive");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (!(freeze_fraction >= 0.0 && freeze_fraction < 1.0)) {
    throw ConfigError("freeze_fraction must lie in [0,1)");
  }
}

namespace {

double warmup_factor(long step, long warmup) {
  const double s = static_cast<double>(step);
  return std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(warmup), -1.5));
}

void check_step(long step) {
  if (step < 1) throw ValueError("learning-rate schedules start at step 1, got " + std::to_string(step));
}

}  // namespace

double lr_standard(long step, const ScheduleConfig& cfg) {
  check_step(step);
  return std::pow(static_cast<double>(cfg.d_model), -0.5) * warmup_factor(step, cfg.warmup_main);
}

bool branch_weights_frozen(long step, const ScheduleConfig& cfg) {
  return static_cast<double>(step) > static_cast<double>(cfg.total_steps) * (1.0 - cfg.freeze_fraction);
}

double lr_branch(long step, const ScheduleConfig& cfg) {
  check_step(step);
  if (branch_weights_frozen(step, cfg)) return 0.0;
  const double layers = static_cast<double>(std::max<std::size_t>(cfg.n_layers, 1));
  return std::pow(static_cast<double>(cfg.d_model) / layers, -0.5) * warmup_factor(step, cfg.warmup_branch);
}

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& state, double lr, long step_index,
               const AdamSettings& settings) {
  if (param.shape() != grad.shape() || state.m.shape() != param.shape()) {
    throw DimensionError("adam_step: parameter " + shape_string(param.shape()) + ", gradient " +
                         shape_string(grad.shape()) + ", moments " + shape_string(state.m.shape()));
  }
  for (double g : grad.values()) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient", step_index);
  }
  state.t += 1;
  const double correction1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = settings.beta1 * state.m[i] + (1.0 - settings.beta1) * grad[i];
    state.v[i] = settings.beta2 * state.v[i] + (1.0 - settings.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + settings.eps);
  }
}

std::vector<double> project_to_simplex(std::span<const double> v) {
  if (v.empty()) throw DimensionError("project_to_simplex needs at least one entry");
  // Points already on the simplex up to rounding are returned as is, which
  // keeps the projection idempotent bit for bit.
  double sum = 0.0;
  bool nonnegative = true;
  for (double x : v) {
    sum += x;
    nonnegative = nonnegative && x >= 0.0;
  }
  if (nonnegative && std::abs(sum - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(v.size())) {
    return {v.begin(), v.end()};
  }
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double prefix = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    prefix += u[j];
    const double candidate = (prefix - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

Tensor project_to_simplex(const Tensor& v) { return Tensor(v.shape(), project_to_simplex(v.values())); }

Tensor normalize_branch_weights(const Tensor& raw, WeightParamMode mode) {
  if (mode == WeightParamMode::projection) return project_to_simplex(raw);
  Tensor out = raw;
  const double peak = *std::max_element(out.values().begin(), out.values().end());
  double total = 0.0;
  for (double& x : out.values()) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : out.values()) x /= total;
  return out;
}

BranchWeights normalize_branch_weights(const Tensor& raw_kappa, const Tensor& raw_alpha, WeightParamMode mode) {
  return {normalize_branch_weights(raw_kappa, mode), normalize_branch_weights(raw_alpha, mode)};
}

Optimizer::Optimizer(const ParameterSet& params, WeightParamMode mode, AdamSettings settings)
    : mode_(mode), settings_(settings) {
  moments_.reserve(params.size());
  for (const auto& p : params) moments_.emplace_back(p.value.shape());
}

void Optimizer::step(ParameterSet& params, std::span<const Tensor> grads, double lr_standard_value,
                     double lr_branch_value, long step_index) {
  if (grads.size() != params.size() || moments_.size() != params.size()) {
    throw DimensionError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (const Tensor& g : grads) {
    for (double x : g.values()) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient", step_index);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.group == ParamGroup::branch) {
      if (lr_branch_value == 0.0) continue;
      adam_step(p.value, grads[i], moments_[i], lr_branch_value, step_index, settings_);
      if (mode_ == WeightParamMode::projection) p.value = project_to_simplex(p.value);
    } else {
      adam_step(p.value, grads[i], moments_[i], lr_standard_value, step_index, settings_);
    }
  }
}

}  // namespace wt
