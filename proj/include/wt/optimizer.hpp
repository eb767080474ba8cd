#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wt/autodiff.hpp"
#include "wt/model.hpp"

namespace wt {

struct ScheduleConfig {
  std::size_t d_model = 512;
  std::size_t n_layers = 6;  // encoder layer count, the N of the branch rate
  long warmup_main = 4000;
  long warmup_branch = 400;
  long total_steps = 60000;
  double freeze_fraction = 0.15;

  void validate() const;
};

// d_model^-0.5 * min(step^-0.5, step * warmup_main^-1.5)
double lr_standard(long step, const ScheduleConfig& cfg);
// (d_model / N)^-0.5 * min(step^-0.5, step * warmup_branch^-1.5), and 0 once
// step > total_steps * (1 - freeze_fraction).
double lr_branch(long step, const ScheduleConfig& cfg);
bool branch_weights_frozen(long step, const ScheduleConfig& cfg);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  long t = 0;  // updates applied so far

  explicit AdamMoments(const Shape& shape) : m(shape), v(shape) {}
  bool operator==(const AdamMoments&) const = default;
};

// One bias-corrected Adam update in place. A non-finite gradient throws
// NumericError carrying step_index.
void adam_step(Tensor& param, const Tensor& grad, AdamMoments& state, double lr, long step_index,
               const AdamSettings& settings = {});

// Euclidean projection onto {x >= 0, sum x = 1} by sort and threshold.
std::vector<double> project_to_simplex(std::span<const double> v);
Tensor project_to_simplex(const Tensor& v);

struct BranchWeights {
  Tensor kappa;
  Tensor alpha;
};

// Simplex view of raw stored weights: projection mode projects, softmax mode
// treats the raw values as logits.
Tensor normalize_branch_weights(const Tensor& raw, WeightParamMode mode);
BranchWeights normalize_branch_weights(const Tensor& raw_kappa, const Tensor& raw_alpha, WeightParamMode mode);

// Adam over a whole ParameterSet with separate rates for standard and branch
// parameters. Branch parameters are skipped entirely (moments included) when
// their rate is 0, and re-projected onto the simplex after each update in
// projection mode.
class Optimizer {
 public:
  Optimizer(const ParameterSet& params, WeightParamMode mode, AdamSettings settings = {});

  void step(ParameterSet& params, std::span<const Tensor> grads, double lr_standard, double lr_branch,
            long step_index);

  const std::vector<AdamMoments>& moments() const noexcept { return moments_; }

 private:
  WeightParamMode mode_;
  AdamSettings settings_;
  std::vector<AdamMoments> moments_;
};

}  // namespace wt
