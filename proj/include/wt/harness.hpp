#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wt/corpus.hpp"
#include "wt/model.hpp"
#include "wt/optimizer.hpp"

namespace wt {

// Test-time treatment of the branch weights.
enum class WeightsMode { learned, random, uniform };

std::string weights_mode_name(WeightsMode m);
WeightsMode parse_weights_mode(const std::string& name);

struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule{32, 2, 4000, 400, 3000, 0.15};
  SyntheticTaskSpec task;
  std::size_t tokens_per_batch = 256;
  std::uint64_t seed = 1;
  long log_interval = 10;
  WeightsMode weights_mode = WeightsMode::learned;
  std::optional<std::size_t> gating_k;

  // Test loss and accuracy are measured every eval_interval() steps.
  long eval_interval() const { return 10 * log_interval; }
  // Copies the model dimensions, vocabulary and seed into schedule and task.
  void sync();
  void validate() const;
};

// Flat `key = value` text, one pair per line, `#` starts a comment. Every
// key is optional; unknown keys are rejected.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

struct MetricsRecord {
  long step = 0;
  double lr_standard = 0.0;
  double lr_branch = 0.0;
  double train_loss = 0.0;  // mean over the steps since the previous record
  std::optional<double> test_loss;
  std::optional<double> test_accuracy;
  double wall_ms = 0.0;
  // Effective branch weights after the step, one vector per layer (encoder
  // layers first). Empty for the baseline.
  std::vector<std::vector<double>> kappa;
  std::vector<std::vector<double>> alpha;
};

std::string to_json_line(const MetricsRecord& r);
MetricsRecord metrics_from_json_line(std::string_view line);
void write_metrics(const std::vector<MetricsRecord>& log, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

// Replaces branch weights in place: uniform sets 1/M everywhere, random draws
// each vector from the flat Dirichlet using a stream seeded by `seed`.
void apply_weights_mode(Transformer& model, WeightsMode mode, std::uint64_t seed);

struct EvalResult {
  double token_accuracy = 0.0;  // teacher-forced, non-pad target positions
  double bleu = 0.0;            // greedy decoding against the references
  double test_loss = 0.0;       // label-smoothed, token-weighted mean
};

struct EvalOptions {
  std::size_t tokens_per_batch = 256;
  bool with_bleu = true;
  std::optional<std::size_t> gating_k;
};

// Teacher-forced loss and accuracy with dropout off.
EvalResult evaluate_model(const Transformer& model, const Dataset& data, const EvalOptions& options = {});
// evaluate_model after apply_weights_mode on a copy of the model.
EvalResult evaluate(const Transformer& model, const Dataset& data, WeightsMode mode, std::uint64_t seed,
                    const EvalOptions& options = {});

struct TrainOptions {
  // Stop at the first evaluation reaching this test accuracy.
  std::optional<double> stop_at_accuracy;
  // Records written for the run; the harness checks nothing else into it.
  std::optional<std::filesystem::path> out_dir;
};

struct TrainResult {
  Transformer model;
  std::vector<MetricsRecord> log;
  long steps_run = 0;
};

// Deterministic for a given config. Writes config.txt, metrics.jsonl and
// checkpoint.wtck when out_dir is set. A non-finite loss or gradient aborts
// the run with NumericError after saving the last good checkpoint.
TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});

// First logged step whose test accuracy reaches threshold.
std::optional<long> steps_to_threshold(const std::vector<MetricsRecord>& log, double threshold);

struct ArmResult {
  std::uint64_t seed = 0;
  std::optional<long> steps_to_threshold;
  EvalResult final_metrics;
  long steps_run = 0;
};

struct ArmSummary {
  std::string label;
  std::size_t parameter_count = 0;
  std::size_t branch_parameter_count = 0;  // kappa and alpha scalars
  std::vector<ArmResult> runs;
  std::optional<double> median_steps;  // over runs that reached the threshold
  std::size_t reached = 0;
};

struct CompareReport {
  double threshold = 0.99;
  ArmSummary first;
  ArmSummary second;
  // first - second
  long parameter_difference = 0;
  std::optional<double> median_steps_difference;
  double final_accuracy_difference = 0.0;  // mean over seeds
};

struct CompareOptions {
  double threshold = 0.99;
  bool stop_at_threshold = false;
  // Each run is written to out_dir/<label>/seed_<seed>.
  std::optional<std::filesystem::path> out_dir;
  // Called after every finished run.
  std::function<void(const std::string& label, std::uint64_t seed, const TrainResult&)> on_run;
};

// Trains both arms for every seed on identical data and reports first - second.
CompareReport compare_arms(const RunConfig& first, const std::string& first_label, const RunConfig& second,
                           const std::string& second_label, const std::vector<std::uint64_t>& seeds,
                           const CompareOptions& options = {});
// Baseline versus weighted versions of cfg.
CompareReport compare(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                      const CompareOptions& options = {});
RunConfig with_variant(const RunConfig& cfg, Variant variant);
std::string compare_report_json(const CompareReport& report);
std::string compare_report_text(const CompareReport& report);

// Branch-weight scalars a weighted model adds over its baseline.
std::size_t expected_weight_overhead(const ModelConfig& cfg);

struct ProbeRun {
  std::string label;
  std::vector<MetricsRecord> log;
};

struct ProbeBucket {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<std::optional<double>> mean_test_loss;  // per run label
};

struct ProbeResult {
  std::vector<std::string> labels;
  std::string pairs_csv;
  std::string buckets_csv;
  std::vector<ProbeBucket> buckets;
  std::size_t pair_count = 0;
};

// Pairs every logged (train_loss, test_loss) per run, and averages test loss
// inside equal-width train-loss buckets spanning the range all runs share.
ProbeResult regularization_probe(const std::vector<ProbeRun>& runs, std::size_t bucket_count = 10);
// Fraction of buckets with data for both labels in which `better` has the
// lower-or-equal mean test loss.
std::optional<double> probe_win_fraction(const ProbeResult& probe, const std::string& better,
                                         const std::string& other);

// Centered moving average with truncated windows at the edges.
std::vector<double> mean_filter(std::span<const double> series, std::size_t window);

struct WeightTrajectories {
  std::vector<long> steps;
  // [layer][branch][record]
  std::vector<std::vector<std::vector<double>>> kappa;
  std::vector<std::vector<std::vector<double>>> alpha;
};

WeightTrajectories weight_trajectories(const std::vector<MetricsRecord>& log, std::size_t window);

// Writes metrics.csv (format csv) or loss.svg, lr.svg and per-layer
// kappa/alpha charts (format svg) into the run directory. Returns the paths.
std::vector<std::filesystem::path> export_report(const std::filesystem::path& run_dir, const std::string& format);
std::string metrics_csv(const std::vector<MetricsRecord>& log);

}  // namespace wt
