#include "wt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "wt/checkpoint.hpp"
#include "wt/errors.hpp"

namespace wt {

namespace {

using nlohmann::json;

Rng stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

constexpr std::uint64_t kOrderStream = 0x6f72;
constexpr std::uint64_t kDropoutStream = 0x6470;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

void check_simplex(const std::vector<double>& w, const std::string& what) {
  double total = 0.0;
  for (double x : w) {
    if (x < 0.0) throw FormatError(what + " has a negative entry");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) throw FormatError(what + " does not sum to 1");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string to_json_line(const MetricsRecord& r) {
  json j{{"step", r.step},
         {"lr_standard", r.lr_standard},
         {"lr_branch", r.lr_branch},
         {"train_loss", r.train_loss},
         {"test_loss", optional_json(r.test_loss)},
         {"test_accuracy", optional_json(r.test_accuracy)},
         {"wall_ms", r.wall_ms},
         {"kappa", r.kappa},
         {"alpha", r.alpha}};
  return j.dump();
}

MetricsRecord metrics_from_json_line(std::string_view line) {
  MetricsRecord r;
  try {
    const json j = json::parse(line);
    r.step = j.at("step").get<long>();
    r.lr_standard = j.at("lr_standard").get<double>();
    r.lr_branch = j.at("lr_branch").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.test_loss = optional_from(j, "test_loss");
    r.test_accuracy = optional_from(j, "test_accuracy");
    r.wall_ms = j.at("wall_ms").get<double>();
    r.kappa = j.at("kappa").get<std::vector<std::vector<double>>>();
    r.alpha = j.at("alpha").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad metrics record: ") + e.what());
  }
  if (r.kappa.size() != r.alpha.size()) throw FormatError("kappa and alpha list different layer counts");
  for (std::size_t l = 0; l < r.kappa.size(); ++l) {
    check_simplex(r.kappa[l], "kappa of layer " + std::to_string(l));
    check_simplex(r.alpha[l], "alpha of layer " + std::to_string(l));
  }
  return r;
}

void write_metrics(const std::vector<MetricsRecord>& log, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : log) text += to_json_line(r) + '\n';
  write_text(path, text);
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics " + path.string());
  std::vector<MetricsRecord> log;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      log.push_back(metrics_from_json_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (log.size() > 1 && log.back().step <= log[log.size() - 2].step) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": steps are not increasing");
    }
  }
  return log;
}

void apply_weights_mode(Transformer& model, WeightsMode mode, std::uint64_t seed) {
  if (mode == WeightsMode::learned) return;
  const std::size_t m = model.config().branches;
  Rng rng(seed);
  std::exponential_distribution<double> exponential(1.0);
  auto draw = [&] {
    Tensor w({m}, 1.0 / static_cast<double>(m));
    if (mode == WeightsMode::random) {
      double total = 0.0;
      for (double& x : w.values()) total += (x = exponential(rng));
      for (double& x : w.values()) x /= total;
    }
    return w;
  };
  for (const auto& slots : model.branch_slots()) {
    Tensor kappa = draw();
    Tensor alpha = draw();
    model.set_branch_weights(slots, kappa, alpha);
  }
}

EvalResult evaluate_model(const Transformer& model, const Dataset& data, const EvalOptions& options) {
  if (data.empty()) throw ValueError("cannot evaluate on an empty dataset");
  EvalResult result;
  ForwardOptions fo;
  fo.gating_k = options.gating_k;
  std::vector<int> predicted, gold;
  double loss_sum = 0.0;
  std::size_t token_count = 0;
  for (const auto& batch : batch_by_length(data, options.tokens_per_batch)) {
    Tape tape;
    const BoundParams bound = bind(tape, model, false);
    Var memory = encode(model, bound, batch, fo);
    Var logits = decode(model, bound, batch, memory, fo);
    Var loss = label_smoothed_loss(logits, batch.target_out, model.config().epsilon_ls);
    const std::size_t tokens = batch.target_tokens();
    loss_sum += loss.value()[0] * static_cast<double>(tokens);
    token_count += tokens;
    const auto pred = argmax_rows(logits.value());
    predicted.insert(predicted.end(), pred.begin(), pred.end());
    gold.insert(gold.end(), batch.target_out.begin(), batch.target_out.end());
  }
  result.test_loss = loss_sum / static_cast<double>(token_count);
  result.token_accuracy = token_accuracy(predicted, gold);
  if (options.with_bleu) {
    std::vector<TokenSeq> sources, references;
    for (const auto& pair : data) {
      sources.push_back(pair.source);
      references.push_back(pair.target);
    }
    const auto hypotheses = greedy_decode_batch(model, sources, model.config().max_len - 1, options.gating_k);
    result.bleu = corpus_bleu(hypotheses, references);
  }
  return result;
}

EvalResult evaluate(const Transformer& model, const Dataset& data, WeightsMode mode, std::uint64_t seed,
                    const EvalOptions& options) {
  Transformer copy = model;
  apply_weights_mode(copy, mode, seed);
  return evaluate_model(copy, data, options);
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  TrainResult result{Transformer(cfg.model, cfg.seed), {}, 0};
  Transformer& model = result.model;
  const Dataset train_data = generate_dataset(cfg.task, Split::train);
  const Dataset test_data = generate_dataset(cfg.task, Split::test);
  const auto batches = batch_by_length(train_data, cfg.tokens_per_batch);

  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    write_text(*options.out_dir / "config.txt", format_config(cfg));
  }
  auto persist = [&] {
    if (!options.out_dir) return;
    write_metrics(result.log, *options.out_dir / "metrics.jsonl");
    checkpoint_save(model, *options.out_dir / "checkpoint.wtck");
  };

  Rng order_rng = stream(cfg.seed, kOrderStream);
  Rng dropout_rng = stream(cfg.seed, kDropoutStream);
  std::vector<std::size_t> order(batches.size());
  std::size_t cursor = order.size();

  Optimizer optimizer(model.params(), cfg.model.weight_param_mode);
  EvalOptions eval_options;
  eval_options.tokens_per_batch = cfg.tokens_per_batch;
  eval_options.with_bleu = false;
  eval_options.gating_k = cfg.gating_k;

  const auto start = std::chrono::steady_clock::now();
  double interval_loss = 0.0;
  long interval_steps = 0;
  long step = 1;
  try {
    for (; step <= cfg.schedule.total_steps; ++step) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const TokenBatch& batch = batches[order[cursor++]];

      Tape tape;
      const BoundParams bound = bind(tape, model, true);
      ForwardOptions fo;
      fo.training = true;
      fo.rng = &dropout_rng;
      fo.gating_k = cfg.gating_k;
      Var memory = encode(model, bound, batch, fo);
      Var logits = decode(model, bound, batch, memory, fo);
      Var loss = label_smoothed_loss(logits, batch.target_out, cfg.model.epsilon_ls);
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(bound.vars.size());
      for (const Var& v : bound.vars) grads.push_back(tape.grad(v));

      const double lr_s = lr_standard(step, cfg.schedule);
      const double lr_b = lr_branch(step, cfg.schedule);
      optimizer.step(model.params(), grads, lr_s, lr_b, step);
      result.steps_run = step;
      interval_loss += loss.value()[0];
      ++interval_steps;

      const bool last = step == cfg.schedule.total_steps;
      if (step % cfg.log_interval != 0 && !last) continue;
      MetricsRecord record;
      record.step = step;
      record.lr_standard = lr_s;
      record.lr_branch = lr_b;
      record.train_loss = interval_loss / static_cast<double>(interval_steps);
      interval_loss = 0.0;
      interval_steps = 0;
      if (step % cfg.eval_interval() == 0 || last) {
        const EvalResult eval = evaluate_model(model, test_data, eval_options);
        record.test_loss = eval.test_loss;
        record.test_accuracy = eval.token_accuracy;
      }
      for (const auto& slots : model.branch_slots()) {
        const Tensor kappa = model.kappa(slots);
        const Tensor alpha = model.alpha(slots);
        record.kappa.emplace_back(kappa.values().begin(), kappa.values().end());
        record.alpha.emplace_back(alpha.values().begin(), alpha.values().end());
      }
      record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      result.log.push_back(std::move(record));
      const auto& acc = result.log.back().test_accuracy;
      if (options.stop_at_accuracy && acc && *acc >= *options.stop_at_accuracy) break;
    }
  } catch (const NumericError& e) {
    // Parameters are only touched once every gradient is finite, so the
    // model still holds the last good state.
    persist();
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step), step);
  }
  persist();
  if (options.out_dir && !test_data.empty()) {
    EvalOptions final_options = eval_options;
    final_options.with_bleu = true;
    const EvalResult eval = evaluate(model, test_data, cfg.weights_mode, cfg.seed, final_options);
    json j{{"weights_mode", weights_mode_name(cfg.weights_mode)},
           {"token_accuracy", eval.token_accuracy},
           {"bleu", eval.bleu},
           {"test_loss", eval.test_loss},
           {"steps_run", result.steps_run}};
    write_text(*options.out_dir / "eval.json", j.dump(2) + '\n');
  }
  return result;
}

std::optional<long> steps_to_threshold(const std::vector<MetricsRecord>& log, double threshold) {
  for (const auto& r : log) {
    if (r.test_accuracy && *r.test_accuracy >= threshold) return r.step;
  }
  return std::nullopt;
}

std::size_t expected_weight_overhead(const ModelConfig& cfg) {
  if (cfg.variant != Variant::weighted) return 0;
  return 2 * cfg.branches * 2 * cfg.n_layers;
}

RunConfig with_variant(const RunConfig& cfg, Variant variant) {
  RunConfig out = cfg;
  out.model.variant = variant;
  if (variant == Variant::baseline) out.gating_k.reset();
  return out;
}

namespace {

ArmSummary run_arm(const RunConfig& base, const std::string& label, const std::vector<std::uint64_t>& seeds,
                   const CompareOptions& options) {
  ArmSummary arm;
  arm.label = label;
  const Transformer layout(base.model);
  arm.parameter_count = layout.params().scalar_count();
  arm.branch_parameter_count = layout.params().scalar_count(ParamGroup::branch);
  std::vector<double> reached_steps;
  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.sync();
    TrainOptions train_options;
    if (options.stop_at_threshold) train_options.stop_at_accuracy = options.threshold;
    if (options.out_dir) train_options.out_dir = *options.out_dir / label / ("seed_" + std::to_string(seed));
    const TrainResult trained = train(cfg, train_options);

    ArmResult run;
    run.seed = seed;
    run.steps_run = trained.steps_run;
    run.steps_to_threshold = steps_to_threshold(trained.log, options.threshold);
    EvalOptions eval_options;
    eval_options.tokens_per_batch = cfg.tokens_per_batch;
    eval_options.gating_k = cfg.gating_k;
    run.final_metrics = evaluate(trained.model, generate_dataset(cfg.task, Split::test), cfg.weights_mode, seed,
                                 eval_options);
    if (run.steps_to_threshold) {
      reached_steps.push_back(static_cast<double>(*run.steps_to_threshold));
      ++arm.reached;
    }
    arm.runs.push_back(run);
    if (options.on_run) options.on_run(label, seed, trained);
  }
  if (!reached_steps.empty()) {
    std::sort(reached_steps.begin(), reached_steps.end());
    const std::size_t n = reached_steps.size();
    arm.median_steps = n % 2 ? reached_steps[n / 2] : 0.5 * (reached_steps[n / 2 - 1] + reached_steps[n / 2]);
  }
  return arm;
}

double mean_accuracy(const ArmSummary& arm) {
  if (arm.runs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : arm.runs) total += r.final_metrics.token_accuracy;
  return total / static_cast<double>(arm.runs.size());
}

}  // namespace

CompareReport compare_arms(const RunConfig& first, const std::string& first_label, const RunConfig& second,
                           const std::string& second_label, const std::vector<std::uint64_t>& seeds,
                           const CompareOptions& options) {
  if (first_label == second_label && options.out_dir) {
    throw ValueError("arm labels must differ when writing run directories");
  }
  CompareReport report;
  report.threshold = options.threshold;
  report.first = run_arm(first, first_label, seeds, options);
  report.second = run_arm(second, second_label, seeds, options);
  report.parameter_difference =
      static_cast<long>(report.first.parameter_count) - static_cast<long>(report.second.parameter_count);
  if (report.first.median_steps && report.second.median_steps) {
    report.median_steps_difference = *report.first.median_steps - *report.second.median_steps;
  }
  report.final_accuracy_difference = mean_accuracy(report.first) - mean_accuracy(report.second);
  return report;
}

CompareReport compare(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, const CompareOptions& options) {
  return compare_arms(with_variant(cfg, Variant::weighted), "weighted", with_variant(cfg, Variant::baseline),
                      "baseline", seeds, options);
}

}  // namespace wt
