#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wt/checkpoint.hpp"
#include "wt/errors.hpp"
#include "wt/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(text)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') throw wt::ConfigError("bad seed '" + s + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw wt::ConfigError("--seeds needs at least one seed");
  return seeds;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw wt::IoError("cannot write " + path.string());
  out << text;
}

json eval_json(const wt::EvalResult& r) {
  return {{"token_accuracy", r.token_accuracy}, {"bleu", r.bleu}, {"test_loss", r.test_loss}};
}

void check_dataset_fits(const wt::Dataset& data, const wt::ModelConfig& cfg) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto* seq : {&data[i].source, &data[i].target}) {
      if (seq->size() + 1 > cfg.max_len) {
        throw wt::ConfigError("pair " + std::to_string(i + 1) + " is longer than the checkpoint's max_len allows");
      }
      for (int id : *seq) {
        if (id < wt::kFirstContentId || id >= cfg.vocab_size) {
          throw wt::ConfigError("pair " + std::to_string(i + 1) + " has token " + std::to_string(id) +
                                " outside the checkpoint vocabulary");
        }
      }
    }
  }
}

std::string run_label(const fs::path& dir) {
  const auto cfg_path = dir / "config.txt";
  if (fs::exists(cfg_path)) return wt::variant_name(wt::load_config(cfg_path).model.variant);
  return dir.filename().string();
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted and baseline Transformer training harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* train_cmd = app.add_subcommand("train", "Train one run and write its directory");
  train_cmd->add_option("--config", config_path, "Run config file")->required();
  train_cmd->add_option("--out", out_dir, "Run directory")->required();

  std::string checkpoint_path, data_path, weights_mode = "learned";
  std::size_t gating_k = 0;
  std::uint64_t eval_seed = 0;
  std::size_t eval_tokens = 256;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_path, "Dataset file (source<TAB>target per line)")->required();
  eval_cmd->add_option("--weights-mode", weights_mode, "learned, random or uniform")
      ->check(CLI::IsMember({"learned", "random", "uniform"}));
  auto* gating_opt = eval_cmd->add_option("--gating-k", gating_k, "Keep only the k largest-alpha branches");
  eval_cmd->add_option("--seed", eval_seed, "Seed for random weights");
  eval_cmd->add_option("--tokens-per-batch", eval_tokens, "Evaluation batch budget");

  std::string seeds_text, compare_config;
  std::string compare_out;
  double threshold = 0.99;
  bool stop_at_threshold = false;
  auto* compare_cmd = app.add_subcommand("compare", "Train baseline and weighted arms over several seeds");
  compare_cmd->add_option("--config", compare_config, "Run config file")->required();
  compare_cmd->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  compare_cmd->add_option("--out", compare_out, "Output directory")->required();
  compare_cmd->add_option("--threshold", threshold, "Accuracy threshold for steps-to-threshold");
  compare_cmd->add_flag("--stop-at-threshold", stop_at_threshold, "End each run once the threshold is reached");

  std::string runs_text, probe_out;
  std::size_t buckets = 10;
  auto* probe_cmd = app.add_subcommand("probe", "Pair train and test losses across run directories");
  probe_cmd->add_option("--runs", runs_text, "Comma-separated run directories")->required();
  probe_cmd->add_option("--out", probe_out, "Pairs CSV; buckets go to <stem>_buckets.csv")->required();
  probe_cmd->add_option("--buckets", buckets, "Number of train-loss buckets");

  std::string export_run, export_format;
  auto* export_cmd = app.add_subcommand("export", "Write CSV or SVG reports for a run directory");
  export_cmd->add_option("--run", export_run, "Run directory")->required();
  export_cmd->add_option("--format", export_format, "csv or svg")->required()->check(CLI::IsMember({"csv", "svg"}));

  std::string dataset_config, dataset_split = "test", dataset_out;
  auto* dataset_cmd = app.add_subcommand("dataset", "Write the synthetic dataset of a config to a file");
  dataset_cmd->add_option("--config", dataset_config, "Run config file")->required();
  dataset_cmd->add_option("--split", dataset_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  dataset_cmd->add_option("--out", dataset_out, "Dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*train_cmd) {
      const wt::RunConfig cfg = wt::load_config(config_path);
      wt::TrainOptions options;
      options.out_dir = fs::path(out_dir);
      const auto result = wt::train(cfg, options);
      json summary{{"steps_run", result.steps_run}, {"records", result.log.size()}, {"out", out_dir}};
      if (!result.log.empty()) {
        const auto& last = result.log.back();
        summary["train_loss"] = last.train_loss;
        if (last.test_loss) summary["test_loss"] = *last.test_loss;
        if (last.test_accuracy) summary["test_accuracy"] = *last.test_accuracy;
      }
      std::cout << summary.dump() << std::endl;
    } else if (*eval_cmd) {
      const wt::Transformer model = wt::checkpoint_load(checkpoint_path);
      const wt::Dataset data = wt::read_dataset(data_path);
      check_dataset_fits(data, model.config());
      wt::EvalOptions options;
      options.tokens_per_batch = eval_tokens;
      if (*gating_opt) {
        if (model.config().variant != wt::Variant::weighted) {
          throw wt::ConfigError("--gating-k applies to weighted checkpoints only");
        }
        if (gating_k < 1 || gating_k > model.config().branches) {
          throw wt::ConfigError("--gating-k must lie in [1, " + std::to_string(model.config().branches) + "]");
        }
        options.gating_k = gating_k;
      }
      const auto mode = wt::parse_weights_mode(weights_mode);
      json out = eval_json(wt::evaluate(model, data, mode, eval_seed, options));
      out["weights_mode"] = weights_mode;
      std::cout << out.dump() << std::endl;
    } else if (*compare_cmd) {
      const wt::RunConfig cfg = wt::load_config(compare_config);
      wt::CompareOptions options;
      options.threshold = threshold;
      options.stop_at_threshold = stop_at_threshold;
      options.out_dir = fs::path(compare_out);
      fs::create_directories(compare_out);
      const auto report = wt::compare(cfg, parse_seeds(seeds_text), options);
      write_file(fs::path(compare_out) / "report.json", wt::compare_report_json(report) + "\n");
      const std::string text = wt::compare_report_text(report);
      write_file(fs::path(compare_out) / "report.txt", text);
      std::cout << text;
    } else if (*probe_cmd) {
      std::vector<wt::ProbeRun> runs;
      for (const auto& dir : split_list(runs_text)) {
        runs.push_back({run_label(dir), wt::read_metrics(fs::path(dir) / "metrics.jsonl")});
      }
      const auto probe = wt::regularization_probe(runs, buckets);
      const fs::path pairs_path(probe_out);
      const fs::path buckets_path =
          pairs_path.parent_path() / (pairs_path.stem().string() + "_buckets" + pairs_path.extension().string());
      write_file(pairs_path, probe.pairs_csv);
      write_file(buckets_path, probe.buckets_csv);
      json summary{{"pairs", probe.pair_count}, {"buckets", probe.buckets.size()},
                   {"pairs_csv", pairs_path.string()}, {"buckets_csv", buckets_path.string()}};
      const auto win = wt::probe_win_fraction(probe, "weighted", "baseline");
      summary["weighted_win_fraction"] = win ? json(*win) : json(nullptr);
      std::cout << summary.dump() << std::endl;
    } else if (*export_cmd) {
      for (const auto& path : wt::export_report(export_run, export_format)) std::cout << path.string() << "\n";
    } else if (*dataset_cmd) {
      const wt::RunConfig cfg = wt::load_config(dataset_config);
      const auto split = dataset_split == "train" ? wt::Split::train : wt::Split::test;
      const auto data = wt::generate_dataset(cfg.task, split);
      wt::write_dataset(data, dataset_out);
      std::cout << json{{"pairs", data.size()}, {"out", dataset_out}}.dump() << std::endl;
    }
  } catch (const wt::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
