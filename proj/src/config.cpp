#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "wt/errors.hpp"
#include "wt/harness.hpp"

namespace wt {

std::string weights_mode_name(WeightsMode m) {
  switch (m) {
    case WeightsMode::learned: return "learned";
    case WeightsMode::random: return "random";
    case WeightsMode::uniform: return "uniform";
  }
  return "learned";
}

WeightsMode parse_weights_mode(const std::string& name) {
  if (name == "learned") return WeightsMode::learned;
  if (name == "random") return WeightsMode::random;
  if (name == "uniform") return WeightsMode::uniform;
  throw ConfigError("unknown weights_mode '" + name + "' (expected learned, random or uniform)");
}

void RunConfig::sync() {
  schedule.d_model = model.d_model;
  schedule.n_layers = model.n_layers;
  task.vocab_size = model.vocab_size;
  task.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  schedule.validate();
  task.validate();
  if (schedule.d_model != model.d_model || schedule.n_layers != model.n_layers) {
    throw ConfigError("schedule dimensions disagree with the model");
  }
  if (task.vocab_size != model.vocab_size) throw ConfigError("task and model vocabularies disagree");
  if (task.max_len + 1 > model.max_len) {
    throw ConfigError("max_len must exceed max_len_seq to leave room for BOS/EOS");
  }
  if (tokens_per_batch < task.max_len) throw ConfigError("tokens_per_batch must be at least max_len_seq");
  if (log_interval < 1) throw ConfigError("log_interval must be positive");
  if (gating_k) {
    if (model.variant != Variant::weighted) throw ConfigError("gating_k applies to the weighted variant only");
    if (*gating_k < 1 || *gating_k > model.branches) throw ConfigError("gating_k must lie in [1, branches]");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + value + "' for key " + key);
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) throw ConfigError("bad value '" + value + "' for key " + key);
  return out;
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  bool branches_set = false;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (seen[key]++) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);

    if (key == "variant") cfg.model.variant = parse_variant(value);
    else if (key == "n_layers") cfg.model.n_layers = parse_number<std::size_t>(key, value);
    else if (key == "d_model") cfg.model.d_model = parse_number<std::size_t>(key, value);
    else if (key == "d_ff") cfg.model.d_ff = parse_number<std::size_t>(key, value);
    else if (key == "heads") cfg.model.heads = parse_number<std::size_t>(key, value);
    else if (key == "branches") {
      branches_set = value != "none" && value != "NA";
      if (branches_set) cfg.model.branches = parse_number<std::size_t>(key, value);
    }
    else if (key == "p_drop") cfg.model.p_drop = parse_double(key, value);
    else if (key == "epsilon_ls") cfg.model.epsilon_ls = parse_double(key, value);
    else if (key == "vocab_size") cfg.model.vocab_size = parse_number<int>(key, value);
    else if (key == "max_len") cfg.model.max_len = parse_number<std::size_t>(key, value);
    else if (key == "task") cfg.task.task = parse_task(value);
    else if (key == "min_len") cfg.task.min_len = parse_number<std::size_t>(key, value);
    else if (key == "max_len_seq") cfg.task.max_len = parse_number<std::size_t>(key, value);
    else if (key == "samples") cfg.task.samples = parse_number<std::size_t>(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "tokens_per_batch") cfg.tokens_per_batch = parse_number<std::size_t>(key, value);
    else if (key == "total_steps") cfg.schedule.total_steps = parse_number<long>(key, value);
    else if (key == "warmup_main") cfg.schedule.warmup_main = parse_number<long>(key, value);
    else if (key == "warmup_branch") cfg.schedule.warmup_branch = parse_number<long>(key, value);
    else if (key == "freeze_fraction") cfg.schedule.freeze_fraction = parse_double(key, value);
    else if (key == "log_interval") cfg.log_interval = parse_number<long>(key, value);
    else if (key == "weights_mode") cfg.weights_mode = parse_weights_mode(value);
    else if (key == "gating_k") {
      if (value == "none") cfg.gating_k.reset();
      else cfg.gating_k = parse_number<std::size_t>(key, value);
    }
    else if (key == "weight_param_mode") cfg.model.weight_param_mode = parse_weight_param_mode(value);
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  if (!branches_set) cfg.model.branches = cfg.model.heads;
  cfg.sync();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream out;
  out << "variant = " << variant_name(c.model.variant) << '\n'
      << "n_layers = " << c.model.n_layers << '\n'
      << "d_model = " << c.model.d_model << '\n'
      << "d_ff = " << c.model.d_ff << '\n'
      << "heads = " << c.model.heads << '\n'
      << "branches = " << c.model.branches << '\n'
      << "p_drop = " << shortest(c.model.p_drop) << '\n'
      << "epsilon_ls = " << shortest(c.model.epsilon_ls) << '\n'
      << "vocab_size = " << c.model.vocab_size << '\n'
      << "max_len = " << c.model.max_len << '\n'
      << "task = " << task_name(c.task.task) << '\n'
      << "min_len = " << c.task.min_len << '\n'
      << "max_len_seq = " << c.task.max_len << '\n'
      << "samples = " << c.task.samples << '\n'
      << "seed = " << c.seed << '\n'
      << "tokens_per_batch = " << c.tokens_per_batch << '\n'
      << "total_steps = " << c.schedule.total_steps << '\n'
      << "warmup_main = " << c.schedule.warmup_main << '\n'
      << "warmup_branch = " << c.schedule.warmup_branch << '\n'
      << "freeze_fraction = " << shortest(c.schedule.freeze_fraction) << '\n'
      << "log_interval = " << c.log_interval << '\n'
      << "weights_mode = " << weights_mode_name(c.weights_mode) << '\n'
      << "gating_k = " << (c.gating_k ? std::to_string(*c.gating_k) : std::string("none")) << '\n'
      << "weight_param_mode = " << weight_param_mode_name(c.model.weight_param_mode) << '\n';
  return out.str();
}

}  // namespace wt
