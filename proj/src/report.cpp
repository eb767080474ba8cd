#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "wt/errors.hpp"
#include "wt/harness.hpp"

namespace wt {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

json arm_json(const ArmSummary& arm) {
  json runs = json::array();
  for (const auto& r : arm.runs) {
    runs.push_back({{"seed", r.seed},
                    {"steps_to_threshold", r.steps_to_threshold ? json(*r.steps_to_threshold) : json(nullptr)},
                    {"steps_run", r.steps_run},
                    {"token_accuracy", r.final_metrics.token_accuracy},
                    {"bleu", r.final_metrics.bleu},
                    {"test_loss", r.final_metrics.test_loss}});
  }
  return {{"label", arm.label},
          {"parameter_count", arm.parameter_count},
          {"branch_parameter_count", arm.branch_parameter_count},
          {"reached", arm.reached},
          {"median_steps", arm.median_steps ? json(*arm.median_steps) : json(nullptr)},
          {"runs", runs}};
}

}  // namespace

std::string compare_report_json(const CompareReport& report) {
  json j{{"threshold", report.threshold},
         {"first", arm_json(report.first)},
         {"second", arm_json(report.second)},
         {"parameter_difference", report.parameter_difference},
         {"median_steps_difference",
          report.median_steps_difference ? json(*report.median_steps_difference) : json(nullptr)},
         {"final_accuracy_difference", report.final_accuracy_difference}};
  return j.dump(2);
}

std::string compare_report_text(const CompareReport& report) {
  std::ostringstream out;
  out << "threshold " << report.threshold << "\n";
  for (const ArmSummary* arm : {&report.first, &report.second}) {
    out << arm->label << ": " << arm->parameter_count << " parameters, reached " << arm->reached << "/"
        << arm->runs.size() << ", median steps "
        << (arm->median_steps ? num(*arm->median_steps) : std::string("n/a")) << "\n";
    for (const auto& r : arm->runs) {
      out << "  seed " << r.seed << ": steps "
          << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : std::string("n/a")) << " of "
          << r.steps_run << ", accuracy " << r.final_metrics.token_accuracy << ", bleu " << r.final_metrics.bleu
          << ", test loss " << r.final_metrics.test_loss << "\n";
    }
  }
  out << report.first.label << " - " << report.second.label << ": parameters " << report.parameter_difference
      << ", median steps "
      << (report.median_steps_difference ? num(*report.median_steps_difference) : std::string("n/a"))
      << ", accuracy " << report.final_accuracy_difference << "\n";
  for (const ArmSummary* arm : {&report.first, &report.second}) {
    if (arm->branch_parameter_count == 0) continue;
    const std::size_t per_stack = arm->branch_parameter_count / 2;
    out << arm->label << " branch weights: " << arm->branch_parameter_count
        << " = 2*M*(encoder + decoder layers), every layer of both stacks owns its kappa and alpha; counting one "
           "stack only gives "
        << per_stack << " (the reading under which 6 layers of 16 branches make 192)\n";
  }
  return out.str();
}

ProbeResult regularization_probe(const std::vector<ProbeRun>& runs, std::size_t bucket_count) {
  if (bucket_count == 0) throw ValueError("probe needs at least one bucket");
  ProbeResult result;
  std::map<std::string, std::size_t> label_index;
  // Per label: (train_loss, test_loss) pairs.
  std::vector<std::vector<std::pair<double, double>>> pairs;
  std::ostringstream csv;
  csv << "label,step,train_loss,test_loss\n";
  for (const auto& run : runs) {
    auto [it, fresh] = label_index.try_emplace(run.label, result.labels.size());
    if (fresh) {
      result.labels.push_back(run.label);
      pairs.emplace_back();
    }
    bool any = false;
    for (const auto& r : run.log) {
      if (!r.test_loss) continue;
      any = true;
      pairs[it->second].emplace_back(r.train_loss, *r.test_loss);
      csv << run.label << ',' << r.step << ',' << num(r.train_loss) << ',' << num(*r.test_loss) << '\n';
      ++result.pair_count;
    }
    if (!run.log.empty() && !any) throw ValueError("run '" + run.label + "' has no test-loss entries");
  }
  result.pairs_csv = csv.str();

  std::ostringstream buckets_csv;
  buckets_csv << "bucket,lower,upper";
  for (const auto& label : result.labels) buckets_csv << ',' << label << "_mean_test_loss";
  buckets_csv << '\n';

  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool all_present = !pairs.empty();
  for (const auto& p : pairs) {
    if (p.empty()) {
      all_present = false;
      break;
    }
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    lower = std::max(lower, lo->first);
    upper = std::min(upper, hi->first);
  }
  if (all_present && lower < upper) {
    const double width = (upper - lower) / static_cast<double>(bucket_count);
    std::vector<std::vector<double>> sums(bucket_count, std::vector<double>(pairs.size(), 0.0));
    std::vector<std::vector<std::size_t>> counts(bucket_count, std::vector<std::size_t>(pairs.size(), 0));
    for (std::size_t l = 0; l < pairs.size(); ++l) {
      for (const auto& [train_loss, test_loss] : pairs[l]) {
        if (train_loss < lower || train_loss > upper) continue;
        const auto b = std::min(bucket_count - 1, static_cast<std::size_t>((train_loss - lower) / width));
        sums[b][l] += test_loss;
        ++counts[b][l];
      }
    }
    for (std::size_t b = 0; b < bucket_count; ++b) {
      ProbeBucket bucket;
      bucket.lower = lower + width * static_cast<double>(b);
      bucket.upper = b + 1 == bucket_count ? upper : lower + width * static_cast<double>(b + 1);
      buckets_csv << b << ',' << num(bucket.lower) << ',' << num(bucket.upper);
      for (std::size_t l = 0; l < pairs.size(); ++l) {
        if (counts[b][l]) bucket.mean_test_loss.push_back(sums[b][l] / static_cast<double>(counts[b][l]));
        else bucket.mean_test_loss.push_back(std::nullopt);
        buckets_csv << ',' << opt_num(bucket.mean_test_loss.back());
      }
      buckets_csv << '\n';
      result.buckets.push_back(std::move(bucket));
    }
  }
  result.buckets_csv = buckets_csv.str();
  return result;
}

std::optional<double> probe_win_fraction(const ProbeResult& probe, const std::string& better,
                                         const std::string& other) {
  const auto a = std::find(probe.labels.begin(), probe.labels.end(), better);
  const auto b = std::find(probe.labels.begin(), probe.labels.end(), other);
  if (a == probe.labels.end() || b == probe.labels.end()) return std::nullopt;
  const auto ia = static_cast<std::size_t>(a - probe.labels.begin());
  const auto ib = static_cast<std::size_t>(b - probe.labels.begin());
  std::size_t shared = 0, wins = 0;
  for (const auto& bucket : probe.buckets) {
    const auto& x = bucket.mean_test_loss[ia];
    const auto& y = bucket.mean_test_loss[ib];
    if (!x || !y) continue;
    ++shared;
    if (*x <= *y) ++wins;
  }
  if (shared == 0) return std::nullopt;
  return static_cast<double>(wins) / static_cast<double>(shared);
}

std::vector<double> mean_filter(std::span<const double> series, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ValueError("mean filter window must be odd and positive");
  if (window > series.size()) {
    throw ValueError("mean filter window " + std::to_string(window) + " exceeds series length " +
                     std::to_string(series.size()));
  }
  const std::size_t half = window / 2;
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(series.size() - 1, i + half);
    double total = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) total += series[j];
    out[i] = total / static_cast<double>(hi - lo + 1);
  }
  return out;
}

WeightTrajectories weight_trajectories(const std::vector<MetricsRecord>& log, std::size_t window) {
  WeightTrajectories t;
  if (log.empty()) return t;
  const std::size_t layers = log.front().kappa.size();
  const std::size_t branches = layers ? log.front().kappa.front().size() : 0;
  t.kappa.assign(layers, std::vector<std::vector<double>>(branches));
  t.alpha.assign(layers, std::vector<std::vector<double>>(branches));
  for (const auto& r : log) {
    t.steps.push_back(r.step);
    if (r.kappa.size() != layers || r.alpha.size() != layers) throw FormatError("records disagree on layer count");
    for (std::size_t l = 0; l < layers; ++l) {
      if (r.kappa[l].size() != branches || r.alpha[l].size() != branches) {
        throw FormatError("records disagree on branch count");
      }
      for (std::size_t i = 0; i < branches; ++i) {
        t.kappa[l][i].push_back(r.kappa[l][i]);
        t.alpha[l][i].push_back(r.alpha[l][i]);
      }
    }
  }
  for (auto* series : {&t.kappa, &t.alpha}) {
    for (auto& layer : *series) {
      for (auto& s : layer) s = mean_filter(s, window);
    }
  }
  return t;
}

std::string metrics_csv(const std::vector<MetricsRecord>& log) {
  std::ostringstream out;
  out << "step,lr_standard,lr_branch,train_loss,test_loss,test_accuracy,wall_ms";
  const std::size_t layers = log.empty() ? 0 : log.front().kappa.size();
  const std::size_t branches = layers ? log.front().kappa.front().size() : 0;
  for (const char* name : {"kappa", "alpha"}) {
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t i = 0; i < branches; ++i) out << ',' << name << '_' << l << '_' << i;
    }
  }
  out << '\n';
  for (const auto& r : log) {
    out << r.step << ',' << num(r.lr_standard) << ',' << num(r.lr_branch) << ',' << num(r.train_loss) << ','
        << opt_num(r.test_loss) << ',' << opt_num(r.test_accuracy) << ',' << num(r.wall_ms);
    for (const auto* weights : {&r.kappa, &r.alpha}) {
      if (weights->size() != layers) throw FormatError("records disagree on layer count");
      for (const auto& layer : *weights) {
        if (layer.size() != branches) throw FormatError("records disagree on branch count");
        for (double w : layer) out << ',' << num(w);
      }
    }
    out << '\n';
  }
  return out.str();
}

namespace {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string svg_chart(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  constexpr double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::ostringstream out;
  out.precision(6);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    out << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fx << "</text>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fy << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n"
      << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    out << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(k) + 6;
    out << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << s.name << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> export_report(const std::filesystem::path& run_dir, const std::string& format) {
  if (format != "csv" && format != "svg") throw ValueError("unknown export format '" + format + "' (csv or svg)");
  const auto metrics_path = run_dir / "metrics.jsonl";
  if (!std::filesystem::exists(metrics_path)) throw IoError("missing metrics file " + metrics_path.string());
  const auto log = read_metrics(metrics_path);
  std::vector<std::filesystem::path> written;

  if (format == "csv") {
    written.push_back(run_dir / "metrics.csv");
    write_file(written.back(), metrics_csv(log));
    return written;
  }

  Series train{"train loss", {}, {}}, test{"test loss", {}, {}};
  Series lr_s{"lr standard", {}, {}}, lr_b{"lr branch", {}, {}};
  for (const auto& r : log) {
    const double x = static_cast<double>(r.step);
    train.x.push_back(x), train.y.push_back(r.train_loss);
    lr_s.x.push_back(x), lr_s.y.push_back(r.lr_standard);
    lr_b.x.push_back(x), lr_b.y.push_back(r.lr_branch);
    if (r.test_loss) test.x.push_back(x), test.y.push_back(*r.test_loss);
  }
  written.push_back(run_dir / "loss.svg");
  write_file(written.back(), svg_chart("loss", "loss", {train, test}));
  written.push_back(run_dir / "lr.svg");
  write_file(written.back(), svg_chart("learning rate", "lr", {lr_s, lr_b}));

  if (!log.empty() && !log.front().kappa.empty()) {
    std::size_t window = std::min<std::size_t>(5, log.size());
    if (window % 2 == 0) --window;
    const auto traj = weight_trajectories(log, window);
    std::vector<double> steps(traj.steps.begin(), traj.steps.end());
    for (std::size_t l = 0; l < traj.kappa.size(); ++l) {
      for (const char* name : {"kappa", "alpha"}) {
        const auto& layer = std::string(name) == "kappa" ? traj.kappa[l] : traj.alpha[l];
        std::vector<Series> series;
        for (std::size_t i = 0; i < layer.size(); ++i) {
          series.push_back({std::string(name) + " " + std::to_string(i), steps, layer[i]});
        }
        written.push_back(run_dir / (std::string(name) + "_layer" + std::to_string(l) + ".svg"));
        write_file(written.back(), svg_chart(std::string(name) + ", layer " + std::to_string(l), name, series));
      }
    }
  }
  return written;
}

}  // namespace wt
