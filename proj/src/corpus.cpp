#include "wt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "wt/errors.hpp"

namespace wt {

std::size_t TokenBatch::target_tokens() const {
  return static_cast<std::size_t>(
      std::count_if(target_out.begin(), target_out.end(), [](int t) { return t != kPadId; }));
}

TokenSeq TokenBatch::source_row(std::size_t r) const {
  auto first = source.begin() + static_cast<std::ptrdiff_t>(r * src_len);
  return TokenSeq(first, first + static_cast<std::ptrdiff_t>(src_lengths.at(r)));
}

TokenBatch make_batch(const Dataset& pairs) {
  if (pairs.empty()) throw ValueError("cannot batch an empty set of pairs");
  TokenBatch b;
  b.batch = pairs.size();
  for (const auto& p : pairs) {
    if (p.source.empty()) throw ValueError("source sequence is empty");
    b.src_len = std::max(b.src_len, p.source.size());
    b.tgt_len = std::max(b.tgt_len, p.target.size() + 1);
  }
  b.source.assign(b.batch * b.src_len, kPadId);
  b.target_in.assign(b.batch * b.tgt_len, kPadId);
  b.target_out.assign(b.batch * b.tgt_len, kPadId);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const auto& p = pairs[r];
    std::copy(p.source.begin(), p.source.end(), b.source.begin() + static_cast<std::ptrdiff_t>(r * b.src_len));
    int* in = b.target_in.data() + r * b.tgt_len;
    int* out = b.target_out.data() + r * b.tgt_len;
    in[0] = kBosId;
    for (std::size_t t = 0; t < p.target.size(); ++t) {
      in[t + 1] = p.target[t];
      out[t] = p.target[t];
    }
    out[p.target.size()] = kEosId;
    b.src_lengths.push_back(p.source.size());
    b.tgt_lengths.push_back(p.target.size());
  }
  return b;
}

Task parse_task(const std::string& name) {
  if (name == "copy") return Task::copy;
  if (name == "reverse") return Task::reverse;
  throw ConfigError("unknown task '" + name + "' (expected copy or reverse)");
}

std::string task_name(Task task) { return task == Task::copy ? "copy" : "reverse"; }

void SyntheticTaskSpec::validate() const {
  if (min_len < 1) throw ConfigError("min_len must be at least 1");
  if (max_len < min_len) throw ConfigError("max_len_seq must be at least min_len");
  if (vocab_size <= kFirstContentId) {
    throw ConfigError("vocab_size must leave room for content tokens beyond reserved ids 0-2");
  }
  if (samples < 1) throw ConfigError("samples must be positive");
}

Split split_of(const TokenSeq& source) {
  // FNV-1a over the ids.
  std::uint64_t h = 1469598103934665603ULL;
  for (int t : source) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
    h *= 1099511628211ULL;
  }
  return h % 10 == 0 ? Split::test : Split::train;
}

std::size_t split_size(const SyntheticTaskSpec& spec, Split split) {
  return split == Split::train ? spec.samples : std::max<std::size_t>(1, spec.samples / 10);
}

Dataset generate_dataset(const SyntheticTaskSpec& spec, Split split) {
  spec.validate();
  const std::size_t wanted = split_size(spec, split);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> token(kFirstContentId, spec.vocab_size - 1);
  Dataset out;
  out.reserve(wanted);
  const std::size_t draw_limit = 1000 * wanted + 10000;
  for (std::size_t draws = 0; out.size() < wanted; ++draws) {
    if (draws == draw_limit) {
      throw ValueError("task space too small to fill the requested split");
    }
    TokenSeq source(length(rng));
    for (int& t : source) t = token(rng);
    if (split_of(source) != split) continue;
    TokenSeq target = source;
    if (spec.task == Task::reverse) std::reverse(target.begin(), target.end());
    out.push_back({std::move(source), std::move(target)});
  }
  return out;
}

namespace {

std::size_t pair_length(const SequencePair& p) { return std::max(p.source.size(), p.target.size()); }

}  // namespace

std::vector<TokenBatch> batch_by_length(const Dataset& data, std::size_t tokens_per_batch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pair_length(data[a]) < pair_length(data[b]);
  });
  std::vector<TokenBatch> batches;
  Dataset group;
  std::size_t longest = 0;
  for (std::size_t idx : order) {
    const std::size_t len = pair_length(data[idx]);
    if (len > tokens_per_batch) {
      throw ValueError("sequence of length " + std::to_string(len) + " exceeds tokens_per_batch " +
                       std::to_string(tokens_per_batch));
    }
    const std::size_t grown = std::max(longest, len);
    if (!group.empty() && (group.size() + 1) * grown > tokens_per_batch) {
      batches.push_back(make_batch(group));
      group.clear();
      longest = 0;
    }
    group.push_back(data[idx]);
    longest = std::max(longest, len);
  }
  if (!group.empty()) batches.push_back(make_batch(group));
  return batches;
}

double padding_fraction(const std::vector<TokenBatch>& batches) {
  std::size_t cells = 0, pads = 0;
  for (const auto& b : batches) {
    std::size_t longest = 0;
    for (std::size_t r = 0; r < b.batch; ++r) {
      longest = std::max({longest, b.src_lengths[r], b.tgt_lengths[r]});
    }
    cells += b.batch * longest;
    for (std::size_t r = 0; r < b.batch; ++r) pads += longest - std::max(b.src_lengths[r], b.tgt_lengths[r]);
  }
  return cells == 0 ? 0.0 : static_cast<double>(pads) / static_cast<double>(cells);
}

double token_accuracy(std::span<const int> predicted, std::span<const int> target, int pad_id) {
  if (predicted.size() != target.size()) {
    throw DimensionError("token_accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(target.size()) + " targets");
  }
  std::size_t counted = 0, correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == pad_id) continue;
    ++counted;
    if (predicted[i] == target[i]) ++correct;
  }
  if (counted == 0) throw ValueError("token_accuracy: no non-pad positions");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

namespace {

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts count_ngrams(const TokenSeq& seq, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   std::size_t max_n) {
  if (hypotheses.empty()) throw ValueError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw DimensionError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                         std::to_string(references.size()) + " references");
  }
  if (max_n < 1) throw ValueError("corpus_bleu: max_n must be positive");
  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    hyp_len += hypotheses[s].size();
    ref_len += references[s].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const NgramCounts hyp = count_ngrams(hypotheses[s], n);
      const NgramCounts ref = count_ngrams(references[s], n);
      for (const auto& [gram, count] : hyp) {
        total[n - 1] += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double brevity =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  auto write_seq = [&](const TokenSeq& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      out << seq[i];
    }
  };
  for (const auto& p : data) {
    write_seq(p.source);
    out << '\t';
    write_seq(p.target);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  auto parse_seq = [&](const std::string& text, std::size_t line_no) {
    TokenSeq seq;
    std::istringstream fields(text);
    std::string field;
    while (fields >> field) {
      std::size_t used = 0;
      int id = 0;
      try {
        id = std::stoi(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || id < 0) {
        throw FormatError("line " + std::to_string(line_no) + ": bad token id '" + field + "'");
      }
      seq.push_back(id);
    }
    return seq;
  };
  Dataset data;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected exactly one tab");
    }
    SequencePair p{parse_seq(line.substr(0, tab), line_no), parse_seq(line.substr(tab + 1), line_no)};
    if (p.source.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty source");
    data.push_back(std::move(p));
  }
  return data;
}

}  // namespace wt
