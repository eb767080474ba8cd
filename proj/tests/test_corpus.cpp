#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "wt/autodiff.hpp"
#include "wt/corpus.hpp"
#include "wt/errors.hpp"

using namespace wt;
namespace fs = std::filesystem;

namespace {

SyntheticTaskSpec spec_for(Task task, std::uint64_t seed = 3) {
  SyntheticTaskSpec s;
  s.task = task;
  s.samples = 300;
  s.seed = seed;
  return s;
}

Dataset flatten(const std::vector<TokenBatch>& batches) {
  Dataset out;
  for (const auto& b : batches) {
    for (std::size_t r = 0; r < b.batch; ++r) {
      SequencePair p;
      p.source = b.source_row(r);
      for (std::size_t t = 0; t < b.tgt_lengths[r]; ++t) p.target.push_back(b.target_out[r * b.tgt_len + t]);
      out.push_back(p);
    }
  }
  return out;
}

// Same budget rule as batch_by_length, applied to a shuffled order.
std::vector<TokenBatch> random_grouping(Dataset data, std::size_t budget, std::mt19937_64& rng) {
  std::shuffle(data.begin(), data.end(), rng);
  std::vector<TokenBatch> out;
  Dataset group;
  std::size_t longest = 0;
  for (const auto& p : data) {
    const std::size_t len = std::max(p.source.size(), p.target.size());
    const std::size_t next = std::max(longest, len);
    if (!group.empty() && next * (group.size() + 1) > budget) {
      out.push_back(make_batch(group));
      group.clear();
      longest = 0;
    }
    group.push_back(p);
    longest = std::max(longest, len);
  }
  if (!group.empty()) out.push_back(make_batch(group));
  return out;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("wt_corpus_" + name); }

}  // namespace

TEST_CASE("copy and reverse targets") {
  for (Task task : {Task::copy, Task::reverse}) {
    const Dataset d = generate_dataset(spec_for(task));
    REQUIRE(d.size() == 300);
    for (const auto& p : d) {
      TokenSeq expected = p.source;
      if (task == Task::reverse) std::reverse(expected.begin(), expected.end());
      CHECK(p.target == expected);
      CHECK(p.source.size() >= 5);
      CHECK(p.source.size() <= 12);
      for (int id : p.source) {
        CHECK(id >= kFirstContentId);
        CHECK(id < 16);
      }
    }
  }
}

TEST_CASE("dataset generation is deterministic and seed dependent") {
  const auto spec = spec_for(Task::copy);
  CHECK(generate_dataset(spec) == generate_dataset(spec));
  CHECK(generate_dataset(spec, Split::test) == generate_dataset(spec, Split::test));
  CHECK(generate_dataset(spec) != generate_dataset(spec_for(Task::copy, 4)));
}

TEST_CASE("train and test splits are disjoint") {
  const auto spec = spec_for(Task::copy);
  const Dataset train = generate_dataset(spec, Split::train);
  const Dataset test = generate_dataset(spec, Split::test);
  CHECK(test.size() == 30);
  CHECK(split_size(spec, Split::test) == 30);
  std::set<TokenSeq> seen;
  for (const auto& p : train) seen.insert(p.source);
  for (const auto& p : test) CHECK(seen.count(p.source) == 0);
  for (const auto& p : train) CHECK(split_of(p.source) == Split::train);
  for (const auto& p : test) CHECK(split_of(p.source) == Split::test);
}

TEST_CASE("task spec validation") {
  SyntheticTaskSpec s;
  s.min_len = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SyntheticTaskSpec{};
  s.max_len = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SyntheticTaskSpec{};
  s.vocab_size = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(parse_task("sort"), ConfigError);
  CHECK(parse_task(task_name(Task::reverse)) == Task::reverse);
}

TEST_CASE("batch layout") {
  const Dataset pairs{{{5, 9, 4}, {5, 9, 4}}, {{7, 8}, {7, 8}}};
  const TokenBatch b = make_batch(pairs);
  CHECK(b.batch == 2);
  CHECK(b.src_len == 3);
  CHECK(b.tgt_len == 4);
  CHECK(b.source == std::vector<int>{5, 9, 4, 7, 8, 0});
  CHECK(b.target_in == std::vector<int>{1, 5, 9, 4, 1, 7, 8, 0});
  CHECK(b.target_out == std::vector<int>{5, 9, 4, 2, 7, 8, 2, 0});
  CHECK(b.target_tokens() == 7);
  for (std::size_t r = 0; r < b.batch; ++r) {
    CHECK(b.target_in[r * b.tgt_len] == kBosId);
    for (std::size_t t = 1; t <= b.tgt_lengths[r]; ++t) {
      CHECK(b.target_in[r * b.tgt_len + t] == b.target_out[r * b.tgt_len + t - 1]);
    }
  }
}

TEST_CASE("equal lengths fill batches of four") {
  Dataset d;
  for (int i = 0; i < 12; ++i) d.push_back({{3 + i % 10, 4, 5, 6}, {3 + i % 10, 4, 5, 6}});
  const auto batches = batch_by_length(d, 4 * 4);
  REQUIRE(batches.size() == 3);
  for (const auto& b : batches) CHECK(b.batch == 4);
}

TEST_CASE("batching conserves the dataset and respects the budget") {
  const Dataset d = generate_dataset(spec_for(Task::reverse));
  const auto batches = batch_by_length(d, 64);
  Dataset out = flatten(batches);
  Dataset in = d;
  std::sort(out.begin(), out.end());
  std::sort(in.begin(), in.end());
  CHECK(out == in);
  for (const auto& b : batches) {
    CHECK(b.batch * std::max(b.src_len, b.tgt_len - 1) <= 64);
    for (std::size_t r = 0; r < b.batch; ++r) {
      bool padding = false;
      for (std::size_t t = 0; t < b.src_len; ++t) {
        const bool pad = b.source[r * b.src_len + t] == kPadId;
        CHECK_FALSE((padding && !pad));
        padding = padding || pad;
      }
    }
  }
  CHECK_THROWS_AS(batch_by_length(d, 8), ValueError);
}

TEST_CASE("length batching pads no more than random grouping") {
  const Dataset d = generate_dataset(spec_for(Task::copy, 9));
  const double sorted = padding_fraction(batch_by_length(d, 64));
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) CHECK(sorted <= padding_fraction(random_grouping(d, 64, rng)));
}

TEST_CASE("token accuracy") {
  const std::vector<int> target{5, 6, 7, 2, 0, 0};
  CHECK(token_accuracy(target, target) == 1.0);
  CHECK(token_accuracy(std::vector<int>{3, 3, 3, 3, 9, 9}, target) == 0.0);
  CHECK(token_accuracy(std::vector<int>{5, 6, 4, 2, 1, 1}, target) == 0.75);
  CHECK_THROWS_AS(token_accuracy(std::vector<int>{1, 2}, std::vector<int>{0, 0}), ValueError);
  CHECK_THROWS_AS(token_accuracy(std::vector<int>{1}, target), DimensionError);
}

TEST_CASE("bleu examples") {
  const std::vector<TokenSeq> refs{{3, 4, 5, 6, 7}, {8, 9, 10, 11}};
  CHECK(corpus_bleu(refs, refs) == 1.0);
  CHECK(corpus_bleu({{12, 13, 14, 15}}, {{3, 4, 5, 6}}) == 0.0);

  // a b c d e against a b c d f
  const double score = corpus_bleu({{3, 4, 5, 6, 7}}, {{3, 4, 5, 6, 8}});
  CHECK(std::abs(score - std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25)) < 1e-15);
  CHECK(std::abs(score - 0.6687) < 1e-4);

  // Brevity penalty: 4 of 5 reference tokens, all n-grams matching.
  CHECK(std::abs(corpus_bleu({{3, 4, 5, 6}}, {{3, 4, 5, 6, 7}}) - std::exp(1.0 - 5.0 / 4.0)) < 1e-15);
  // Clipping: repeated unigram counts at most once per reference occurrence.
  CHECK(corpus_bleu({{3, 3, 3, 3}}, {{3, 4, 5, 6}}, 1) == 0.25);

  CHECK_THROWS_AS(corpus_bleu({}, {}), ValueError);
  CHECK_THROWS_AS(corpus_bleu({{3}}, {}), DimensionError);
}

TEST_CASE("bleu properties") {
  Rng rng(17);
  std::uniform_int_distribution<int> tok(3, 8), len(4, 9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenSeq> hyp, ref;
    for (int i = 0; i < 6; ++i) {
      TokenSeq h, r;
      for (int k = len(rng); k > 0; --k) h.push_back(tok(rng));
      for (int k = len(rng); k > 0; --k) r.push_back(tok(rng));
      hyp.push_back(h);
      ref.push_back(r);
    }
    CHECK(corpus_bleu(ref, ref) == 1.0);
    const double score = corpus_bleu(hyp, ref);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
    std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<TokenSeq> hp, rp;
    for (std::size_t i : order) hp.push_back(hyp[i]), rp.push_back(ref[i]);
    CHECK(corpus_bleu(hp, rp) == doctest::Approx(score).epsilon(1e-14));
  }
}

TEST_CASE("dataset files round trip") {
  const Dataset d = generate_dataset(spec_for(Task::reverse));
  const fs::path path = temp_file("roundtrip.tsv");
  write_dataset(d, path);
  CHECK(read_dataset(path) == d);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  CHECK(std::count(first.begin(), first.end(), '\t') == 1);
  fs::remove(path);
}

TEST_CASE("malformed dataset files are rejected") {
  const fs::path path = temp_file("bad.tsv");
  for (const char* text : {"3 4 x\t3 4\n", "3 4 5\n", "3 4\t5\t6\n", "\t3 4\n"}) {
    std::ofstream(path) << text;
    CHECK_THROWS_AS(read_dataset(path), FormatError);
  }
  fs::remove(path);
  CHECK_THROWS_AS(read_dataset(temp_file("missing.tsv")), IoError);
}
