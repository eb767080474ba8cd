#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wt {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kFirstContentId = 3;

using TokenSeq = std::vector<int>;

struct SequencePair {
  TokenSeq source;
  TokenSeq target;

  bool operator==(const SequencePair&) const = default;
  auto operator<=>(const SequencePair&) const = default;
};

using Dataset = std::vector<SequencePair>;

// Padded, row-major token matrices for one batch. Pad (id 0) appears only in
// trailing positions. target_in is BOS followed by the target; target_out is
// the target followed by EOS.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;  // target length + 1 (room for BOS / EOS)
  std::vector<int> source;      // batch x src_len
  std::vector<int> target_in;   // batch x tgt_len
  std::vector<int> target_out;  // batch x tgt_len
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;  // excluding BOS / EOS

  // Number of non-pad entries in target_out.
  std::size_t target_tokens() const;
  // Source sequence r with padding stripped.
  TokenSeq source_row(std::size_t r) const;
};

TokenBatch make_batch(const Dataset& pairs);

enum class Task { copy, reverse };

Task parse_task(const std::string& name);
std::string task_name(Task task);

enum class Split { train, test };

// vocab_size counts every id including the reserved 0..2, so content tokens
// are drawn from [3, vocab_size).
struct SyntheticTaskSpec {
  Task task = Task::copy;
  int vocab_size = 16;
  std::size_t min_len = 5;
  std::size_t max_len = 12;
  std::size_t samples = 2000;
  std::uint64_t seed = 1;

  void validate() const;
};

// Which split a source sequence belongs to. A pure function of content, so
// the two splits never share a sequence.
Split split_of(const TokenSeq& source);

// Draws sequences from the seeded stream, keeping those that fall in the
// requested split, until `count` pairs are collected. The train split
// collects spec.samples pairs and the test split spec.samples / 10 (at
// least one).
Dataset generate_dataset(const SyntheticTaskSpec& spec, Split split = Split::train);
std::size_t split_size(const SyntheticTaskSpec& spec, Split split);

// Sorts by length and groups greedily so that rows * longest pair length
// stays within tokens_per_batch. Every pair appears exactly once.
std::vector<TokenBatch> batch_by_length(const Dataset& data, std::size_t tokens_per_batch);

// Fraction of padded-matrix entries that are padding, summed over batches.
double padding_fraction(const std::vector<TokenBatch>& batches);

// Matches over positions where target != pad, divided by their count.
double token_accuracy(std::span<const int> predicted, std::span<const int> target, int pad_id = kPadId);

// Corpus BLEU with clipped n-gram precisions for n = 1..max_n and the
// brevity penalty; no smoothing, so any zero precision gives 0.
double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   std::size_t max_n = 4);

// One pair per line: space-separated ids, a tab, space-separated ids.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace wt
