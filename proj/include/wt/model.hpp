#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wt/attention.hpp"
#include "wt/autodiff.hpp"
#include "wt/corpus.hpp"

namespace wt {

enum class Variant { baseline, weighted };

// How the branch weights are stored: directly on the simplex (re-projected
// after every update) or as unconstrained logits exposed through softmax.
enum class WeightParamMode { projection, softmax };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
std::string weight_param_mode_name(WeightParamMode m);
WeightParamMode parse_weight_param_mode(const std::string& name);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t heads = 4;
  std::size_t branches = 4;  // ignored for the baseline variant
  double p_drop = 0.1;
  double epsilon_ls = 0.1;
  int vocab_size = 16;
  std::size_t max_len = 64;
  Variant variant = Variant::weighted;
  WeightParamMode weight_param_mode = WeightParamMode::projection;

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { standard, branch };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::standard;
};

// Ordered, named parameter storage.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value, ParamGroup group = ParamGroup::standard);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::vector<Parameter>::iterator begin() { return params_.begin(); }
  std::vector<Parameter>::iterator end() { return params_.end(); }
  std::vector<Parameter>::const_iterator begin() const { return params_.begin(); }
  std::vector<Parameter>::const_iterator end() const { return params_.end(); }

  std::optional<std::size_t> find(const std::string& name) const;
  // Total number of scalars.
  std::size_t scalar_count() const;
  std::size_t scalar_count(ParamGroup group) const;

 private:
  std::vector<Parameter> params_;
};

struct AttentionSlots {
  std::vector<std::size_t> wq, wk, wv;
  // Baseline: one stacked (h*d_v x d_model) matrix. Weighted: one
  // d_v x d_model matrix per branch.
  std::vector<std::size_t> wo;
};

struct FfnSlots {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

struct NormSlots {
  std::size_t gain = 0, bias = 0;
};

struct BranchSlots {
  std::size_t kappa = 0, alpha = 0;
};

struct EncoderLayerSlots {
  AttentionSlots self;
  NormSlots attention_norm, ffn_norm;
  FfnSlots ffn;
  std::optional<BranchSlots> weights;
};

struct DecoderLayerSlots {
  AttentionSlots self, cross;
  NormSlots self_norm, cross_norm, ffn_norm;
  FfnSlots ffn;
  std::optional<BranchSlots> weights;
};

// Encoder-decoder Transformer with either multi-head (baseline) or branched
// (weighted) attention layers and a tied output projection.
class Transformer {
 public:
  // Randomly initialized from seed.
  Transformer(ModelConfig config, std::uint64_t seed);
  // Layout only; every value is zero. Used when loading checkpoints.
  explicit Transformer(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  std::size_t embedding() const noexcept { return embedding_; }
  const std::vector<EncoderLayerSlots>& encoder_layers() const noexcept { return encoder_; }
  const std::vector<DecoderLayerSlots>& decoder_layers() const noexcept { return decoder_; }
  // Branch weight slots of every layer, encoder layers first.
  std::vector<BranchSlots> branch_slots() const;

  // Effective (simplex) kappa and alpha of a branch slot, whatever the
  // storage mode.
  Tensor kappa(const BranchSlots& slots) const;
  Tensor alpha(const BranchSlots& slots) const;
  // Stores simplex vectors into a branch slot, converting to logits in
  // softmax mode.
  void set_branch_weights(const BranchSlots& slots, const Tensor& kappa, const Tensor& alpha);

  const Tensor& positional_table() const noexcept { return positional_; }

 private:
  void build(Rng* rng);

  ModelConfig config_;
  ParameterSet params_;
  std::size_t embedding_ = 0;
  std::vector<EncoderLayerSlots> encoder_;
  std::vector<DecoderLayerSlots> decoder_;
  Tensor positional_;
};

// Parameters placed on a tape, parallel to ParameterSet order.
struct BoundParams {
  std::vector<Var> vars;
};

// Differentiable leaves when trainable, constants otherwise.
BoundParams bind(Tape& tape, const Transformer& model, bool trainable);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with p_drop > 0
  std::optional<std::size_t> gating_k;
  // Off only for gradient checks that perturb kappa/alpha off the simplex.
  bool enforce_simplex = true;
};

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
Tensor positional_encoding(std::size_t max_len, std::size_t d_model);

// Rows of the table scaled by sqrt(d_model) plus positional rows; tokens are
// laid out as `layout` sequences. Dropout follows.
Var embed(Var table, std::span<const int> tokens, const Tensor& pe, SeqLayout layout,
          const DropoutContext* dropout = nullptr);

// Encoder memory [batch*src_len x d_model].
Var encode(const Transformer& model, const BoundParams& bound, const TokenBatch& batch,
           const ForwardOptions& options);
// Logits [batch*tgt_len x vocab_size] for teacher-forced target_in.
Var decode(const Transformer& model, const BoundParams& bound, const TokenBatch& batch, Var memory,
           const ForwardOptions& options);

// Mean over non-pad targets of cross-entropy against the smoothed target
// distribution (1 - eps on gold, eps / (V - 1) elsewhere).
Var label_smoothed_loss(Var logits, std::span<const int> targets, double epsilon_ls, int pad_id = kPadId);

// Row-wise argmax of a [rows x vocab] tensor.
std::vector<int> argmax_rows(const Tensor& logits);

// Appends argmax tokens until EOS or max_steps; the EOS itself is not
// returned.
TokenSeq greedy_decode(const Transformer& model, const TokenSeq& source, std::size_t max_steps,
                       std::optional<std::size_t> gating_k = std::nullopt);
std::vector<TokenSeq> greedy_decode_batch(const Transformer& model, const std::vector<TokenSeq>& sources,
                                          std::size_t max_steps,
                                          std::optional<std::size_t> gating_k = std::nullopt);

}  // namespace wt
