#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "wt/autodiff.hpp"

namespace wt {

// Row-stacked sequences: an activation of shape [batch*len x d] holds `batch`
// sequences of `len` positions each.
struct SeqLayout {
  std::size_t batch = 1;
  std::size_t len = 0;

  std::size_t rows() const noexcept { return batch * len; }
  static SeqLayout single(std::size_t len) { return {1, len}; }
};

// Per-branch (per-head) projection matrices. All branches share shapes:
// wq, wk are d_model x d_k, wv is d_model x d_v, wo is d_v x d_model.
// wo may be empty when a stacked output projection is supplied instead.
struct HeadProjections {
  std::vector<Var> wq;
  std::vector<Var> wk;
  std::vector<Var> wv;
  std::vector<Var> wo;

  std::size_t count() const noexcept { return wq.size(); }
};

struct FfnParams {
  Var w1;  // d_model x d_ff
  Var b1;  // d_ff
  Var w2;  // d_ff x d_model
  Var b2;  // d_model
};

struct LayerNormParams {
  Var gain;
  Var bias;
};

// Concatenation weights (kappa) and addition weights (alpha), one entry per
// branch, each a probability vector.
struct BranchWeightVars {
  Var kappa;
  Var alpha;
};

enum class BranchMode {
  raw,      // sum_i alpha_i FFN(kappa_i head_i W^{O_i}), nothing else
  layered,  // residual + layer norm + dropout around each branch sub-layer
};

struct BranchOptions {
  BranchMode mode = BranchMode::raw;
  bool enforce_simplex = true;
  bool bypass_ffn = false;  // raw mode: FFN replaced by identity
  std::optional<std::size_t> gating_k;
  const DropoutContext* dropout = nullptr;
  // Layered mode: normalization after the attention and FFN sub-layers.
  const LayerNormParams* attention_norm = nullptr;
  const LayerNormParams* ffn_norm = nullptr;
};

// [n x n] additive mask, 0 on and below the diagonal, kMaskValue above.
Tensor causal_mask(std::size_t n);

// softmax(q k^T / sqrt(d_k) + mask) v, evaluated per sequence. mask is
// [batch x len_q x len_k] or [len_q x len_k]. Attention dropout, when given,
// applies to the probabilities.
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t d_k, const Tensor* mask,
                         SeqLayout q_layout, SeqLayout kv_layout,
                         const DropoutContext* attention_dropout = nullptr);
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t d_k, const Tensor* mask = nullptr);

// head_i = Attention(x_q W_i^Q, x_k W_i^K, x_v W_i^V).
Var attention_head(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, std::size_t branch,
                   const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                   const DropoutContext* attention_dropout = nullptr);

// Concat_i(head_i) W^O with W^O of shape (h*d_v) x d_model.
Var multi_head_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, Var w_o,
                         const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                         const DropoutContext* attention_dropout = nullptr);
Var multi_head_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, Var w_o,
                         const Tensor* mask = nullptr);

// max(0, x W_1 + b_1) W_2 + b_2
Var ffn(Var x, const FfnParams& params);

// Throws unless both vectors have `branches` entries and, when enforce is
// set, lie on the probability simplex within 1e-6.
void check_branch_weights(const BranchWeightVars& weights, std::size_t branches, bool enforce);

// Indices of the k largest entries (ties to the lower index), ascending.
std::vector<std::size_t> top_k_branches(const Tensor& alpha, std::size_t k);

// Branches that contribute and the weights that combine them. Without gating
// (or k == M) this is every branch with alpha as-is; otherwise the top-k
// alpha entries renormalized to sum to one.
struct BranchSelection {
  std::vector<std::size_t> branches;
  Var weights;  // one entry per selected branch
};
BranchSelection select_branches(Var alpha, std::optional<std::size_t> gating_k);

Var branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                       const BranchWeightVars& weights, const FfnParams& ffn_params,
                       const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                       const BranchOptions& options);
Var branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                       const BranchWeightVars& weights, const FfnParams& ffn_params,
                       const Tensor* mask, const BranchOptions& options);

// Top-k gated variant of branched_attention, 1 <= k <= M.
Var gated_branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                             const BranchWeightVars& weights, const FfnParams& ffn_params,
                             const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                             BranchOptions options, std::size_t k);

}  // namespace wt
