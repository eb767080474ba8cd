#include "wt/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wt/errors.hpp"

namespace wt {

Tensor causal_mask(std::size_t n) {
  if (n == 0) throw DimensionError("causal_mask needs n >= 1");
  Tensor mask({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) mask.at(i, j) = kMaskValue;
  }
  return mask;
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t d_k, const Tensor* mask,
                         SeqLayout q_layout, SeqLayout kv_layout,
                         const DropoutContext* attention_dropout) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2) {
    throw DimensionError("scaled_dot_attention expects rank-2 inputs, got " + shape_string(qv.shape()) +
                         ", " + shape_string(kv.shape()) + ", " + shape_string(vv.shape()));
  }
  if (qv.cols() != d_k || kv.cols() != d_k) {
    throw DimensionError("scaled_dot_attention: query/key width must equal d_k=" + std::to_string(d_k) +
                         ", got " + shape_string(qv.shape()) + " and " + shape_string(kv.shape()));
  }
  if (q_layout.batch != kv_layout.batch || qv.rows() != q_layout.rows() ||
      kv.rows() != kv_layout.rows() || vv.rows() != kv_layout.rows()) {
    throw DimensionError("scaled_dot_attention: layout does not match " + shape_string(qv.shape()) +
                         " / " + shape_string(kv.shape()) + " / " + shape_string(vv.shape()));
  }
  const std::size_t batch = q_layout.batch;
  const std::size_t d_v = vv.cols();
  Var q3 = reshape(q, {batch, q_layout.len, d_k});
  Var kt = transpose(reshape(k, {batch, kv_layout.len, d_k}));
  Var v3 = reshape(v, {batch, kv_layout.len, d_v});
  Var scores = scale(matmul(q3, kt), 1.0 / std::sqrt(static_cast<double>(d_k)));
  Var probs = dropout(softmax_rows(scores, mask), attention_dropout);
  return reshape(matmul(probs, v3), {q_layout.rows(), d_v});
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t d_k, const Tensor* mask) {
  const std::size_t nq = q.value().rank() == 2 ? q.value().dim(0) : 0;
  const std::size_t nk = k.value().rank() == 2 ? k.value().dim(0) : 0;
  return scaled_dot_attention(q, k, v, d_k, mask, SeqLayout::single(nq), SeqLayout::single(nk));
}

Var attention_head(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, std::size_t branch,
                   const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                   const DropoutContext* attention_dropout) {
  if (branch >= proj.count() || proj.wk.size() != proj.count() || proj.wv.size() != proj.count()) {
    throw DimensionError("attention_head: branch " + std::to_string(branch) + " missing from projections");
  }
  Var q = matmul(x_q, proj.wq[branch]);
  Var k = matmul(x_k, proj.wk[branch]);
  Var v = matmul(x_v, proj.wv[branch]);
  return scaled_dot_attention(q, k, v, q.value().cols(), mask, q_layout, kv_layout, attention_dropout);
}

Var multi_head_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, Var w_o,
                         const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                         const DropoutContext* attention_dropout) {
  if (proj.count() == 0) throw DimensionError("multi_head_attention needs at least one head");
  std::vector<Var> heads;
  heads.reserve(proj.count());
  for (std::size_t i = 0; i < proj.count(); ++i) {
    heads.push_back(attention_head(x_q, x_k, x_v, proj, i, mask, q_layout, kv_layout, attention_dropout));
  }
  const std::size_t concat_width = proj.count() * heads.front().value().cols();
  if (w_o.value().rank() != 2 || w_o.value().dim(0) != concat_width) {
    throw DimensionError("multi_head_attention: W^O " + shape_string(w_o.shape()) +
                         " does not match concatenated width " + std::to_string(concat_width));
  }
  return matmul(concat_last_dim(heads), w_o);
}

Var multi_head_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj, Var w_o,
                         const Tensor* mask) {
  return multi_head_attention(x_q, x_k, x_v, proj, w_o, mask, SeqLayout::single(x_q.value().rows()),
                              SeqLayout::single(x_k.value().rows()));
}

Var ffn(Var x, const FfnParams& params) {
  Var hidden = relu(add(matmul(x, params.w1), params.b1));
  return add(matmul(hidden, params.w2), params.b2);
}

void check_branch_weights(const BranchWeightVars& weights, std::size_t branches, bool enforce) {
  auto check = [&](const Tensor& w, const char* name) {
    if (w.size() != branches) {
      throw DimensionError(std::string(name) + " has " + std::to_string(w.size()) + " entries, expected " +
                           std::to_string(branches));
    }
    if (!enforce) return;
    double total = 0.0;
    for (double x : w.values()) {
      if (x < 0.0) throw ConstraintError(std::string(name) + " has a negative entry");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ConstraintError(std::string(name) + " sums to " + std::to_string(total) + ", not 1");
    }
  };
  check(weights.kappa.value(), "kappa");
  check(weights.alpha.value(), "alpha");
}

std::vector<std::size_t> top_k_branches(const Tensor& alpha, std::size_t k) {
  const std::size_t m = alpha.size();
  if (k < 1 || k > m) {
    throw ValueError("gating k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return alpha[a] > alpha[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// alpha[idx] / sum(alpha[idx]) as a differentiable node.
Var renormalized_subset(Var alpha, const std::vector<std::size_t>& idx) {
  const Tensor& av = alpha.value();
  double total = 0.0;
  for (auto i : idx) total += av[i];
  if (!(total > 0.0)) throw ConstraintError("gated branches carry zero total weight");
  Tensor out({idx.size()});
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = av[idx[j]] / total;
  Tensor saved = out;
  return alpha.tape().push(std::move(out), {alpha}, [alpha, idx, total, saved = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor* da = t.grad_slot(alpha);
    double dot = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) dot += g[j] * saved[j];
    for (std::size_t j = 0; j < idx.size(); ++j) (*da)[idx[j]] += (g[j] - dot) / total;
  });
}

}  // namespace

BranchSelection select_branches(Var alpha, std::optional<std::size_t> gating_k) {
  const std::size_t m = alpha.value().size();
  if (gating_k && (*gating_k < 1 || *gating_k > m)) {
    throw ValueError("gating k=" + std::to_string(*gating_k) + " outside [1, " + std::to_string(m) + "]");
  }
  if (!gating_k || *gating_k == m) {
    BranchSelection all;
    all.branches.resize(m);
    std::iota(all.branches.begin(), all.branches.end(), 0);
    all.weights = alpha;
    return all;
  }
  auto idx = top_k_branches(alpha.value(), *gating_k);
  Var weights = renormalized_subset(alpha, idx);
  return {std::move(idx), weights};
}

Var branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                       const BranchWeightVars& weights, const FfnParams& ffn_params,
                       const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                       const BranchOptions& options) {
  const std::size_t m = proj.count();
  if (m == 0 || proj.wo.size() != m) {
    throw DimensionError("branched_attention needs one output projection per branch");
  }
  check_branch_weights(weights, m, options.enforce_simplex);
  if (options.mode == BranchMode::layered && (!options.attention_norm || !options.ffn_norm)) {
    throw ValueError("layered branched attention needs both layer-norm parameter sets");
  }
  const BranchSelection sel = select_branches(weights.alpha, options.gating_k);

  Var total;
  for (std::size_t j = 0; j < sel.branches.size(); ++j) {
    const std::size_t i = sel.branches[j];
    Var head = attention_head(x_q, x_k, x_v, proj, i, mask, q_layout, kv_layout, options.dropout);
    Var scaled = scale_by_entry(matmul(head, proj.wo[i]), weights.kappa, i);
    Var branch;
    if (options.mode == BranchMode::raw) {
      branch = options.bypass_ffn ? scaled : ffn(scaled, ffn_params);
    } else {
      const LayerNormParams& an = *options.attention_norm;
      const LayerNormParams& fn = *options.ffn_norm;
      Var u = layer_norm(add(x_q, dropout(scaled, options.dropout)), an.gain, an.bias);
      branch = layer_norm(add(u, dropout(ffn(u, ffn_params), options.dropout)), fn.gain, fn.bias);
    }
    Var weighted = scale_by_entry(branch, sel.weights, j);
    total = total.valid() ? add(total, weighted) : weighted;
  }
  return total;
}

Var branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                       const BranchWeightVars& weights, const FfnParams& ffn_params,
                       const Tensor* mask, const BranchOptions& options) {
  return branched_attention(x_q, x_k, x_v, proj, weights, ffn_params, mask,
                            SeqLayout::single(x_q.value().rows()), SeqLayout::single(x_k.value().rows()),
                            options);
}

Var gated_branched_attention(Var x_q, Var x_k, Var x_v, const HeadProjections& proj,
                             const BranchWeightVars& weights, const FfnParams& ffn_params,
                             const Tensor* mask, SeqLayout q_layout, SeqLayout kv_layout,
                             BranchOptions options, std::size_t k) {
  if (k < 1 || k > proj.count()) {
    throw ValueError("gating k=" + std::to_string(k) + " outside [1, " + std::to_string(proj.count()) + "]");
  }
  options.gating_k = k;
  return branched_attention(x_q, x_k, x_v, proj, weights, ffn_params, mask, q_layout, kv_layout, options);
}

}  // namespace wt
