#include "wt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wt/errors.hpp"

namespace wt {

std::string variant_name(Variant v) { return v == Variant::baseline ? "baseline" : "weighted"; }

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "weighted") return Variant::weighted;
  throw ConfigError("unknown variant '" + name + "' (expected baseline or weighted)");
}

std::string weight_param_mode_name(WeightParamMode m) {
  return m == WeightParamMode::projection ? "projection" : "softmax";
}

WeightParamMode parse_weight_param_mode(const std::string& name) {
  if (name == "projection") return WeightParamMode::projection;
  if (name == "softmax") return WeightParamMode::softmax;
  throw ConfigError("unknown weight_param_mode '" + name + "' (expected projection or softmax)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0) throw ConfigError("d_model and heads must be positive");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for the positional encoding");
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (variant == Variant::weighted && branches != heads) {
    throw ConfigError("weighted variant needs branches == heads, got " + std::to_string(branches) +
                      " and " + std::to_string(heads));
  }
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("p_drop must lie in [0,1)");
  if (!(epsilon_ls >= 0.0 && epsilon_ls < 1.0)) throw ConfigError("epsilon_ls must lie in [0,1)");
  if (vocab_size <= kFirstContentId) throw ConfigError("vocab_size must exceed the reserved ids 0-2");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
}

// ---------------------------------------------------------------- ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor value, ParamGroup group) {
  if (find(name)) throw ValueError("duplicate parameter name " + name);
  params_.push_back({std::move(name), std::move(value), group});
  return params_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParameterSet::scalar_count(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.group == group) n += p.value.size();
  }
  return n;
}

// ---------------------------------------------------------------- Transformer

Tensor positional_encoding(std::size_t max_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw DimensionError("positional_encoding needs an even d_model, got " + std::to_string(d_model));
  }
  if (max_len == 0) throw DimensionError("positional_encoding needs max_len >= 1");
  Tensor pe({max_len, d_model});
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

namespace {

Tensor xavier(Rng* rng, std::size_t fan_in, std::size_t fan_out) {
  Tensor t({fan_in, fan_out});
  if (rng == nullptr) return t;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) v = u(*rng);
  return t;
}

Tensor random_simplex_init(Rng* rng, std::size_t m) {
  Tensor t({m}, 1.0 / static_cast<double>(m));
  if (rng == nullptr) return t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  for (double& v : t.values()) {
    do {
      v = u(*rng);
    } while (v == 0.0);
    total += v;
  }
  for (double& v : t.values()) v /= total;
  return t;
}

Tensor to_logits(const Tensor& simplex) {
  Tensor out = simplex;
  for (double& v : out.values()) v = std::log(std::max(v, 1e-300));
  return out;
}

Tensor softmax_vector(const Tensor& logits) {
  Tensor out = logits;
  const double peak = *std::max_element(out.values().begin(), out.values().end());
  double total = 0.0;
  for (double& v : out.values()) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : out.values()) v /= total;
  return out;
}

}  // namespace

Transformer::Transformer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  build(&rng);
}

Transformer::Transformer(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  build(nullptr);
}

void Transformer::build(Rng* rng) {
  const std::size_t d = config_.d_model;
  const std::size_t h = config_.heads;
  const std::size_t dk = config_.d_head();
  const std::size_t vocab = static_cast<std::size_t>(config_.vocab_size);
  const bool weighted = config_.variant == Variant::weighted;

  Tensor table({vocab, d});
  if (rng) {
    const double bound = 0.5 * std::sqrt(3.0 / static_cast<double>(d));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : table.values()) v = u(*rng);
  }
  embedding_ = params_.add("embedding", std::move(table));

  auto attention = [&](const std::string& prefix) {
    AttentionSlots s;
    for (std::size_t i = 0; i < h; ++i) {
      const std::string n = std::to_string(i);
      s.wq.push_back(params_.add(prefix + ".wq." + n, xavier(rng, d, dk)));
      s.wk.push_back(params_.add(prefix + ".wk." + n, xavier(rng, d, dk)));
      s.wv.push_back(params_.add(prefix + ".wv." + n, xavier(rng, d, dk)));
    }
    if (weighted) {
      for (std::size_t i = 0; i < h; ++i) {
        s.wo.push_back(params_.add(prefix + ".wo." + std::to_string(i), xavier(rng, dk, d)));
      }
    } else {
      s.wo.push_back(params_.add(prefix + ".wo", xavier(rng, h * dk, d)));
    }
    return s;
  };
  auto norm = [&](const std::string& prefix) {
    return NormSlots{params_.add(prefix + ".gain", Tensor({d}, 1.0)), params_.add(prefix + ".bias", Tensor({d}))};
  };
  auto feed_forward = [&](const std::string& prefix) {
    FfnSlots f;
    f.w1 = params_.add(prefix + ".w1", xavier(rng, d, config_.d_ff));
    f.b1 = params_.add(prefix + ".b1", Tensor({config_.d_ff}));
    f.w2 = params_.add(prefix + ".w2", xavier(rng, config_.d_ff, d));
    f.b2 = params_.add(prefix + ".b2", Tensor({d}));
    return f;
  };
  auto branch_weights = [&](const std::string& prefix) -> std::optional<BranchSlots> {
    if (!weighted) return std::nullopt;
    Tensor kappa = random_simplex_init(rng, h);
    Tensor alpha = random_simplex_init(rng, h);
    if (config_.weight_param_mode == WeightParamMode::softmax) {
      kappa = to_logits(kappa);
      alpha = to_logits(alpha);
    }
    BranchSlots b;
    b.kappa = params_.add(prefix + ".kappa", std::move(kappa), ParamGroup::branch);
    b.alpha = params_.add(prefix + ".alpha", std::move(alpha), ParamGroup::branch);
    return b;
  };

  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayerSlots layer;
    layer.self = attention(p + ".self");
    layer.attention_norm = norm(p + ".norm_attention");
    layer.ffn = feed_forward(p + ".ffn");
    layer.ffn_norm = norm(p + ".norm_ffn");
    layer.weights = branch_weights(p);
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayerSlots layer;
    layer.self = attention(p + ".self");
    layer.self_norm = norm(p + ".norm_self");
    layer.cross = attention(p + ".cross");
    layer.cross_norm = norm(p + ".norm_cross");
    layer.ffn = feed_forward(p + ".ffn");
    layer.ffn_norm = norm(p + ".norm_ffn");
    layer.weights = branch_weights(p);
    decoder_.push_back(std::move(layer));
  }
  positional_ = positional_encoding(config_.max_len, d);
}

std::vector<BranchSlots> Transformer::branch_slots() const {
  std::vector<BranchSlots> out;
  for (const auto& l : encoder_) {
    if (l.weights) out.push_back(*l.weights);
  }
  for (const auto& l : decoder_) {
    if (l.weights) out.push_back(*l.weights);
  }
  return out;
}

Tensor Transformer::kappa(const BranchSlots& slots) const {
  const Tensor& raw = params_[slots.kappa].value;
  return config_.weight_param_mode == WeightParamMode::softmax ? softmax_vector(raw) : raw;
}

Tensor Transformer::alpha(const BranchSlots& slots) const {
  const Tensor& raw = params_[slots.alpha].value;
  return config_.weight_param_mode == WeightParamMode::softmax ? softmax_vector(raw) : raw;
}

void Transformer::set_branch_weights(const BranchSlots& slots, const Tensor& kappa, const Tensor& alpha) {
  const std::size_t m = config_.branches;
  if (kappa.size() != m || alpha.size() != m) {
    throw DimensionError("branch weights need " + std::to_string(m) + " entries");
  }
  const bool logits = config_.weight_param_mode == WeightParamMode::softmax;
  params_[slots.kappa].value = logits ? to_logits(kappa) : kappa.reshaped({m});
  params_[slots.alpha].value = logits ? to_logits(alpha) : alpha.reshaped({m});
}

// ---------------------------------------------------------------- forward

BoundParams bind(Tape& tape, const Transformer& model, bool trainable) {
  BoundParams b;
  b.vars.reserve(model.params().size());
  for (const auto& p : model.params()) {
    b.vars.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
  }
  return b;
}

Var embed(Var table, std::span<const int> tokens, const Tensor& pe, SeqLayout layout,
          const DropoutContext* dropout_ctx) {
  const std::size_t d = table.value().cols();
  if (tokens.size() != layout.rows()) {
    throw DimensionError("embed: " + std::to_string(tokens.size()) + " tokens for layout " +
                         std::to_string(layout.batch) + "x" + std::to_string(layout.len));
  }
  if (pe.rank() != 2 || pe.cols() != d || pe.dim(0) < layout.len) {
    throw DimensionError("embed: positional table " + shape_string(pe.shape()) + " cannot cover length " +
                         std::to_string(layout.len));
  }
  Tensor positions({layout.rows(), d});
  for (std::size_t s = 0; s < layout.batch; ++s) {
    std::copy_n(pe.data(), layout.len * d, positions.data() + s * layout.len * d);
  }
  Var rows = scale(embedding_lookup(table, tokens), std::sqrt(static_cast<double>(d)));
  Var x = add(rows, table.tape().constant(std::move(positions)));
  return dropout(x, dropout_ctx);
}

namespace {

HeadProjections projections(const AttentionSlots& s, const BoundParams& b) {
  HeadProjections p;
  for (auto i : s.wq) p.wq.push_back(b.vars[i]);
  for (auto i : s.wk) p.wk.push_back(b.vars[i]);
  for (auto i : s.wv) p.wv.push_back(b.vars[i]);
  for (auto i : s.wo) p.wo.push_back(b.vars[i]);
  return p;
}

FfnParams ffn_params(const FfnSlots& s, const BoundParams& b) {
  return {b.vars[s.w1], b.vars[s.b1], b.vars[s.w2], b.vars[s.b2]};
}

LayerNormParams norm_params(const NormSlots& s, const BoundParams& b) {
  return {b.vars[s.gain], b.vars[s.bias]};
}

Var simplex_view(Var raw, WeightParamMode mode) {
  if (mode == WeightParamMode::projection) return raw;
  const std::size_t m = raw.value().size();
  return reshape(softmax_rows(reshape(raw, {1, m})), {m});
}

BranchWeightVars branch_vars(const BranchSlots& s, const BoundParams& b, WeightParamMode mode) {
  return {simplex_view(b.vars[s.kappa], mode), simplex_view(b.vars[s.alpha], mode)};
}

// [batch x len_q x len_k] additive mask hiding key positions >= key length,
// and future positions when causal.
Tensor attention_mask(std::size_t batch, std::size_t len_q, std::size_t len_k,
                      const std::vector<std::size_t>& key_lengths, bool causal) {
  Tensor mask({batch, len_q, len_k});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < len_q; ++i) {
      double* row = mask.data() + (s * len_q + i) * len_k;
      for (std::size_t j = 0; j < len_k; ++j) {
        if (j >= key_lengths[s] || (causal && j > i)) row[j] = kMaskValue;
      }
    }
  }
  return mask;
}

void check_length(std::size_t len, std::size_t max_len, const char* side) {
  if (len > max_len) {
    throw ValueError(std::string(side) + " length " + std::to_string(len) + " exceeds max_len " +
                     std::to_string(max_len));
  }
}

}  // namespace

Var encode(const Transformer& model, const BoundParams& bound, const TokenBatch& batch,
           const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  check_length(batch.src_len, cfg.max_len, "source");
  const SeqLayout layout{batch.batch, batch.src_len};
  const Tensor mask = attention_mask(batch.batch, batch.src_len, batch.src_len, batch.src_lengths, false);
  const DropoutContext drop{cfg.p_drop, options.training, options.rng};

  Var x = embed(bound.vars[model.embedding()], batch.source, model.positional_table(), layout, &drop);
  for (const auto& layer : model.encoder_layers()) {
    const HeadProjections proj = projections(layer.self, bound);
    const LayerNormParams an = norm_params(layer.attention_norm, bound);
    const LayerNormParams fn = norm_params(layer.ffn_norm, bound);
    const FfnParams ff = ffn_params(layer.ffn, bound);
    if (cfg.variant == Variant::baseline) {
      Var a = multi_head_attention(x, x, x, proj, proj.wo.front(), &mask, layout, layout, &drop);
      Var x1 = layer_norm(add(x, dropout(a, &drop)), an.gain, an.bias);
      x = layer_norm(add(x1, dropout(ffn(x1, ff), &drop)), fn.gain, fn.bias);
    } else {
      BranchOptions opt;
      opt.mode = BranchMode::layered;
      opt.gating_k = options.gating_k;
      opt.enforce_simplex = options.enforce_simplex;
      opt.dropout = &drop;
      opt.attention_norm = &an;
      opt.ffn_norm = &fn;
      x = branched_attention(x, x, x, proj, branch_vars(*layer.weights, bound, cfg.weight_param_mode), ff,
                             &mask, layout, layout, opt);
    }
  }
  return x;
}

Var decode(const Transformer& model, const BoundParams& bound, const TokenBatch& batch, Var memory,
           const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  check_length(batch.tgt_len, cfg.max_len, "target");
  const SeqLayout tgt{batch.batch, batch.tgt_len};
  const SeqLayout src{batch.batch, batch.src_len};
  if (memory.value().rank() != 2 || memory.value().rows() != src.rows()) {
    throw DimensionError("decode: memory " + shape_string(memory.shape()) + " does not match the source layout");
  }
  std::vector<std::size_t> in_lengths(batch.batch);
  for (std::size_t s = 0; s < batch.batch; ++s) in_lengths[s] = batch.tgt_lengths[s] + 1;
  const Tensor self_mask = attention_mask(batch.batch, batch.tgt_len, batch.tgt_len, in_lengths, true);
  const Tensor cross_mask = attention_mask(batch.batch, batch.tgt_len, batch.src_len, batch.src_lengths, false);
  const DropoutContext drop{cfg.p_drop, options.training, options.rng};

  Var table = bound.vars[model.embedding()];
  Var x = embed(table, batch.target_in, model.positional_table(), tgt, &drop);
  for (const auto& layer : model.decoder_layers()) {
    const HeadProjections self = projections(layer.self, bound);
    const HeadProjections cross = projections(layer.cross, bound);
    const LayerNormParams sn = norm_params(layer.self_norm, bound);
    const LayerNormParams cn = norm_params(layer.cross_norm, bound);
    const LayerNormParams fn = norm_params(layer.ffn_norm, bound);
    const FfnParams ff = ffn_params(layer.ffn, bound);
    if (cfg.variant == Variant::baseline) {
      Var a = multi_head_attention(x, x, x, self, self.wo.front(), &self_mask, tgt, tgt, &drop);
      Var x1 = layer_norm(add(x, dropout(a, &drop)), sn.gain, sn.bias);
      Var c = multi_head_attention(x1, memory, memory, cross, cross.wo.front(), &cross_mask, tgt, src, &drop);
      Var x2 = layer_norm(add(x1, dropout(c, &drop)), cn.gain, cn.bias);
      x = layer_norm(add(x2, dropout(ffn(x2, ff), &drop)), fn.gain, fn.bias);
      continue;
    }
    const BranchWeightVars w = branch_vars(*layer.weights, bound, cfg.weight_param_mode);
    check_branch_weights(w, cfg.branches, options.enforce_simplex);
    const BranchSelection sel = select_branches(w.alpha, options.gating_k);
    Var total;
    for (std::size_t j = 0; j < sel.branches.size(); ++j) {
      const std::size_t i = sel.branches[j];
      Var sh = attention_head(x, x, x, self, i, &self_mask, tgt, tgt, &drop);
      Var s = layer_norm(add(x, dropout(scale_by_entry(matmul(sh, self.wo[i]), w.kappa, i), &drop)), sn.gain,
                         sn.bias);
      Var ch = attention_head(s, memory, memory, cross, i, &cross_mask, tgt, src, &drop);
      Var c = layer_norm(add(s, dropout(scale_by_entry(matmul(ch, cross.wo[i]), w.kappa, i), &drop)), cn.gain,
                         cn.bias);
      Var v = layer_norm(add(c, dropout(ffn(c, ff), &drop)), fn.gain, fn.bias);
      Var weighted = scale_by_entry(v, sel.weights, j);
      total = total.valid() ? add(total, weighted) : weighted;
    }
    x = total;
  }
  return matmul(x, transpose(table));
}

Var label_smoothed_loss(Var logits, std::span<const int> targets, double epsilon_ls, int pad_id) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.rows() != targets.size()) {
    throw DimensionError("label_smoothed_loss: logits " + shape_string(lv.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!(epsilon_ls >= 0.0 && epsilon_ls < 1.0)) throw ValueError("epsilon_ls must lie in [0,1)");
  const std::size_t vocab = lv.cols();
  if (vocab < 2) throw DimensionError("label_smoothed_loss needs at least two classes");
  const double on = 1.0 - epsilon_ls;
  const double off = epsilon_ls / static_cast<double>(vocab - 1);
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ValueError("target id " + std::to_string(t) + " outside vocabulary");
    }
    ++counted;
  }
  if (counted == 0) throw ValueError("label_smoothed_loss: every position is padding");

  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == pad_id) continue;
    const double* row = lv.data() + r * vocab;
    double* p = probs.data() + r * vocab;
    const double peak = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(row[c] - peak);
      z += p[c];
    }
    const double log_z = peak + std::log(z);
    double expected = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      const double q = static_cast<int>(c) == targets[r] ? on : off;
      expected += q * (row[c] - log_z);
      p[c] /= z;
    }
    total -= expected;
  }
  const double inv_count = 1.0 / static_cast<double>(counted);
  std::vector<int> saved(targets.begin(), targets.end());
  return logits.tape().push(
      Tensor::scalar(total * inv_count), {logits},
      [logits, vocab, on, off, pad_id, inv_count, probs = std::move(probs), saved = std::move(saved)](
          Tape& t, const Tensor& g) {
        Tensor* dl = t.grad_slot(logits);
        const double scale = g[0] * inv_count;
        for (std::size_t r = 0; r < saved.size(); ++r) {
          if (saved[r] == pad_id) continue;
          const double* p = probs.data() + r * vocab;
          double* d = dl->data() + r * vocab;
          for (std::size_t c = 0; c < vocab; ++c) {
            const double q = static_cast<int>(c) == saved[r] ? on : off;
            d[c] += scale * (p[c] - q);
          }
        }
      });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t cols = logits.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

namespace {

constexpr std::size_t kDecodeChunk = 32;

std::vector<TokenSeq> greedy_decode_chunk(const Transformer& model, std::span<const TokenSeq> sources,
                                          std::size_t max_steps, std::optional<std::size_t> gating_k) {
  std::vector<TokenSeq> out(sources.size());
  Dataset pairs;
  for (const auto& s : sources) pairs.push_back({s, {}});
  TokenBatch batch = make_batch(pairs);

  ForwardOptions opts;
  opts.gating_k = gating_k;
  Tensor memory_value = [&] {
    Tape tape;
    return encode(model, bind(tape, model, false), batch, opts).value();
  }();

  const std::size_t steps = std::min(max_steps, model.config().max_len - 1);
  std::vector<bool> done(sources.size(), false);
  for (std::size_t t = 0; t < steps; ++t) {
    batch.tgt_len = t + 1;
    batch.target_in.assign(batch.batch * batch.tgt_len, kPadId);
    batch.target_out.assign(batch.batch * batch.tgt_len, kPadId);
    for (std::size_t r = 0; r < batch.batch; ++r) {
      batch.tgt_lengths[r] = t;
      int* row = batch.target_in.data() + r * batch.tgt_len;
      row[0] = kBosId;
      // Finished rows keep feeding their last tokens; their output is ignored.
      for (std::size_t i = 0; i < t; ++i) row[i + 1] = i < out[r].size() ? out[r][i] : kEosId;
    }
    // A fresh tape per step keeps memory flat in the number of steps.
    Tape tape;
    const BoundParams bound = bind(tape, model, false);
    const Tensor logits = decode(model, bound, batch, tape.constant(memory_value), opts).value();
    const std::size_t vocab = logits.cols();
    bool all_done = true;
    for (std::size_t r = 0; r < batch.batch; ++r) {
      if (done[r]) continue;
      const double* row = logits.data() + (r * batch.tgt_len + t) * vocab;
      const int next = static_cast<int>(std::max_element(row, row + vocab) - row);
      if (next == kEosId) {
        done[r] = true;
      } else {
        out[r].push_back(next);
        all_done = false;
      }
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace

std::vector<TokenSeq> greedy_decode_batch(const Transformer& model, const std::vector<TokenSeq>& sources,
                                          std::size_t max_steps, std::optional<std::size_t> gating_k) {
  std::vector<TokenSeq> out;
  out.reserve(sources.size());
  if (max_steps == 0) return std::vector<TokenSeq>(sources.size());
  for (std::size_t begin = 0; begin < sources.size(); begin += kDecodeChunk) {
    const std::size_t count = std::min(kDecodeChunk, sources.size() - begin);
    auto chunk = greedy_decode_chunk(model, std::span(sources).subspan(begin, count), max_steps, gating_k);
    for (auto& seq : chunk) out.push_back(std::move(seq));
  }
  return out;
}

TokenSeq greedy_decode(const Transformer& model, const TokenSeq& source, std::size_t max_steps,
                       std::optional<std::size_t> gating_k) {
  return greedy_decode_batch(model, {source}, max_steps, gating_k).front();
}

}  // namespace wt
