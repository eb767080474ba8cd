#include <doctest.h>

#include <cmath>
#include <numbers>

#include "model_support.hpp"
#include "support.hpp"
#include "wt/errors.hpp"
#include "wt/harness.hpp"

using namespace wt;
using wt::test::batch_loss;
using wt::test::gradient_error;
using wt::test::model_gradient_error;
using wt::test::random_tensor;

namespace {

ModelConfig tiny_config(Variant variant) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.heads = 2;
  cfg.branches = 2;
  cfg.vocab_size = 5;
  cfg.max_len = 6;
  cfg.variant = variant;
  return cfg;
}

Tensor forward_logits(const Transformer& model, const TokenBatch& batch) {
  Tape tape;
  const BoundParams bound = bind(tape, model, false);
  ForwardOptions fo;
  return decode(model, bound, batch, encode(model, bound, batch, fo), fo).value();
}

Tensor forward_memory(const Transformer& model, const TokenBatch& batch) {
  Tape tape;
  const BoundParams bound = bind(tape, model, false);
  return encode(model, bound, batch, ForwardOptions{}).value();
}

}  // namespace

TEST_CASE("positional encoding examples") {
  const Tensor pe = positional_encoding(10, 16);
  for (std::size_t i = 0; i < 16; i += 2) {
    CHECK(pe.at(0, i) == 0.0);
    CHECK(pe.at(0, i + 1) == 1.0);
  }
  CHECK(std::abs(pe.at(1, 0) - std::sin(1.0)) < 1e-12);
  CHECK(std::abs(pe.at(3, 5) - std::cos(3.0 / std::pow(10000.0, 4.0 / 16))) < 1e-12);
  CHECK_THROWS_AS(positional_encoding(4, 7), DimensionError);
}

TEST_CASE("embedding examples") {
  const Tensor pe = positional_encoding(8, 4);
  Tape tape;
  const std::vector<int> tokens{3, 4, 3};
  const Tensor zero = embed(tape.constant(Tensor({5, 4})), tokens, pe, SeqLayout::single(3)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(zero.at(r, c) == pe.at(r, c));
  }

  Rng rng(51);
  const Tensor table = random_tensor({5, 4}, rng);
  const Tensor one = embed(tape.constant(table), std::vector<int>{4}, pe, SeqLayout::single(1)).value();
  for (std::size_t c = 0; c < 4; ++c) CHECK(one[c] == table.at(4, c) * 2.0 + (c % 2 ? 1.0 : 0.0));

  CHECK_THROWS_AS(embed(tape.constant(table), std::vector<int>{5}, pe, SeqLayout::single(1)), ValueError);
}

TEST_CASE("embedding gradient on a three-token vocabulary") {
  Rng rng(52);
  const Tensor pe = positional_encoding(4, 4);
  const std::vector<int> tokens{2, 0, 2};
  for (int i = 0; i < 20; ++i) {
    auto f = [&, i](Tape&, const std::vector<Var>& v) {
      return wt::test::random_projection(embed(v[0], tokens, pe, SeqLayout::single(3)), 5200 + i);
    };
    CHECK(gradient_error(f, {random_tensor({3, 4}, rng)}) < 1e-4);
  }
  Tape tape;
  Var table = tape.leaf(random_tensor({3, 4}, rng));
  tape.backward(sum(embed(table, tokens, pe, SeqLayout::single(3))));
  const Tensor g = tape.grad(table);
  for (std::size_t c = 0; c < 4; ++c) CHECK(g.at(1, c) == 0.0);
}

TEST_CASE("encoder with no layers returns the embedded input") {
  ModelConfig cfg = tiny_config(Variant::weighted);
  cfg.n_layers = 0;
  Transformer model(cfg, 3);
  const TokenBatch batch = make_batch({{{3, 4, 4}, {3, 4, 4}}, {{4}, {4}}});
  Tape tape;
  const BoundParams bound = bind(tape, model, false);
  const Tensor memory = encode(model, bound, batch, ForwardOptions{}).value();
  const Tensor embedded = embed(bound.vars[model.embedding()], batch.source, model.positional_table(),
                                {batch.batch, batch.src_len})
                              .value();
  CHECK(memory == embedded);
}

TEST_CASE("padding does not change the outputs of real positions") {
  for (auto variant : {Variant::baseline, Variant::weighted}) {
    Transformer model(tiny_config(variant), 4);
    const SequencePair shorter{{3, 4}, {4, 3}};
    const SequencePair longer{{4, 4, 3, 4}, {4, 3, 3, 3}};
    const TokenBatch both = make_batch({shorter, longer});
    const TokenBatch alone = make_batch({shorter});
    const Tensor mem_both = forward_memory(model, both);
    const Tensor mem_alone = forward_memory(model, alone);
    for (std::size_t i = 0; i < mem_alone.size(); ++i) CHECK(std::abs(mem_both[i] - mem_alone[i]) < 1e-12);
    const Tensor logits_both = forward_logits(model, both);
    const Tensor logits_alone = forward_logits(model, alone);
    for (std::size_t i = 0; i < logits_alone.size(); ++i) {
      CHECK(std::abs(logits_both[i] - logits_alone[i]) < 1e-12);
    }
    CHECK(mem_both.shape() == Shape{both.batch * both.src_len, 8});
    CHECK(logits_both.shape() == Shape{both.batch * both.tgt_len, 5});
  }
}

TEST_CASE("decoder logits are causal") {
  for (auto variant : {Variant::baseline, Variant::weighted}) {
    Transformer model(tiny_config(variant), 5);
    const TokenBatch batch = make_batch({{{3, 4, 3}, {3, 4, 4, 3}}});
    const Tensor base = forward_logits(model, batch);
    for (std::size_t t = 0; t + 1 < batch.tgt_len; ++t) {
      TokenBatch changed = batch;
      for (std::size_t j = t + 1; j < batch.tgt_len; ++j) changed.target_in[j] = changed.target_in[j] == 3 ? 4 : 3;
      const Tensor other = forward_logits(model, changed);
      for (std::size_t i = 0; i < (t + 1) * 5; ++i) CHECK(other[i] == base[i]);
    }
  }
}

TEST_CASE("single-token target decodes over one position") {
  Transformer model(tiny_config(Variant::weighted), 6);
  const TokenBatch batch = make_batch({{{3, 4}, {}}});
  CHECK(batch.tgt_len == 1);
  CHECK(forward_logits(model, batch).shape() == Shape{1, 5});
}

TEST_CASE("sequences longer than max_len are rejected") {
  Transformer model(tiny_config(Variant::baseline), 7);
  const TokenBatch batch = make_batch({{{3, 4, 3, 4, 3, 4, 3}, {3}}});
  Tape tape;
  const BoundParams bound = bind(tape, model, false);
  CHECK_THROWS_AS(encode(model, bound, batch, ForwardOptions{}), ValueError);
}

TEST_CASE("tied output projection") {
  Transformer model(tiny_config(Variant::weighted), 8);
  const TokenBatch batch = make_batch({{{3, 3}, {3, 3}}});
  const Tensor base = forward_logits(model, batch);
  Transformer changed = model;
  Tensor& table = changed.params()[changed.embedding()].value;
  for (std::size_t c = 0; c < 8; ++c) table.at(4, c) += 0.5;
  const Tensor after = forward_logits(changed, batch);
  for (std::size_t r = 0; r < base.rows(); ++r) {
    for (std::size_t v = 0; v < 5; ++v) {
      if (v == 4) CHECK(after.at(r, v) != base.at(r, v));
      else CHECK(after.at(r, v) == base.at(r, v));
    }
  }
  const TokenBatch uses_four = make_batch({{{4, 3}, {3, 3}}});
  CHECK(forward_memory(model, uses_four) != forward_memory(changed, uses_four));
}

TEST_CASE("label smoothing examples") {
  Tape tape;
  Tensor sharp({2, 4});
  sharp.at(0, 2) = 1000.0;
  sharp.at(1, 1) = 1000.0;
  CHECK(label_smoothed_loss(tape.constant(sharp), std::vector<int>{2, 1}, 0.0).value()[0] == 0.0);

  for (double eps : {0.0, 0.1, 0.3}) {
    const double loss = label_smoothed_loss(tape.constant(Tensor({3, 7}, 0.4)), std::vector<int>{3, 4, 5}, eps).value()[0];
    CHECK(std::abs(loss - std::log(7.0)) < 1e-12);
  }

  const Tensor logits = Tensor::matrix({{1.0, 2.0, 0.5, -1.0}, {0.3, 0.3, 0.3, 0.3}, {-2.0, 0.0, 1.0, 3.0}});
  const std::vector<int> targets{1, 0, 3};
  double expected = 0.0;
  for (std::size_t r : {0u, 2u}) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits.at(r, c));
    for (std::size_t c = 0; c < 4; ++c) {
      const double q = static_cast<int>(c) == targets[r] ? 0.9 : 0.1 / 3.0;
      expected -= q * (logits.at(r, c) - std::log(z));
    }
  }
  expected /= 2.0;
  CHECK(std::abs(label_smoothed_loss(tape.constant(logits), targets, 0.1).value()[0] - expected) < 1e-12);

  CHECK_THROWS(label_smoothed_loss(tape.constant(logits), std::vector<int>{0, 0, 0}, 0.1));
}

TEST_CASE("label smoothing gradient") {
  Rng rng(53);
  const std::vector<int> targets{1, 0, 3, 2};
  for (int i = 0; i < 20; ++i) {
    auto f = [&](Tape&, const std::vector<Var>& v) { return label_smoothed_loss(v[0], targets, 0.1); };
    CHECK(gradient_error(f, {random_tensor({4, 5}, rng, -3, 3)}) < 1e-4);
  }
}

TEST_CASE("initial loss is close to ln V") {
  SyntheticTaskSpec spec;
  const auto batches = batch_by_length(generate_dataset(spec), 256);
  for (auto variant : {Variant::baseline, Variant::weighted}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ModelConfig cfg;
      cfg.variant = variant;
      Transformer model(cfg, seed);
      const double loss = batch_loss(model, batches[seed], ForwardOptions{}, false);
      CHECK(std::abs(loss - std::log(16.0)) / std::log(16.0) < 0.1);
    }
  }
}

TEST_CASE("weighted and baseline parameter counts differ by the branch weights") {
  for (std::size_t layers : {1u, 2u, 6u}) {
    for (std::size_t heads : {2u, 4u, 8u}) {
      ModelConfig cfg;
      cfg.n_layers = layers;
      cfg.d_model = 32;
      cfg.heads = heads;
      cfg.branches = heads;
      cfg.variant = Variant::baseline;
      const Transformer baseline(cfg);
      cfg.variant = Variant::weighted;
      const Transformer weighted(cfg);
      const std::size_t overhead = 2 * heads * 2 * layers;
      CHECK(weighted.params().scalar_count() - baseline.params().scalar_count() == overhead);
      CHECK(weighted.params().scalar_count(ParamGroup::branch) == overhead);
      CHECK(baseline.params().scalar_count(ParamGroup::branch) == 0);
      CHECK(expected_weight_overhead(cfg) == overhead);
    }
  }
}

TEST_CASE("branch weights start on the simplex") {
  Transformer model(ModelConfig{}, 9);
  CHECK(model.branch_slots().size() == 4);
  for (const auto& slots : model.branch_slots()) {
    for (const Tensor& w : {model.kappa(slots), model.alpha(slots)}) {
      double total = 0.0;
      for (double x : w.values()) {
        CHECK(x >= 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax storage exposes simplex weights") {
  ModelConfig cfg = tiny_config(Variant::weighted);
  cfg.weight_param_mode = WeightParamMode::softmax;
  Transformer model(cfg, 10);
  const auto slots = model.branch_slots().front();
  model.set_branch_weights(slots, Tensor::vector({0.25, 0.75}), Tensor::vector({0.5, 0.5}));
  CHECK(std::abs(model.kappa(slots)[0] - 0.25) < 1e-12);
  CHECK(std::abs(model.kappa(slots)[1] - 0.75) < 1e-12);
  CHECK(std::abs(model.alpha(slots)[0] - 0.5) < 1e-12);
}

TEST_CASE("full model gradients match finite differences") {
  const TokenBatch batch = make_batch({{{3, 4, 4}, {3, 4, 4}}, {{4, 3}, {4, 3}}});
  for (auto mode : {WeightParamMode::projection, WeightParamMode::softmax}) {
    for (auto variant : {Variant::baseline, Variant::weighted}) {
      ModelConfig cfg = tiny_config(variant);
      cfg.weight_param_mode = mode;
      for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        const auto report = model_gradient_error(Transformer(cfg, seed), batch);
        INFO(report.worst_param);
        CHECK(report.worst < 1e-4);
      }
    }
  }
}

TEST_CASE("greedy decoding") {
  Transformer model(tiny_config(Variant::weighted), 11);
  CHECK(greedy_decode(model, {3, 4}, 0).empty());
  const auto a = greedy_decode(model, {3, 4, 4}, 5);
  const auto b = greedy_decode(model, {3, 4, 4}, 5);
  CHECK(a == b);
  CHECK(a.size() <= 5);
  const auto batch = greedy_decode_batch(model, {{3, 4, 4}, {4}}, 5);
  CHECK(batch.front() == a);
}

TEST_CASE("model config validation") {
  ModelConfig cfg;
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.branches = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.variant = Variant::baseline;
  CHECK_NOTHROW(cfg.validate());
  cfg = ModelConfig{};
  cfg.p_drop = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.epsilon_ls = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
