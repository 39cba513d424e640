#include <doctest.h>

#include <random>
#include <set>

#include "emformer/errors.hpp"
#include "emformer/layer.hpp"
#include "emformer/numerics.hpp"
#include "test_util.hpp"

using namespace emformer;
using testutil::max_abs_diff;

namespace {

struct LayerRun {
  Tensor center, right;
};

// Lays out lookahead copies exactly as the encoder does.
Tensor gather_right(const Tensor& x, const BlockPlan& plan) {
  Tensor out = Tensor::matrix(0, x.cols());
  for (const auto& la : plan.lookahead) out.append_rows(x.slice_rows(la.begin, la.end));
  return out;
}

LayerRun run_streaming(const Tensor& center, const Tensor& right, const BlockPlan& plan,
                       const ModelConfig& cfg, const LayerWeights<double>& w) {
  auto state = LayerState<double>::initial(cfg);
  LayerRun out{Tensor::matrix(0, cfg.model_dim), Tensor::matrix(0, cfg.model_dim)};
  for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
    const auto o = layer_forward_streaming(
        center.slice_rows(plan.center[i].begin, plan.center[i].end),
        right.slice_rows(plan.right_rows[i].begin, plan.right_rows[i].end), state, cfg, w);
    out.center.append_rows(o.center);
    out.right.append_rows(o.right);
    CHECK(state.left_keys.rows() <= cfg.left_context);
    CHECK(state.memory.size() <= cfg.memory_slots + cfg.memory_offset);
  }
  return out;
}

ModelConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](std::initializer_list<std::size_t> xs) {
    return *(xs.begin() + static_cast<long>(rng() % xs.size()));
  };
  ModelConfig c;
  c.num_heads = pick({1, 2, 4});
  c.model_dim = c.num_heads * pick({2, 3, 4});
  c.ffn_dim = pick({4, 8, 16});
  c.block_size = pick({1, 2, 3, 4, 5});
  c.lookahead = pick({0, 1, 2});
  c.left_context = pick({0, 4, 8});
  c.memory_slots = pick({0, 2});
  c.memory_offset = pick({0, 2});
  c.kernel_size = pick({1, 3, 7});
  c.use_conv = rng() % 2;
  c.use_macaron = rng() % 2;
  c.use_talking_heads = rng() % 2;
  c.num_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("macaron_ffn_half: zero ffn, zero input, formula oracle") {
  ModelConfig cfg;
  std::mt19937_64 rng(1);
  auto w = testutil::random_model(cfg, 1).layers[0];
  const auto x = oracle::random_matrix(rng, 5, cfg.model_dim);

  auto zero_ffn = *w.ffn1;
  zero_ffn.lin_in = Tensor::matrix(cfg.model_dim, cfg.ffn_dim);
  CHECK(macaron_ffn_half(x, zero_ffn, w.ln_attn_in) ==
        layer_norm(x, w.ln_attn_in.gain, w.ln_attn_in.bias, kLayerNormEps));

  NormWeights<double> plain{Tensor(Shape{cfg.model_dim}), Tensor(Shape{cfg.model_dim})};
  for (double& v : plain.gain.data()) v = 1;
  auto ffn_plain = *w.ffn1;
  ffn_plain.norm = plain;
  const auto zero = macaron_ffn_half(Tensor::matrix(3, cfg.model_dim), ffn_plain, plain);
  for (double v : zero.data()) CHECK(v == 0.0);

  const auto mx = oracle::to_mat(x);
  const auto want = testutil::norm(oracle::add(mx, oracle::scale(testutil::ffn(mx, *w.ffn1), 0.5)),
                                   w.ln_attn_in);
  CHECK(max_abs_diff(macaron_ffn_half(x, *w.ffn1, w.ln_attn_in), want) <= 1e-12);
}

TEST_CASE("compress_block") {
  CHECK(compress_block(Tensor::from_rows({{1}, {3}}), Tensor::vector({0.5, 0.5})) ==
        Tensor::from_rows({{2}}));
  CHECK(compress_block(Tensor::from_rows({{7, 8}, {1, 2}}), Tensor::vector({1, 0})) ==
        Tensor::from_rows({{7, 8}}));
  std::mt19937_64 rng(2);
  const auto block = oracle::random_matrix(rng, 4, 5);
  const auto wts = oracle::random_matrix(rng, 1, 4).reshape(Shape{4});
  const auto got = compress_block(block, wts);
  for (std::size_t j = 0; j < 5; ++j) {
    double dot = 0;
    for (std::size_t t = 0; t < 4; ++t) dot += wts[t] * block(t, j);
    CHECK(std::abs(got(0, j) - dot) <= 1e-15);
  }
  // Short tail block: leading weights renormalized.
  const auto tail = compress_block(Tensor::from_rows({{2}, {4}}), Tensor::vector({1, 3, 4}));
  CHECK(std::abs(tail(0, 0) - (0.25 * 2 + 0.75 * 4)) <= 1e-15);
  CHECK_THROWS_AS(compress_block(Tensor::matrix(0, 3), Tensor::vector({1})), ShapeError);
}

TEST_CASE("memory_bank_select: offset semantics") {
  std::vector<Tensor> slots;
  for (int b = 0; b < 8; ++b) slots.push_back(Tensor::from_rows({{double(b)}}));
  const auto bank = memory_bank_select<double>(slots, 5, 2, 2);
  CHECK(bank.source_blocks == std::vector<std::size_t>{1, 2});
  CHECK(bank.slots[0](0, 0) == 1.0);
  for (std::size_t s : {1u, 2u, 5u}) CHECK(memory_bank_select<double>(slots, 1, s, 1).slots.empty());
  for (std::size_t i = 0; i < 8; ++i) CHECK(memory_bank_select<double>(slots, i, 0, 0).slots.empty());
  CHECK(memory_block_range(3, 2, 0) == IndexRange{1, 3});
  CHECK(memory_block_range(2, 4, 0) == IndexRange{0, 2});
}

TEST_CASE("memory and left context never overlap when offset covers left context") {
  for (std::size_t c : {1u, 2u, 3u, 4u, 5u}) {
    for (std::size_t L : {0u, 4u, 8u, 12u}) {
      const std::size_t offset = (L + c - 1) / c;
      const auto plan = plan_blocks(60, c, 1);
      for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
        const auto mem = memory_block_range(i, 3, offset);
        const auto left = left_context_range(plan.center[i].begin, L);
        std::set<std::size_t> mem_frames;
        for (std::size_t b = mem.begin; b < mem.end; ++b)
          for (std::size_t t = plan.center[b].begin; t < plan.center[b].end; ++t) mem_frames.insert(t);
        for (std::size_t t = left.begin; t < left.end; ++t) CHECK(mem_frames.count(t) == 0);
      }
    }
  }
}

TEST_CASE("layer: degenerate config equals plain transformer layer on [C;R]") {
  ModelConfig cfg = testutil::baseline_config(ModelConfig{});
  cfg.left_context = 0;
  const auto w = testutil::random_model(cfg, 3).layers[0];
  std::mt19937_64 rng(3);
  const auto x = oracle::random_matrix(rng, 5, cfg.model_dim);
  const auto plan = plan_blocks(5, 4, 1);
  const auto out = layer_forward_parallel(x.slice_rows(0, 5), gather_right(x, plan), plan, cfg, w);

  auto block = x.slice_rows(0, 5);  // [C ; R] = frames 0..3 then copy of 4
  const auto want = testutil::baseline_single_block(oracle::to_mat(block), w);
  CHECK(max_abs_diff(out.center.slice_rows(0, 4),
                     oracle::Mat(want.begin(), want.begin() + 4)) <= 1e-12);
  CHECK(max_abs_diff(out.right.slice_rows(0, 1), oracle::Mat(want.begin() + 4, want.begin() + 5)) <=
        1e-12);
}

TEST_CASE("layer: block 0 output independent of block 1 center frames") {
  ModelConfig cfg;
  const auto w = testutil::random_model(cfg, 4).layers[0];
  std::mt19937_64 rng(4);
  auto x = oracle::random_matrix(rng, 8, cfg.model_dim);
  const auto plan = plan_blocks(8, 4, 0);
  const auto base = layer_forward_parallel(x, gather_right(x, plan), plan, cfg, w);
  for (std::size_t t = 4; t < 8; ++t)
    for (double& v : x.row(t)) v = 100.0 * v - 3.0;
  const auto pert = layer_forward_parallel(x, gather_right(x, plan), plan, cfg, w);
  CHECK(pert.center.slice_rows(0, 4) == base.center.slice_rows(0, 4));
}

TEST_CASE("layer: streaming equals parallel over random configurations") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 150; ++trial) {
    const auto cfg = random_config(rng);
    const auto w = testutil::random_model(cfg, 100 + trial).layers[0];
    const std::size_t n = 1 + rng() % 24;
    const auto x = oracle::random_matrix(rng, n, cfg.model_dim);
    const auto plan = plan_blocks(n, cfg.block_size, cfg.lookahead);
    const auto right = gather_right(x, plan);
    const auto par = layer_forward_parallel(x, right, plan, cfg, w);
    const auto str = run_streaming(x, right, plan, cfg, w);
    CAPTURE(serialize_config(cfg));
    CHECK(max_abs_diff(par.center, str.center) <= 1e-12);
    CHECK(max_abs_diff(par.right, str.right) <= 1e-12);
  }
}

TEST_CASE("layer: first block of streaming equals one-block parallel bitwise-close") {
  ModelConfig cfg;
  const auto w = testutil::random_model(cfg, 6).layers[0];
  std::mt19937_64 rng(6);
  const auto x = oracle::random_matrix(rng, 4, cfg.model_dim);
  const auto plan = plan_blocks(4, 4, 1);
  const auto par = layer_forward_parallel(x, gather_right(x, plan), plan, cfg, w);
  auto state = LayerState<double>::initial(cfg);
  const auto s = layer_forward_streaming(x, Tensor::matrix(0, cfg.model_dim), state, cfg, w);
  CHECK(max_abs_diff(s.center, par.center) <= 1e-12);
}

TEST_CASE("layer: lookahead copies of other blocks never leak") {
  ModelConfig cfg;
  cfg.lookahead = 2;
  const auto w = testutil::random_model(cfg, 7).layers[0];
  std::mt19937_64 rng(7);
  const auto x = oracle::random_matrix(rng, 16, cfg.model_dim);
  const auto plan = plan_blocks(16, cfg.block_size, cfg.lookahead);
  const auto right = gather_right(x, plan);
  const auto base = layer_forward_parallel(x, right, plan, cfg, w);
  for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
    // Perturb later blocks' lookahead copies and all later centers. Earlier
    // copies legitimately reach block i through the causal conv history.
    Tensor r2 = right, x2 = x;
    for (std::size_t j = i + 1; j < plan.num_blocks(); ++j) {
      for (std::size_t r = plan.right_rows[j].begin; r < plan.right_rows[j].end; ++r)
        for (double& v : r2.row(r)) v += 9.0;
    }
    for (std::size_t t = plan.center[i].end; t < 16; ++t)
      for (double& v : x2.row(t)) v -= 4.0;
    const auto out = layer_forward_parallel(x2, r2, plan, cfg, w);
    const auto c = plan.center[i];
    CHECK(out.center.slice_rows(c.begin, c.end) == base.center.slice_rows(c.begin, c.end));
    const auto rr = plan.right_rows[i];
    CHECK(out.right.slice_rows(rr.begin, rr.end) == base.right.slice_rows(rr.begin, rr.end));
  }
}

TEST_CASE("layer: L=8, c=4, S=2, O=2 geometry accepted") {
  ModelConfig cfg;
  cfg.left_context = 8;
  cfg.block_size = 4;
  cfg.memory_slots = 2;
  cfg.memory_offset = 2;
  CHECK_NOTHROW(cfg.validate());
  const auto w = testutil::random_model(cfg, 8).layers[0];
  CHECK_NOTHROW(w.validate(cfg));
}

TEST_CASE("layer: weights must match configuration flags") {
  ModelConfig cfg;
  auto w = testutil::random_model(cfg, 9).layers[0];
  ModelConfig no_conv = cfg;
  no_conv.use_conv = false;
  CHECK_THROWS_AS(w.validate(no_conv), ConfigError);
  ModelConfig more_heads = cfg;
  more_heads.num_heads = 8;
  CHECK_THROWS(w.validate(more_heads));
  auto state = LayerState<double>::initial(no_conv);
  std::mt19937_64 rng(9);
  const auto x = oracle::random_matrix(rng, 4, cfg.model_dim);
  CHECK_THROWS_AS(layer_forward_streaming(x, Tensor::matrix(0, cfg.model_dim), state, cfg, w),
                  StateError);
}
