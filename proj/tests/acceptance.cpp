// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed here and never read from the environment.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "cli.hpp"
#include "emformer/encoder.hpp"
#include "emformer/layer.hpp"
#include "emformer/numerics.hpp"
#include "test_util.hpp"

using namespace emformer;
using testutil::max_abs_diff;

namespace {

constexpr double kEquivalenceTol = 1e-9;
constexpr double kEquivalenceBudgetSeconds = 5.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kConvTol = 1e-12;
constexpr double kBaselineTol = 1e-12;

// FNV-1a over the serialized desk weights for seed 2024. Pins generation
// across builds and runs, not just within one process.
constexpr std::uint64_t kDeskSeed2024Digest = 0x38faa01a2f1fc604ULL;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ModelConfig desk() { return preset_config("desk"); }

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Outcome dual_path_equivalence() {
  const auto cfg = desk();
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto w = testutil::random_model(cfg, seed);
    const auto frames = random_frames<double>(200, cfg.input_dim, 1000 + seed);
    const auto r = check_equivalence(frames, cfg, w);
    if (!r.shapes_match) return {false, "shape mismatch at seed " + std::to_string(seed)};
    worst = std::max(worst, r.max_abs_diff);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kEquivalenceTol && secs < kEquivalenceBudgetSeconds,
          fmt("max_abs_diff=%.3e over 20 seeds", worst) + fmt(", %.2f s", secs)};
}

Outcome chunking_invariance() {
  const auto cfg = desk();
  const std::size_t f = cfg.stack_factor;
  const std::vector<std::size_t> chunks{1, f, cfg.block_size * f, 0};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto w = testutil::random_model(cfg, seed);
    const auto frames = random_frames<double>(101, cfg.input_dim, seed);
    const auto whole = encoder_forward_streaming(frames, cfg, w, 0);
    for (std::size_t c : chunks) {
      if (!(encoder_forward_streaming(frames, cfg, w, c) == whole)) {
        return {false, "seed " + std::to_string(seed) + " chunk " + std::to_string(c)};
      }
    }
  }
  return {true, "bitwise identical for chunks {1, f, c*f, whole} x 5 seeds"};
}

// Perturbs each future superframe on its own, then all of them together.
Outcome no_leak() {
  std::size_t checks = 0;
  for (int flags = 0; flags < 4; ++flags) {
    ModelConfig cfg = desk();
    cfg.use_conv = flags & 1;
    cfg.use_talking_heads = flags & 2;
    const std::size_t n_super = 12 * cfg.block_size;
    const std::size_t f = cfg.stack_factor;
    const auto w = testutil::random_model(cfg, 30 + flags);
    const auto frames = random_frames<double>(n_super * f, cfg.input_dim, 30 + flags);
    const auto plan = plan_blocks(n_super, cfg.block_size, cfg.lookahead);
    if (plan.num_blocks() != 12) return {false, "expected 12 blocks"};
    const auto base_p = encoder_forward_parallel(frames, cfg, w);
    const auto base_s = encoder_forward_streaming(frames, cfg, w);
    std::mt19937_64 rng(flags);
    std::uniform_real_distribution<double> u(-3, 3);
    for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
      const auto c = plan.center[i];
      const std::size_t first = plan.lookahead[i].end;
      for (std::size_t s = first; s <= n_super; ++s) {
        Tensor pert = frames;
        const std::size_t lo = s < n_super ? s : first;  // s == n_super: all at once
        const std::size_t hi = s < n_super ? s + 1 : n_super;
        if (lo >= hi) continue;
        for (std::size_t t = lo * f; t < hi * f; ++t)
          for (double& v : pert.row(t)) v += u(rng);
        const auto p = encoder_forward_parallel(pert, cfg, w);
        const auto q = encoder_forward_streaming(pert, cfg, w);
        if (!(p.slice_rows(c.begin, c.end) == base_p.slice_rows(c.begin, c.end)) ||
            !(q.slice_rows(c.begin, c.end) == base_s.slice_rows(c.begin, c.end))) {
          return {false, "block " + std::to_string(i) + " changed (flags " +
                             std::to_string(flags) + ", superframe " + std::to_string(s) + ")"};
        }
        ++checks;
      }
    }
  }
  return {true, std::to_string(checks) + " perturbations, change exactly 0.0 on both paths"};
}

Outcome talking_heads_identity() {
  ModelConfig th_cfg = desk();
  auto th = testutil::random_model(th_cfg, 41);
  for (auto& l : th.layers) {
    Tensor id = Tensor::matrix(th_cfg.num_heads, th_cfg.num_heads);
    for (std::size_t i = 0; i < th_cfg.num_heads; ++i) id(i, i) = 1;
    l.talking_heads = TalkingHeadsWeights<double>{id, id};
  }
  ModelConfig mha_cfg = th_cfg;
  mha_cfg.use_talking_heads = false;
  auto mha = th;
  for (auto& l : mha.layers) l.talking_heads.reset();
  const auto frames = random_frames<double>(150, th_cfg.input_dim, 41);
  const double dp = max_abs_diff(encoder_forward_parallel(frames, th_cfg, th),
                                 encoder_forward_parallel(frames, mha_cfg, mha));
  const double ds = max_abs_diff(encoder_forward_streaming(frames, th_cfg, th),
                                 encoder_forward_streaming(frames, mha_cfg, mha));
  const double d = std::max(dp, ds);
  return {d <= kIdentityTol, fmt("max_abs_diff=%.3e (both paths)", d)};
}

Outcome conv_oracle() {
  std::mt19937_64 rng(51);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = std::vector<std::size_t>{1, 3, 7}[trial % 3];
    const std::size_t n = 1 + rng() % 32;
    const std::size_t ch = 1 + rng() % 6;
    const auto x = oracle::random_matrix(rng, n, ch);
    const auto dw = oracle::random_matrix(rng, ch, k);
    Tensor tail = Tensor::matrix(k - 1, ch);
    Tensor got = Tensor::matrix(0, ch);
    for (std::size_t pos = 0; pos < n;) {
      const std::size_t len = std::min(n - pos, 1 + rng() % 5);
      got.append_rows(depthwise_conv_step(x.slice_rows(pos, pos + len), tail, dw));
      pos += len;
    }
    worst = std::max(worst, max_abs_diff(got, oracle::windowed_sum(oracle::to_mat(x),
                                                                   oracle::to_mat(dw))));
  }
  // Row t of the tagged center holds the value t, so padding rows name
  // their source indices directly.
  std::size_t index_checks = 0;
  for (std::size_t k : {1u, 3u, 7u}) {
    Tensor tagged = Tensor::matrix(20, 1);
    for (std::size_t t = 0; t < 20; ++t) tagged(t, 0) = static_cast<double>(t);
    for (std::size_t m = k - 1; m <= 20; ++m) {
      const auto pad = lookahead_padding(tagged, m, k);
      if (pad.rows() != k - 1) return {false, "padding has wrong row count"};
      for (std::size_t j = 0; j + 1 < k; ++j) {
        if (pad(j, 0) != static_cast<double>(m - k + 1 + j)) {
          return {false, "padding index mismatch at m=" + std::to_string(m)};
        }
        ++index_checks;
      }
    }
  }
  return {worst <= kConvTol,
          fmt("100 instances, max_abs_diff=%.3e", worst) + ", " +
              std::to_string(index_checks) + " padding indices exact"};
}

Outcome memory_disjointness() {
  ModelConfig cfg = desk();
  cfg.left_context = 8;
  cfg.block_size = 4;
  cfg.memory_slots = 2;
  cfg.memory_offset = 2;
  cfg.validate();
  const auto plan = plan_blocks(80, cfg.block_size, cfg.lookahead);
  for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
    const auto mem = memory_block_range(i, cfg.memory_slots, cfg.memory_offset);
    const auto left = left_context_range(plan.center[i].begin, cfg.left_context);
    std::set<std::size_t> mem_frames;
    for (std::size_t b = mem.begin; b < mem.end; ++b)
      for (std::size_t t = plan.center[b].begin; t < plan.center[b].end; ++t) mem_frames.insert(t);
    for (std::size_t t = left.begin; t < left.end; ++t) {
      if (mem_frames.count(t)) return {false, "overlap at block " + std::to_string(i)};
    }
  }
  std::vector<Tensor> slots;
  for (int b = 0; b < 8; ++b) slots.push_back(Tensor::from_rows({{double(b)}}));
  const auto bank = memory_bank_select<double>(slots, 5, cfg.memory_slots, cfg.memory_offset);
  const bool block5 = bank.source_blocks == std::vector<std::size_t>{1, 2};

  // The streaming ring holds the same blocks when block 5 runs.
  std::set<std::size_t> seen;
  const auto w = testutil::random_model(cfg, 61);
  EncoderStream<double> stream(cfg, w);
  stream.set_block_hook([&](StreamingState<double>& s, std::size_t b) {
    if (b != 4) return;
    for (const auto& slot : s.layers[0].memory)
      if (slot.block + cfg.memory_offset + cfg.memory_slots >= 5 && slot.block + cfg.memory_offset < 5)
        seen.insert(slot.block);
  });
  stream.push(random_frames<double>(80, cfg.input_dim, 61));
  stream.flush();
  const bool ring = seen == std::set<std::size_t>{1, 2};
  return {block5 && ring, std::to_string(plan.num_blocks()) +
                              " blocks disjoint; block 5 memory = {1,2}" +
                              (ring ? "" : " (ring mismatch)")};
}

std::size_t first_emission_frames(const ModelConfig& cfg) {
  const auto w = generate_weights(cfg, {71});
  EncoderStream<double> stream(cfg, w);
  const std::size_t limit = 4 * (cfg.block_size + cfg.lookahead) * cfg.stack_factor;
  const auto frames = random_frames<double>(limit, cfg.input_dim, 71);
  for (std::size_t t = 0; t < limit; ++t) {
    if (stream.push(frames.slice_rows(t, t + 1)).rows() > 0) return t + 1;
  }
  return 0;
}

Outcome geometry_latency() {
  const auto d = desk();
  const double desk_ms = static_cast<double>(first_emission_frames(d)) * kFrameSeconds * 1000.0;
  const double desk_want = static_cast<double>((d.block_size + d.lookahead) * d.stack_factor) * 10.0;

  // Production geometry at reduced width: 320 ms center, 80 ms lookahead.
  ModelConfig p = preset_config("full-32m");
  p.model_dim = 16;
  p.ffn_dim = 32;
  p.num_layers = 2;
  const double center_ms = static_cast<double>(p.block_size * p.stack_factor) * 10.0;
  const double look_ms = static_cast<double>(p.lookahead * p.stack_factor) * 10.0;
  const double p_ms = static_cast<double>(first_emission_frames(p)) * kFrameSeconds * 1000.0;
  const bool ok = std::abs(desk_ms - desk_want) < 1e-9 && std::abs(p_ms - 400.0) < 1e-9 &&
                  std::abs(p.first_emission_ms() - 400.0) < 1e-9 && center_ms == 320.0 &&
                  look_ms == 80.0;
  return {ok, fmt("desk %.0f ms", desk_ms) + fmt(" (want %.0f)", desk_want) +
                  fmt(", 320/80 geometry %.0f ms (want 400)", p_ms)};
}

Outcome directional_rtf() {
  ModelConfig cfg = desk();
  cfg.model_dim = 64;
  cfg.ffn_dim = 256;
  cfg.num_layers = 4;
  cfg.block_size = 4;
  cfg.lookahead = 1;
  cli::BenchOptions opts;
  opts.seconds = 20;
  opts.repeat = 5;
  opts.mode = cli::BenchMode::kStreaming;
  const auto w = generate_weights(cfg, {81});
  const auto with_r = cli::run_bench(cfg, w, opts);
  cfg.block_size = 5;
  cfg.lookahead = 0;
  const auto w0 = generate_weights(cfg, {81});
  const auto no_r = cli::run_bench(cfg, w0, opts);
  return {with_r.rtf > no_r.rtf,
          fmt("rtf c4r1=%.4g", with_r.rtf) + fmt(" > c5r0=%.4g", no_r.rtf) + " (median of 5)"};
}

Outcome baseline_degeneration() {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ModelConfig cfg = testutil::baseline_config(desk());
    cfg.left_context = 0;
    cfg.lookahead = seed % 3;
    const auto w = testutil::random_model(cfg, 90 + seed).layers[0];
    std::mt19937_64 rng(seed);
    const std::size_t r = cfg.lookahead;
    const auto x = oracle::random_matrix(rng, cfg.block_size + r, cfg.model_dim);
    const auto center = x.slice_rows(0, cfg.block_size);
    const auto right = x.slice_rows(cfg.block_size, cfg.block_size + r);
    const auto want = testutil::baseline_single_block(oracle::to_mat(x), w);
    const oracle::Mat want_c(want.begin(), want.begin() + static_cast<long>(cfg.block_size));
    const oracle::Mat want_r(want.begin() + static_cast<long>(cfg.block_size), want.end());

    BlockPlan plan;
    plan.num_frames = cfg.block_size;
    plan.center = {{0, cfg.block_size}};
    plan.lookahead = {{cfg.block_size, cfg.block_size + r}};
    plan.right_rows = {{0, r}};
    const auto par = layer_forward_parallel(center, right, plan, cfg, w);
    auto state = LayerState<double>::initial(cfg);
    const auto str = layer_forward_streaming(center, right, state, cfg, w);
    for (const auto* out : {&par, &str}) {
      worst = std::max(worst, max_abs_diff(out->center, want_c));
      if (r > 0) worst = std::max(worst, max_abs_diff(out->right, want_r));
    }
  }
  return {worst <= kBaselineTol, fmt("max_abs_diff=%.3e vs single-block oracle", worst)};
}

Outcome weight_round_trip() {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "emformer_acceptance";
  fs::create_directories(dir);
  const auto cfg = desk();
  const auto a = serialize_weights(cfg, generate_weights(cfg, {2024}));
  const auto b = serialize_weights(cfg, generate_weights(cfg, {2024}));
  save_weights((dir / "a.emw").string(), cfg, generate_weights(cfg, {2024}));
  const auto loaded = load_weights((dir / "a.emw").string());
  save_weights((dir / "b.emw").string(), loaded.config, loaded.weights);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
  };
  const auto fa = bytes(dir / "a.emw");
  const auto fb = bytes(dir / "b.emw");
  const std::uint64_t digest = fnv1a(a);
  const bool pinned = digest == kDeskSeed2024Digest;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(digest));
  return {a == b && fa == fb && fa == a && pinned,
          std::to_string(fa.size()) + " bytes, save->load->save identical, digest " + hex};
}

}  // namespace

int main() {
  report(1, "dual-path equivalence", dual_path_equivalence);
  report(2, "chunking invariance", chunking_invariance);
  report(3, "no future leakage", no_leak);
  report(4, "talking-heads identity reduction", talking_heads_identity);
  report(5, "depthwise conv oracle and lookahead padding", conv_oracle);
  report(6, "memory/left-context disjointness", memory_disjointness);
  report(7, "first-emission latency", geometry_latency);
  report(8, "directional real-time factor", directional_rtf);
  report(9, "baseline layer degeneration", baseline_degeneration);
  report(10, "weight file round trip", weight_round_trip);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
