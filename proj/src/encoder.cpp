#include "emformer/encoder.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "emformer/errors.hpp"
#include "emformer/numerics.hpp"

namespace emformer {

template <typename T>
BasicTensor<T> superframe_stack(const BasicTensor<T>& frames, std::size_t factor) {
  if (factor == 0) throw ConfigError("stack_factor must be >= 1");
  if (frames.rank() != 2) {
    throw ShapeError("superframe_stack: frames must be a matrix, got " +
                     shape_to_string(frames.shape()));
  }
  const std::size_t n = frames.rows() / factor;
  // Row-major layout makes each group of `factor` rows one contiguous row.
  return frames.slice_rows(0, n * factor).reshape(Shape{n, frames.cols() * factor});
}

namespace {

template <typename T>
void check_model(const ModelConfig& cfg, const ModelWeights<T>& weights) {
  cfg.validate();
  weights.validate(cfg);
}

template <typename T>
void check_frames(const BasicTensor<T>& frames, const ModelConfig& cfg) {
  if (frames.rank() != 2 || (frames.rows() > 0 && frames.cols() != cfg.input_dim)) {
    throw ShapeError("frames are " + shape_to_string(frames.shape()) +
                     ", expected rows of " + std::to_string(cfg.input_dim) +
                     " features");
  }
}

template <typename T>
BasicTensor<T> gather_lookahead(const BasicTensor<T>& x, const BlockPlan& plan) {
  BasicTensor<T> out = BasicTensor<T>::matrix(0, x.cols());
  for (const auto& la : plan.lookahead) out.append_rows(x.slice_rows(la.begin, la.end));
  return out;
}

std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

double uniform_pm1(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace

template <typename T>
BasicTensor<T> encoder_forward_parallel(const BasicTensor<T>& frames,
                                        const ModelConfig& cfg,
                                        const ModelWeights<T>& weights) {
  check_model(cfg, weights);
  check_frames(frames, cfg);
  const auto sf = superframe_stack(
      frames.rows() == 0 ? BasicTensor<T>::matrix(0, cfg.input_dim) : frames,
      cfg.stack_factor);
  BasicTensor<T> center = matmul(sf, weights.input_proj);
  const BlockPlan plan = plan_blocks(center.rows(), cfg.block_size, cfg.lookahead);
  BasicTensor<T> right = gather_lookahead(center, plan);
  for (const auto& layer : weights.layers) {
    auto out = layer_forward_parallel(center, right, plan, cfg, layer);
    center = std::move(out.center);
    right = std::move(out.right);
  }
  return center;
}

template <typename T>
EncoderStream<T>::EncoderStream(const ModelConfig& cfg, const ModelWeights<T>& weights)
    : cfg_(cfg), weights_(&weights) {
  check_model(cfg_, weights);
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    state_.layers.push_back(LayerState<T>::initial(cfg_));
  }
  state_.raw_remainder = BasicTensor<T>::matrix(0, cfg_.input_dim);
  state_.pending = BasicTensor<T>::matrix(0, cfg_.model_dim);
}

template <typename T>
BasicTensor<T> EncoderStream<T>::push(const BasicTensor<T>& frames) {
  if (state_.flushed) throw StateError("push after flush");
  if (frames.numel() == 0) return BasicTensor<T>::matrix(0, cfg_.model_dim);
  check_frames(frames, cfg_);
  state_.raw_remainder.append_rows(frames);
  const std::size_t f = cfg_.stack_factor;
  const std::size_t groups = state_.raw_remainder.rows() / f;
  if (groups > 0) {
    const auto sf = superframe_stack(state_.raw_remainder, f);
    state_.pending.append_rows(matmul(sf, weights_->input_proj));
    state_.raw_remainder.keep_last_rows(state_.raw_remainder.rows() - groups * f);
  }
  return drain(false);
}

template <typename T>
BasicTensor<T> EncoderStream<T>::flush() {
  if (state_.flushed) throw StateError("flush called twice");
  state_.flushed = true;
  return drain(true);
}

template <typename T>
BasicTensor<T> EncoderStream<T>::drain(bool final) {
  BasicTensor<T> out = BasicTensor<T>::matrix(0, cfg_.model_dim);
  const std::size_t c = cfg_.block_size;
  const std::size_t r = cfg_.lookahead;
  while (true) {
    const std::size_t p = state_.pending.rows();
    if (!final && p < c + r) break;
    if (p == 0) break;
    const std::size_t center_rows = std::min(c, p);
    const std::size_t right_rows = std::min(r, p - center_rows);
    out.append_rows(run_block(center_rows, right_rows));
  }
  return out;
}

template <typename T>
BasicTensor<T> EncoderStream<T>::run_block(std::size_t center_rows,
                                           std::size_t right_rows) {
  const auto start = std::chrono::steady_clock::now();
  BasicTensor<T> center = state_.pending.slice_rows(0, center_rows);
  BasicTensor<T> right = state_.pending.slice_rows(center_rows, center_rows + right_rows);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    auto out = layer_forward_streaming(center, right, state_.layers[l], cfg_,
                                       weights_->layers[l]);
    center = std::move(out.center);
    right = std::move(out.right);
  }
  block_seconds_.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  state_.pending.keep_last_rows(state_.pending.rows() - center_rows);
  const std::size_t index = state_.blocks_emitted++;
  state_.rows_emitted += center_rows;
  if (hook_) hook_(state_, index);
  return center;
}

template <typename T>
BasicTensor<T> encoder_forward_streaming(const BasicTensor<T>& frames,
                                         const ModelConfig& cfg,
                                         const ModelWeights<T>& weights,
                                         std::size_t chunk_frames) {
  EncoderStream<T> stream(cfg, weights);
  BasicTensor<T> out = BasicTensor<T>::matrix(0, cfg.model_dim);
  const std::size_t n = frames.rows();
  const std::size_t step = chunk_frames == 0 ? std::max<std::size_t>(n, 1) : chunk_frames;
  for (std::size_t b = 0; b < n; b += step) {
    out.append_rows(stream.push(frames.slice_rows(b, std::min(n, b + step))));
  }
  out.append_rows(stream.flush());
  return out;
}

template <typename T>
EquivalenceReport compare_outputs(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  EquivalenceReport rep;
  rep.rows = a.rows();
  if (a.shape() != b.shape()) {
    rep.shapes_match = false;
    rep.max_abs_diff = std::numeric_limits<double>::infinity();
    return rep;
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double diff = std::abs(static_cast<double>(a(r, c)) - static_cast<double>(b(r, c)));
      if (diff > rep.max_abs_diff || std::isnan(diff)) {
        rep.max_abs_diff = diff;
        rep.argmax_row = r;
        rep.argmax_col = c;
      }
    }
  }
  return rep;
}

template <typename T>
EquivalenceReport check_equivalence(const BasicTensor<T>& frames, const ModelConfig& cfg,
                                    const ModelWeights<T>& weights,
                                    typename EncoderStream<T>::BlockHook hook) {
  const auto parallel = encoder_forward_parallel(frames, cfg, weights);
  EncoderStream<T> stream(cfg, weights);
  if (hook) stream.set_block_hook(std::move(hook));
  BasicTensor<T> streaming = stream.push(frames);
  streaming.append_rows(stream.flush());
  return compare_outputs(parallel, streaming);
}

template <typename T>
LeakReport leak_check(const BasicTensor<T>& frames, const ModelConfig& cfg,
                      const ModelWeights<T>& weights, std::uint64_t seed) {
  LeakReport rep;
  const auto base_parallel = encoder_forward_parallel(frames, cfg, weights);
  const auto base_streaming = encoder_forward_streaming(frames, cfg, weights);
  const BlockPlan plan =
      plan_blocks(frames.rows() / cfg.stack_factor, cfg.block_size, cfg.lookahead);
  auto rng = make_rng(seed);
  for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
    const std::size_t first_raw = plan.lookahead[i].end * cfg.stack_factor;
    if (first_raw >= frames.rows()) continue;
    BasicTensor<T> perturbed = frames;
    for (std::size_t t = first_raw; t < frames.rows(); ++t) {
      for (auto& v : perturbed.row(t)) v += static_cast<T>(3.0 * uniform_pm1(rng));
    }
    const IndexRange c = plan.center[i];
    for (const auto* base : {&base_parallel, &base_streaming}) {
      const auto out = base == &base_parallel
                           ? encoder_forward_parallel(perturbed, cfg, weights)
                           : encoder_forward_streaming(perturbed, cfg, weights);
      const auto d = compare_outputs(base->slice_rows(c.begin, c.end),
                                     out.slice_rows(c.begin, c.end));
      if (d.max_abs_diff > rep.max_abs_diff) {
        rep.max_abs_diff = d.max_abs_diff;
        rep.worst_block = i;
      }
    }
    ++rep.blocks_checked;
  }
  return rep;
}

template <typename T>
BasicTensor<T> random_frames(std::size_t num_frames, std::size_t input_dim,
                             std::uint64_t seed) {
  auto rng = make_rng(seed);
  BasicTensor<T> out = BasicTensor<T>::matrix(num_frames, input_dim);
  for (auto& v : out.data()) v = static_cast<T>(uniform_pm1(rng));
  return out;
}

#define EMFORMER_INSTANTIATE(T)                                                 \
  template BasicTensor<T> superframe_stack(const BasicTensor<T>&, std::size_t); \
  template BasicTensor<T> encoder_forward_parallel(                             \
      const BasicTensor<T>&, const ModelConfig&, const ModelWeights<T>&);       \
  template class EncoderStream<T>;                                              \
  template BasicTensor<T> encoder_forward_streaming(                            \
      const BasicTensor<T>&, const ModelConfig&, const ModelWeights<T>&,        \
      std::size_t);                                                             \
  template EquivalenceReport compare_outputs(const BasicTensor<T>&,             \
                                             const BasicTensor<T>&);            \
  template EquivalenceReport check_equivalence(                                 \
      const BasicTensor<T>&, const ModelConfig&, const ModelWeights<T>&,        \
      typename EncoderStream<T>::BlockHook);                                    \
  template LeakReport leak_check(const BasicTensor<T>&, const ModelConfig&,     \
                                 const ModelWeights<T>&, std::uint64_t);        \
  template BasicTensor<T> random_frames(std::size_t, std::size_t, std::uint64_t);

EMFORMER_INSTANTIATE(double)
EMFORMER_INSTANTIATE(float)

#undef EMFORMER_INSTANTIATE

}  // namespace emformer
