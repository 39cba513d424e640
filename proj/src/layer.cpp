#include "emformer/layer.hpp"

#include <string>

#include "emformer/errors.hpp"
#include "emformer/numerics.hpp"

namespace emformer {

namespace {

template <typename T>
void require_shape(const BasicTensor<T>& t, const Shape& want,
                   const std::string& name) {
  if (t.shape() != want) {
    throw ShapeError(name + " is " + shape_to_string(t.shape()) + ", expected " +
                     shape_to_string(want));
  }
}

template <typename T>
void require_norm(const NormWeights<T>& n, std::size_t d,
                  const std::string& name) {
  require_shape(n.gain, Shape{d}, name + ".gain");
  require_shape(n.bias, Shape{d}, name + ".bias");
}

template <typename T>
void require_ffn(const FfnWeights<T>& f, const ModelConfig& cfg,
                 const std::string& name) {
  require_norm(f.norm, cfg.model_dim, name + ".norm");
  require_shape(f.lin_in, Shape{cfg.model_dim, cfg.ffn_dim}, name + ".lin_in");
  require_shape(f.lin_out, Shape{cfg.ffn_dim, cfg.model_dim}, name + ".lin_out");
}

void require_presence(bool has, bool want, const char* what) {
  if (has != want) {
    throw ConfigError(std::string(what) + (want ? " weights missing" : " weights present") +
                      " but configuration says " + (want ? "enabled" : "disabled"));
  }
}

template <typename T>
T eps() {
  return static_cast<T>(kLayerNormEps);
}

template <typename T>
BasicTensor<T> norm(const BasicTensor<T>& x, const NormWeights<T>& n) {
  return layer_norm(x, n.gain, n.bias, eps<T>());
}

// Layer input -> attention input (the hatted C and R).
template <typename T>
BasicTensor<T> attention_input(const BasicTensor<T>& x, const ModelConfig& cfg,
                               const LayerWeights<T>& w) {
  if (cfg.use_macaron) return macaron_ffn_half(x, *w.ffn1, w.ln_attn_in);
  return norm(x, w.ln_attn_in);
}

// Conv (or identity) output -> layer output.
template <typename T>
BasicTensor<T> finish(const BasicTensor<T>& y, const ModelConfig& cfg,
                      const LayerWeights<T>& w) {
  const T s = cfg.use_macaron ? T{0.5} : T{1};
  return norm(add(y, scale(ffn_forward(y, w.ffn2), s)), w.ln_final);
}

template <typename T>
struct Projected {
  BasicTensor<T> q, k, v;
};

template <typename T>
Projected<T> project(const BasicTensor<T>& x, const MhaWeights<T>& w) {
  return {matmul(x, w.w_q), matmul(x, w.w_k), matmul(x, w.w_v)};
}

template <typename T>
BasicTensor<T> compressed_block_weights(const BasicTensor<T>& weights,
                                        std::size_t rows) {
  if (rows == weights.numel()) return weights;
  T sum = 0;
  for (std::size_t t = 0; t < rows; ++t) sum += weights[t];
  if (sum == T{0}) {
    throw NumericError("compress_block: truncated weights sum to zero");
  }
  BasicTensor<T> out(Shape{rows});
  for (std::size_t t = 0; t < rows; ++t) out[t] = weights[t] / sum;
  return out;
}

}  // namespace

template <typename T>
void LayerWeights<T>::validate(const ModelConfig& cfg) const {
  const std::size_t d = cfg.model_dim;
  require_presence(ffn1.has_value(), cfg.use_macaron, "macaron ffn1");
  require_presence(talking_heads.has_value(), cfg.use_talking_heads,
                   "talking-heads");
  require_presence(conv.has_value(), cfg.use_conv, "conv");
  require_presence(ln_conv_in.has_value(), cfg.use_conv, "conv input norm");
  require_presence(compress.has_value(), cfg.memory_slots > 0, "compression");
  if (ffn1) require_ffn(*ffn1, cfg, "ffn1");
  require_ffn(ffn2, cfg, "ffn2");
  require_norm(ln_attn_in, d, "ln_attn_in");
  require_norm(ln_final, d, "ln_final");
  if (attn.num_heads != cfg.num_heads) {
    throw ConfigError("attention weights have " +
                      std::to_string(attn.num_heads) + " heads, config has " +
                      std::to_string(cfg.num_heads));
  }
  for (const auto* m : {&attn.w_q, &attn.w_k, &attn.w_v, &attn.w_o}) {
    require_shape(*m, Shape{d, d}, "attention projection");
  }
  if (talking_heads) talking_heads->validate(cfg.num_heads);
  if (conv) {
    conv->validate(d);
    require_shape(conv->dw, Shape{d, cfg.kernel_size}, "conv.dw");
    require_norm(*ln_conv_in, d, "ln_conv_in");
  }
  if (compress) require_shape(*compress, Shape{cfg.block_size}, "compress");
}

template <typename T>
BasicTensor<T> ffn_forward(const BasicTensor<T>& x, const FfnWeights<T>& w) {
  return matmul(relu(matmul(norm(x, w.norm), w.lin_in)), w.lin_out);
}

template <typename T>
BasicTensor<T> macaron_ffn_half(const BasicTensor<T>& x, const FfnWeights<T>& w,
                                const NormWeights<T>& ln) {
  return norm(add(x, scale(ffn_forward(x, w), T{0.5})), ln);
}

template <typename T>
BasicTensor<T> compress_block(const BasicTensor<T>& center_in,
                              const BasicTensor<T>& weights) {
  const std::size_t c = center_in.rows();
  if (c == 0) throw ShapeError("compress_block: empty block");
  if (c > weights.numel()) {
    throw ShapeError("compress_block: block of " + std::to_string(c) +
                     " rows exceeds " + std::to_string(weights.numel()) +
                     " weights");
  }
  const auto wts = compressed_block_weights(weights, c);
  const std::size_t d = center_in.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(1, d);
  for (std::size_t t = 0; t < c; ++t) {
    auto row = center_in.row(t);
    for (std::size_t j = 0; j < d; ++j) out(0, j) += wts[t] * row[j];
  }
  return out;
}

template <typename T>
MemoryBank<T> memory_bank_select(std::span<const BasicTensor<T>> all_slots,
                                 std::size_t block, std::size_t slots,
                                 std::size_t offset) {
  MemoryBank<T> bank;
  const IndexRange r = memory_block_range(block, slots, offset);
  for (std::size_t b = r.begin; b < r.end && b < all_slots.size(); ++b) {
    bank.slots.push_back(all_slots[b]);
    bank.source_blocks.push_back(b);
  }
  return bank;
}

template <typename T>
LayerOutput<T> layer_forward_parallel(const BasicTensor<T>& center,
                                      const BasicTensor<T>& right,
                                      const BlockPlan& plan,
                                      const ModelConfig& cfg,
                                      const LayerWeights<T>& w) {
  w.validate(cfg);
  const std::size_t d = cfg.model_dim;
  const std::size_t n = center.rows();
  const std::size_t nr = right.rows();
  if (center.cols() != d || right.cols() != d || n != plan.num_frames ||
      nr != plan.total_right_rows()) {
    throw ShapeError("layer_forward_parallel: inputs " +
                     shape_to_string(center.shape()) + " / " +
                     shape_to_string(right.shape()) +
                     " do not match the block plan");
  }

  const auto pc = project(attention_input(center, cfg, w), w.attn);
  const auto pr = project(attention_input(right, cfg, w), w.attn);

  // Memory rows: one compressed vector per block, taken from the layer input.
  BasicTensor<T> memory = BasicTensor<T>::matrix(0, d);
  if (cfg.memory_slots > 0) {
    for (const auto& c : plan.center) {
      memory.append_rows(compress_block(center.slice_rows(c.begin, c.end), *w.compress));
    }
  }
  const std::size_t nm = memory.rows();
  const auto mk = matmul(memory, w.attn.w_k);
  const auto mv = matmul(memory, w.attn.w_v);

  BasicTensor<T> q = pr.q;
  q.append_rows(pc.q);
  BasicTensor<T> k = mk;
  k.append_rows(pr.k);
  k.append_rows(pc.k);
  BasicTensor<T> v = mv;
  v.append_rows(pr.v);
  v.append_rows(pc.v);

  const std::size_t right_key0 = nm;
  const std::size_t center_key0 = nm + nr;
  AttentionMask mask(nr + n, nm + nr + n);
  for (std::size_t i = 0; i < plan.num_blocks(); ++i) {
    const IndexRange& c = plan.center[i];
    const IndexRange& rr = plan.right_rows[i];
    const IndexRange left = left_context_range(c.begin, cfg.left_context);
    const IndexRange mem = memory_block_range(i, cfg.memory_slots, cfg.memory_offset);
    auto allow = [&](std::size_t query) {
      if (nm > 0) mask.allow_range(query, mem.begin, mem.end);
      mask.allow_range(query, right_key0 + rr.begin, right_key0 + rr.end);
      mask.allow_range(query, center_key0 + left.begin, center_key0 + c.end);
    };
    for (std::size_t r = rr.begin; r < rr.end; ++r) allow(r);
    for (std::size_t t = c.begin; t < c.end; ++t) allow(nr + t);
  }

  const auto* th = w.talking_heads ? &*w.talking_heads : nullptr;
  const auto att = matmul(attend_projected(q, k, v, cfg.num_heads, th, &mask), w.attn.w_o);
  const auto zr = add(att.slice_rows(0, nr), right);
  const auto zc = add(att.slice_rows(nr, nr + n), center);

  if (!cfg.use_conv) return {finish(zc, cfg, w), finish(zr, cfg, w)};
  const auto conv = conv_block_parallel(norm(zc, *w.ln_conv_in), norm(zr, *w.ln_conv_in),
                                        std::span<const IndexRange>(plan.center),
                                        std::span<const IndexRange>(plan.right_rows),
                                        *w.conv);
  return {finish(conv.center, cfg, w), finish(conv.right, cfg, w)};
}

template <typename T>
LayerState<T> LayerState<T>::initial(const ModelConfig& cfg) {
  LayerState s;
  s.left_keys = BasicTensor<T>::matrix(0, cfg.model_dim);
  s.left_values = BasicTensor<T>::matrix(0, cfg.model_dim);
  if (cfg.use_conv) s.conv = ConvState<T>::initial(cfg.kernel_size, cfg.model_dim);
  return s;
}

template <typename T>
LayerOutput<T> layer_forward_streaming(const BasicTensor<T>& center,
                                       const BasicTensor<T>& right,
                                       LayerState<T>& state,
                                       const ModelConfig& cfg,
                                       const LayerWeights<T>& w) {
  w.validate(cfg);
  const std::size_t d = cfg.model_dim;
  if (center.cols() != d || right.cols() != d || center.rows() == 0 ||
      center.rows() > cfg.block_size) {
    throw ShapeError("layer_forward_streaming: block " +
                     shape_to_string(center.shape()) + " / lookahead " +
                     shape_to_string(right.shape()) + " invalid for this config");
  }
  if (state.left_keys.cols() != d || state.left_keys.rows() > cfg.left_context ||
      state.conv.has_value() != cfg.use_conv) {
    throw StateError("layer state does not match the configuration");
  }

  const std::size_t block = state.blocks_done;
  const auto pc = project(attention_input(center, cfg, w), w.attn);
  const auto pr = project(attention_input(right, cfg, w), w.attn);

  BasicTensor<T> k = state.left_keys;
  BasicTensor<T> v = state.left_values;
  const IndexRange mem = memory_block_range(block, cfg.memory_slots, cfg.memory_offset);
  for (const auto& slot : state.memory) {
    if (mem.contains(slot.block)) {
      k.append_rows(slot.key);
      v.append_rows(slot.value);
    }
  }
  k.append_rows(pc.k);
  k.append_rows(pr.k);
  v.append_rows(pc.v);
  v.append_rows(pr.v);
  BasicTensor<T> q = pc.q;
  q.append_rows(pr.q);

  const auto* th = w.talking_heads ? &*w.talking_heads : nullptr;
  const auto att = matmul(
      attend_projected(q, k, v, cfg.num_heads, th, static_cast<const AttentionMask*>(nullptr)),
      w.attn.w_o);
  const std::size_t c = center.rows();
  const auto zc = add(att.slice_rows(0, c), center);
  const auto zr = add(att.slice_rows(c, c + right.rows()), right);

  LayerOutput<T> out;
  if (cfg.use_conv) {
    const auto conv = conv_block_streaming(norm(zc, *w.ln_conv_in),
                                           norm(zr, *w.ln_conv_in), *state.conv, *w.conv);
    out = {finish(conv.center, cfg, w), finish(conv.right, cfg, w)};
  } else {
    out = {finish(zc, cfg, w), finish(zr, cfg, w)};
  }

  state.left_keys.append_rows(pc.k);
  state.left_values.append_rows(pc.v);
  state.left_keys.keep_last_rows(cfg.left_context);
  state.left_values.keep_last_rows(cfg.left_context);
  if (cfg.memory_slots > 0) {
    const auto m = compress_block(center, *w.compress);
    state.memory.push_back({block, matmul(m, w.attn.w_k), matmul(m, w.attn.w_v)});
    while (state.memory.size() > cfg.memory_slots + cfg.memory_offset) {
      state.memory.pop_front();
    }
  }
  ++state.blocks_done;
  return out;
}

#define EMFORMER_INSTANTIATE(T)                                                \
  template struct LayerWeights<T>;                                             \
  template struct LayerState<T>;                                               \
  template BasicTensor<T> ffn_forward(const BasicTensor<T>&,                   \
                                      const FfnWeights<T>&);                   \
  template BasicTensor<T> macaron_ffn_half(                                    \
      const BasicTensor<T>&, const FfnWeights<T>&, const NormWeights<T>&);     \
  template BasicTensor<T> compress_block(const BasicTensor<T>&,                \
                                         const BasicTensor<T>&);               \
  template MemoryBank<T> memory_bank_select(std::span<const BasicTensor<T>>,   \
                                            std::size_t, std::size_t,          \
                                            std::size_t);                      \
  template LayerOutput<T> layer_forward_parallel(                              \
      const BasicTensor<T>&, const BasicTensor<T>&, const BlockPlan&,          \
      const ModelConfig&, const LayerWeights<T>&);                             \
  template LayerOutput<T> layer_forward_streaming(                             \
      const BasicTensor<T>&, const BasicTensor<T>&, LayerState<T>&,            \
      const ModelConfig&, const LayerWeights<T>&);

EMFORMER_INSTANTIATE(double)
EMFORMER_INSTANTIATE(float)

#undef EMFORMER_INSTANTIATE

}  // namespace emformer
