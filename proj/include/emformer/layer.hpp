#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "emformer/attention.hpp"
#include "emformer/block_plan.hpp"
#include "emformer/config.hpp"
#include "emformer/conv.hpp"
#include "emformer/tensor.hpp"

namespace emformer {

template <typename T>
struct NormWeights {
  BasicTensor<T> gain, bias;
};

// Pre-normed two-layer ReLU feed-forward network.
template <typename T>
struct FfnWeights {
  NormWeights<T> norm;
  BasicTensor<T> lin_in;   // d x ffn
  BasicTensor<T> lin_out;  // ffn x d
};

template <typename T>
struct LayerWeights {
  std::optional<FfnWeights<T>> ffn1;  // macaron only
  NormWeights<T> ln_attn_in;
  MhaWeights<T> attn;
  std::optional<TalkingHeadsWeights<T>> talking_heads;
  std::optional<NormWeights<T>> ln_conv_in;
  std::optional<ConvWeights<T>> conv;
  FfnWeights<T> ffn2;
  NormWeights<T> ln_final;
  std::optional<BasicTensor<T>> compress;  // block_size weights

  // Throws ShapeError/ConfigError when shapes or optional parts disagree
  // with the configuration flags.
  void validate(const ModelConfig& cfg) const;
};

// Compressed memory vectors visible to one block, oldest first.
template <typename T>
struct MemoryBank {
  std::vector<BasicTensor<T>> slots;
  std::vector<std::size_t> source_blocks;
};

template <typename T>
BasicTensor<T> ffn_forward(const BasicTensor<T>& x, const FfnWeights<T>& w);

// LayerNorm(x + FFN(x) / 2) with ln as the outer norm.
template <typename T>
BasicTensor<T> macaron_ffn_half(const BasicTensor<T>& x, const FfnWeights<T>& w,
                                const NormWeights<T>& ln);

// Weighted sum of the rows of a center block. A block shorter than the
// weight vector uses the leading weights renormalized to their sum.
template <typename T>
BasicTensor<T> compress_block(const BasicTensor<T>& center_in,
                              const BasicTensor<T>& weights);

template <typename T>
MemoryBank<T> memory_bank_select(std::span<const BasicTensor<T>> all_slots,
                                 std::size_t block, std::size_t slots,
                                 std::size_t offset);

template <typename T>
struct LayerOutput {
  BasicTensor<T> center;
  BasicTensor<T> right;
};

// Whole utterance in one pass. center is every center frame in order; right
// is the concatenation of each block's lookahead copy (rows per
// plan.right_rows). All blocks attend through a single masked attention
// laid out as [lookahead copies ; centers] queries against
// [memory ; lookahead copies ; centers] keys.
template <typename T>
LayerOutput<T> layer_forward_parallel(const BasicTensor<T>& center,
                                      const BasicTensor<T>& right,
                                      const BlockPlan& plan,
                                      const ModelConfig& cfg,
                                      const LayerWeights<T>& w);

// Per-layer carried state for streaming.
template <typename T>
struct LayerState {
  BasicTensor<T> left_keys;    // <= left_context rows, projected
  BasicTensor<T> left_values;
  std::optional<ConvState<T>> conv;
  struct Slot {
    std::size_t block;
    BasicTensor<T> key;    // 1 x d
    BasicTensor<T> value;  // 1 x d
  };
  std::deque<Slot> memory;  // <= memory_slots + memory_offset entries
  std::size_t blocks_done = 0;

  static LayerState initial(const ModelConfig& cfg);
};

// One block; keys are [left-context cache ; memory ; center ; lookahead].
template <typename T>
LayerOutput<T> layer_forward_streaming(const BasicTensor<T>& center,
                                       const BasicTensor<T>& right,
                                       LayerState<T>& state,
                                       const ModelConfig& cfg,
                                       const LayerWeights<T>& w);

}  // namespace emformer
