#pragma once

#include <cstddef>
#include <span>

#include "emformer/block_plan.hpp"
#include "emformer/tensor.hpp"

namespace emformer {

// Convolution block: pw1 -> GLU -> depthwise -> layer norm -> swish -> pw2,
// with the block input added back to the result.
template <typename T>
struct ConvWeights {
  BasicTensor<T> pw1;  // d x 2d
  BasicTensor<T> dw;   // d x k, tap k-1 multiplies the current frame
  BasicTensor<T> ln_gain, ln_bias;
  BasicTensor<T> pw2;  // d x d

  std::size_t model_dim() const { return pw2.shape()[0]; }
  std::size_t kernel_size() const { return dw.shape()[1]; }
  void validate(std::size_t d) const;
};

// Depthwise history carried across blocks: the last k-1 post-GLU center
// frames, zeros at utterance start.
template <typename T>
struct ConvState {
  BasicTensor<T> tail;

  static ConvState initial(std::size_t kernel_size, std::size_t dim) {
    return {BasicTensor<T>::matrix(kernel_size - 1, dim)};
  }
};

template <typename T>
struct ConvOutput {
  BasicTensor<T> center;
  BasicTensor<T> right;
};

// Valid depthwise convolution: seq holds k-1 history rows followed by the
// frames to convolve; returns seq.rows() - (k-1) rows.
template <typename T>
BasicTensor<T> depthwise_conv_valid(const BasicTensor<T>& seq,
                                    const BasicTensor<T>& dw);

// Depthwise convolution of one block using and advancing the carried tail.
template <typename T>
BasicTensor<T> depthwise_conv_step(const BasicTensor<T>& block,
                                   BasicTensor<T>& tail,
                                   const BasicTensor<T>& dw);

// The k-1 post-GLU center frames that end at block_end, zero rows where
// they would precede the utterance. These pad a block's lookahead branch.
template <typename T>
BasicTensor<T> lookahead_padding(const BasicTensor<T>& post_glu_center,
                                 std::size_t block_end,
                                 std::size_t kernel_size);

// Whole-utterance form. right holds every block's lookahead copy; the
// bounds give each block's rows in center and in right.
template <typename T>
ConvOutput<T> conv_block_parallel(const BasicTensor<T>& center,
                                  const BasicTensor<T>& right,
                                  std::span<const IndexRange> center_bounds,
                                  std::span<const IndexRange> right_bounds,
                                  const ConvWeights<T>& w);

// One block; state.tail supplies the depthwise history and is advanced.
template <typename T>
ConvOutput<T> conv_block_streaming(const BasicTensor<T>& center,
                                   const BasicTensor<T>& right,
                                   ConvState<T>& state,
                                   const ConvWeights<T>& w);

// Zero-lookahead configuration.
template <typename T>
BasicTensor<T> conv_block_causal(const BasicTensor<T>& center,
                                 ConvState<T>& state, const ConvWeights<T>& w);

}  // namespace emformer
