#include "emformer/conv.hpp"

#include <string>

#include "emformer/config.hpp"
#include "emformer/errors.hpp"
#include "emformer/numerics.hpp"

namespace emformer {

template <typename T>
void ConvWeights<T>::validate(std::size_t d) const {
  if (pw1.shape() != Shape{d, 2 * d} || pw2.shape() != Shape{d, d} ||
      dw.rank() != 2 || dw.shape()[0] != d || dw.shape()[1] == 0 ||
      ln_gain.numel() != d || ln_bias.numel() != d) {
    throw ShapeError("conv weights inconsistent with model dim " +
                     std::to_string(d) + ": pw1 " + shape_to_string(pw1.shape()) +
                     ", dw " + shape_to_string(dw.shape()) + ", pw2 " +
                     shape_to_string(pw2.shape()));
  }
}

template <typename T>
BasicTensor<T> depthwise_conv_valid(const BasicTensor<T>& seq,
                                    const BasicTensor<T>& dw) {
  const std::size_t d = dw.shape()[0];
  const std::size_t k = dw.shape()[1];
  if (seq.cols() != d || seq.rows() + 1 < k) {
    throw ShapeError("depthwise conv: sequence " + shape_to_string(seq.shape()) +
                     " incompatible with kernel " + shape_to_string(dw.shape()));
  }
  const std::size_t n = seq.rows() - (k - 1);
  BasicTensor<T> out = BasicTensor<T>::matrix(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t ch = 0; ch < d; ++ch) {
      T acc = 0;
      for (std::size_t j = 0; j < k; ++j) acc += dw(ch, j) * seq(t + j, ch);
      out(t, ch) = acc;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> depthwise_conv_step(const BasicTensor<T>& block,
                                   BasicTensor<T>& tail,
                                   const BasicTensor<T>& dw) {
  const std::size_t k = dw.shape()[1];
  if (tail.rank() != 2 || tail.rows() != k - 1 || tail.cols() != block.cols()) {
    throw ShapeError("conv state tail is " + shape_to_string(tail.shape()) +
                     ", expected " + std::to_string(k - 1) + " rows of width " +
                     std::to_string(block.cols()));
  }
  BasicTensor<T> seq = tail;
  seq.append_rows(block);
  BasicTensor<T> out = depthwise_conv_valid(seq, dw);
  seq.keep_last_rows(k - 1);
  tail = std::move(seq);
  return out;
}

template <typename T>
BasicTensor<T> lookahead_padding(const BasicTensor<T>& post_glu_center,
                                 std::size_t block_end,
                                 std::size_t kernel_size) {
  const std::size_t d = post_glu_center.cols();
  const std::size_t pad = kernel_size - 1;
  BasicTensor<T> out = BasicTensor<T>::matrix(pad, d);
  for (std::size_t p = 0; p < pad; ++p) {
    // Row p holds center frame block_end - pad + p.
    if (block_end + p < pad) continue;
    const std::size_t src = block_end + p - pad;
    auto in = post_glu_center.row(src);
    std::copy(in.begin(), in.end(), out.row(p).begin());
  }
  return out;
}

namespace {

template <typename T>
BasicTensor<T> pre_depthwise(const BasicTensor<T>& x, const ConvWeights<T>& w) {
  return glu_lastaxis(matmul(x, w.pw1));
}

template <typename T>
BasicTensor<T> post_depthwise(const BasicTensor<T>& input,
                              const BasicTensor<T>& depthwise,
                              const ConvWeights<T>& w) {
  auto y = layer_norm(depthwise, w.ln_gain, w.ln_bias,
                      static_cast<T>(kLayerNormEps));
  return add(input, matmul(swish(y), w.pw2));
}

template <typename T>
BasicTensor<T> right_branch(const BasicTensor<T>& right_glu,
                            BasicTensor<T> padding, const BasicTensor<T>& dw) {
  padding.append_rows(right_glu);
  return depthwise_conv_valid(padding, dw);
}

}  // namespace

template <typename T>
ConvOutput<T> conv_block_parallel(const BasicTensor<T>& center,
                                  const BasicTensor<T>& right,
                                  std::span<const IndexRange> center_bounds,
                                  std::span<const IndexRange> right_bounds,
                                  const ConvWeights<T>& w) {
  const std::size_t d = w.model_dim();
  w.validate(d);
  if (center.cols() != d || right.cols() != d) {
    throw ShapeError("conv block: input width differs from model dim");
  }
  if (center_bounds.size() != right_bounds.size()) {
    throw ShapeError("conv block: center and right bounds differ in count");
  }
  std::size_t expect_c = 0, expect_r = 0;
  for (std::size_t i = 0; i < center_bounds.size(); ++i) {
    if (center_bounds[i].begin != expect_c ||
        center_bounds[i].end < center_bounds[i].begin ||
        right_bounds[i].begin != expect_r ||
        right_bounds[i].end < right_bounds[i].begin) {
      throw ShapeError("conv block: block bounds do not partition the input");
    }
    expect_c = center_bounds[i].end;
    expect_r = right_bounds[i].end;
  }
  if (expect_c != center.rows() || expect_r != right.rows()) {
    throw ShapeError("conv block: block bounds do not cover the input");
  }

  const std::size_t k = w.kernel_size();
  const auto center_glu = pre_depthwise(center, w);
  const auto right_glu = pre_depthwise(right, w);

  BasicTensor<T> seq = BasicTensor<T>::matrix(k - 1, d);
  seq.append_rows(center_glu);
  ConvOutput<T> out;
  out.center = post_depthwise(center, depthwise_conv_valid(seq, w.dw), w);

  BasicTensor<T> right_dw = BasicTensor<T>::matrix(0, d);
  for (std::size_t i = 0; i < center_bounds.size(); ++i) {
    const auto& rb = right_bounds[i];
    right_dw.append_rows(right_branch(
        right_glu.slice_rows(rb.begin, rb.end),
        lookahead_padding(center_glu, center_bounds[i].end, k), w.dw));
  }
  out.right = post_depthwise(right, right_dw, w);
  return out;
}

template <typename T>
ConvOutput<T> conv_block_streaming(const BasicTensor<T>& center,
                                   const BasicTensor<T>& right,
                                   ConvState<T>& state,
                                   const ConvWeights<T>& w) {
  const std::size_t d = w.model_dim();
  w.validate(d);
  if (center.cols() != d || right.cols() != d) {
    throw ShapeError("conv block: input width differs from model dim");
  }
  ConvOutput<T> out;
  const auto center_dw = depthwise_conv_step(pre_depthwise(center, w), state.tail, w.dw);
  out.center = post_depthwise(center, center_dw, w);
  // The advanced tail is exactly the lookahead padding for this block.
  out.right = post_depthwise(
      right, right_branch(pre_depthwise(right, w), state.tail, w.dw), w);
  return out;
}

template <typename T>
BasicTensor<T> conv_block_causal(const BasicTensor<T>& center,
                                 ConvState<T>& state, const ConvWeights<T>& w) {
  return conv_block_streaming(center, BasicTensor<T>::matrix(0, center.cols()),
                              state, w)
      .center;
}

#define EMFORMER_INSTANTIATE(T)                                                \
  template struct ConvWeights<T>;                                              \
  template BasicTensor<T> depthwise_conv_valid(const BasicTensor<T>&,          \
                                               const BasicTensor<T>&);         \
  template BasicTensor<T> depthwise_conv_step(                                 \
      const BasicTensor<T>&, BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> lookahead_padding(const BasicTensor<T>&,             \
                                            std::size_t, std::size_t);         \
  template ConvOutput<T> conv_block_parallel(                                  \
      const BasicTensor<T>&, const BasicTensor<T>&,                            \
      std::span<const IndexRange>, std::span<const IndexRange>,                \
      const ConvWeights<T>&);                                                  \
  template ConvOutput<T> conv_block_streaming(                                 \
      const BasicTensor<T>&, const BasicTensor<T>&, ConvState<T>&,             \
      const ConvWeights<T>&);                                                  \
  template BasicTensor<T> conv_block_causal(                                   \
      const BasicTensor<T>&, ConvState<T>&, const ConvWeights<T>&);

EMFORMER_INSTANTIATE(double)
EMFORMER_INSTANTIATE(float)

#undef EMFORMER_INSTANTIATE

}  // namespace emformer
