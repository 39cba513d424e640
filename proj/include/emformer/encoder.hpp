#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "emformer/block_plan.hpp"
#include "emformer/config.hpp"
#include "emformer/layer.hpp"
#include "emformer/tensor.hpp"
#include "emformer/weights.hpp"

namespace emformer {

// Concatenates non-overlapping groups of `factor` frames along features.
// Trailing frames that do not fill a group are dropped.
template <typename T>
BasicTensor<T> superframe_stack(const BasicTensor<T>& frames, std::size_t factor);

// Whole-utterance encoder: frames [T x input_dim] -> center outputs
// [floor(T / stack_factor) x model_dim].
template <typename T>
BasicTensor<T> encoder_forward_parallel(const BasicTensor<T>& frames,
                                        const ModelConfig& cfg,
                                        const ModelWeights<T>& weights);

template <typename T>
struct StreamingState {
  std::vector<LayerState<T>> layers;
  BasicTensor<T> raw_remainder;  // < stack_factor raw frames
  BasicTensor<T> pending;        // projected superframes not yet emitted
  std::size_t blocks_emitted = 0;
  std::size_t rows_emitted = 0;
  bool flushed = false;
};

// Incremental encoder for one audio stream. The weights must outlive the
// stream; several streams may share one set of weights across threads.
template <typename T>
class EncoderStream {
 public:
  // Called after each emitted block with the state and the block index.
  using BlockHook = std::function<void(StreamingState<T>&, std::size_t)>;

  EncoderStream(const ModelConfig& cfg, const ModelWeights<T>& weights);

  // Accepts any number of frames; returns the center outputs of every block
  // whose center and lookahead superframes are now complete (possibly none).
  BasicTensor<T> push(const BasicTensor<T>& frames);

  // Processes the remaining superframes with clipped lookahead. Further
  // pushes throw StateError.
  BasicTensor<T> flush();

  const StreamingState<T>& state() const { return state_; }
  StreamingState<T>& mutable_state() { return state_; }
  void set_block_hook(BlockHook hook) { hook_ = std::move(hook); }

  // Wall-clock seconds spent in each emitted block's layer stack.
  const std::vector<double>& block_seconds() const { return block_seconds_; }

 private:
  BasicTensor<T> drain(bool final);
  BasicTensor<T> run_block(std::size_t center_rows, std::size_t right_rows);

  ModelConfig cfg_;
  const ModelWeights<T>* weights_;
  StreamingState<T> state_;
  BlockHook hook_;
  std::vector<double> block_seconds_;
};

struct EquivalenceReport {
  double max_abs_diff = 0.0;
  std::size_t argmax_row = 0;
  std::size_t argmax_col = 0;
  std::size_t rows = 0;
  bool shapes_match = true;
};

template <typename T>
EquivalenceReport compare_outputs(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Runs both forward paths on the same frames and reports max |parallel -
// streaming|. The hook, when set, is installed on the streaming session.
template <typename T>
EquivalenceReport check_equivalence(
    const BasicTensor<T>& frames, const ModelConfig& cfg,
    const ModelWeights<T>& weights,
    typename EncoderStream<T>::BlockHook hook = {});

template <typename T>
BasicTensor<T> encoder_forward_streaming(const BasicTensor<T>& frames,
                                         const ModelConfig& cfg,
                                         const ModelWeights<T>& weights,
                                         std::size_t chunk_frames = 0);

struct LeakReport {
  double max_abs_diff = 0.0;  // over every checked block, both paths
  std::size_t blocks_checked = 0;
  std::size_t worst_block = 0;
};

// For each block i, perturbs every raw frame belonging to superframes past
// block i's lookahead and measures the change in block i's outputs.
template <typename T>
LeakReport leak_check(const BasicTensor<T>& frames, const ModelConfig& cfg,
                      const ModelWeights<T>& weights, std::uint64_t seed);

// Frames drawn uniformly from [-1, 1), deterministic in seed.
template <typename T>
BasicTensor<T> random_frames(std::size_t num_frames, std::size_t input_dim,
                             std::uint64_t seed);

}  // namespace emformer
