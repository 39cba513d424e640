#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emformer/config.hpp"
#include "emformer/layer.hpp"
#include "emformer/tensor.hpp"

namespace emformer {

template <typename T>
struct ModelWeights {
  BasicTensor<T> input_proj;  // superframe_dim x d
  std::vector<LayerWeights<T>> layers;

  void validate(const ModelConfig& cfg) const;
};

// Visits every tensor with a stable dotted name, in serialization order.
template <typename T>
void for_each_tensor(ModelWeights<T>& w,
                     const std::function<void(const std::string&, BasicTensor<T>&)>& fn);
template <typename T>
void for_each_tensor(const ModelWeights<T>& w,
                     const std::function<void(const std::string&, const BasicTensor<T>&)>& fn);

// Zero-filled weights with every tensor shaped for cfg.
ModelWeights<double> skeleton_weights(const ModelConfig& cfg);

struct InitOptions {
  std::uint64_t seed = 0;
  double talking_heads_noise = 0.01;  // w_l, w_r = I + noise * U(-1, 1)
};

// Matrices uniform in (-a, a) with a = 1/sqrt(fan_in); norms gain 1 bias 0;
// compression weights uniform 1/block_size.
ModelWeights<double> generate_weights(const ModelConfig& cfg,
                                      const InitOptions& opts);

template <typename U>
ModelWeights<U> cast_weights(const ModelWeights<double>& w);

std::size_t tensor_count(const ModelWeights<double>& w);
std::size_t parameter_count(const ModelWeights<double>& w);

// Binary layout (all integers little-endian):
//   "EMFWGT\0\0" | u32 version | u32 len + config text | u32 tensor count |
//   per tensor: u32 len + name, u32 rank, u64 extents[rank], f64 data[].
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> serialize_weights(const ModelConfig& cfg,
                                            const ModelWeights<double>& w);
struct LoadedWeights {
  ModelConfig config;
  ModelWeights<double> weights;
};
LoadedWeights deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::string& path, const ModelConfig& cfg,
                  const ModelWeights<double>& w);
LoadedWeights load_weights(const std::string& path);

}  // namespace emformer
