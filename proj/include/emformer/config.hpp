#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace emformer {

enum class Precision { kFloat64, kFloat32 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view name);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kFrameSeconds = 0.01;  // one input feature frame

// Full encoder geometry. Sizes in superframes unless noted.
struct ModelConfig {
  std::size_t input_dim = 4;     // features per 10 ms frame
  std::size_t stack_factor = 2;  // frames per superframe
  std::size_t model_dim = 16;
  std::size_t ffn_dim = 32;
  std::size_t num_layers = 3;
  std::size_t num_heads = 4;
  std::size_t block_size = 4;
  std::size_t lookahead = 1;
  std::size_t left_context = 8;
  std::size_t memory_slots = 2;
  std::size_t memory_offset = 2;
  std::size_t kernel_size = 3;
  bool use_conv = true;
  bool use_macaron = true;
  bool use_talking_heads = true;
  Precision precision = Precision::kFloat64;

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  std::size_t superframe_dim() const { return input_dim * stack_factor; }
  bool causal() const { return lookahead == 0; }
  // Audio needed before the first block can be emitted.
  double first_emission_ms() const {
    return static_cast<double>((block_size + lookahead) * stack_factor) *
           kFrameSeconds * 1000.0;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Flat "key = value" document, one field per line, '#' starts a comment.
// Unknown keys and malformed values throw ConfigError.
ModelConfig parse_config(std::string_view text);
ModelConfig load_config(const std::string& path);
std::string serialize_config(const ModelConfig& cfg);

// Stable FNV-1a digest of the canonical serialization, as 16 hex digits.
std::string config_digest(const ModelConfig& cfg);

// Named geometries: "desk", "full-32m", "full-73m", "full-73m-baseline".
ModelConfig preset_config(std::string_view name);

}  // namespace emformer
