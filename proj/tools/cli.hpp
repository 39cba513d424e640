#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "emformer/config.hpp"
#include "emformer/weights.hpp"

namespace emformer::cli {

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// Environment variable that overrides the configured precision (f32|f64).
inline constexpr const char* kPrecisionEnv = "EMFORMER_PRECISION";

// Ordered key=value report; one line per entry.
class RunReport {
 public:
  void add(std::string key, std::string value);
  void add(std::string key, double value);
  void add(std::string key, std::size_t value);
  const std::string* find(const std::string& key) const;
  void print(std::ostream& os) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

enum class BenchMode { kParallel, kStreaming };

struct BenchOptions {
  double seconds = 10.0;
  BenchMode mode = BenchMode::kStreaming;
  std::size_t repeat = 5;
  std::size_t streams = 1;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::size_t superframes = 0;
  double audio_seconds = 0.0;
  double wall_seconds = 0.0;  // median over repeats
  double rtf = 0.0;           // wall_seconds / audio_seconds, encoder only
  double block_latency_mean_ms = 0.0;
  double block_latency_max_ms = 0.0;
  double first_emission_ms = 0.0;
};

// Audio duration covered by n superframes.
double audio_seconds(std::size_t superframes, std::size_t stack_factor);

// Times the encoder on synthetic features. Weights are cast to the
// configured precision.
BenchResult run_bench(const ModelConfig& cfg, const ModelWeights<double>& weights,
                      const BenchOptions& opts);

// Entry point shared by the executable and the tests; args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace emformer::cli
