#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <thread>

#include "emformer/encoder.hpp"
#include "emformer/errors.hpp"
#include "emformer/features.hpp"

namespace emformer::cli {

void RunReport::add(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}

void RunReport::add(std::string key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  add(std::move(key), std::string(buf));
}

void RunReport::add(std::string key, std::size_t value) {
  add(std::move(key), std::to_string(value));
}

const std::string* RunReport::find(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return &v;
  }
  return nullptr;
}

void RunReport::print(std::ostream& os) const {
  for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
}

double audio_seconds(std::size_t superframes, std::size_t stack_factor) {
  return static_cast<double>(superframes * stack_factor) * kFrameSeconds;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
BenchResult bench_typed(const ModelConfig& cfg, const ModelWeights<double>& w64,
                        const BenchOptions& opts) {
  const ModelWeights<T> weights = cast_weights<T>(w64);
  const auto num_frames = static_cast<std::size_t>(std::llround(opts.seconds / kFrameSeconds));
  const auto frames = random_frames<T>(num_frames, cfg.input_dim, opts.seed);

  BenchResult res;
  res.superframes = num_frames / cfg.stack_factor;
  res.audio_seconds = audio_seconds(res.superframes, cfg.stack_factor);
  res.first_emission_ms = cfg.first_emission_ms();

  const std::size_t block_frames = cfg.block_size * cfg.stack_factor;
  std::vector<double> block_seconds;
  auto run_stream = [&](std::vector<double>* blocks) {
    EncoderStream<T> stream(cfg, weights);
    for (std::size_t b = 0; b < frames.rows(); b += block_frames) {
      stream.push(frames.slice_rows(b, std::min(frames.rows(), b + block_frames)));
    }
    stream.flush();
    if (blocks) *blocks = stream.block_seconds();
  };

  std::vector<double> walls;
  for (std::size_t rep = 0; rep < std::max<std::size_t>(opts.repeat, 1); ++rep) {
    const auto start = std::chrono::steady_clock::now();
    if (opts.mode == BenchMode::kParallel) {
      encoder_forward_parallel(frames, cfg, weights);
    } else if (opts.streams <= 1) {
      run_stream(&block_seconds);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t s = 0; s < opts.streams; ++s) {
        threads.emplace_back([&, s] { run_stream(s == 0 ? &block_seconds : nullptr); });
      }
      for (auto& t : threads) t.join();
    }
    walls.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  res.wall_seconds = median(walls);
  const double streams =
      opts.mode == BenchMode::kStreaming ? static_cast<double>(std::max<std::size_t>(opts.streams, 1)) : 1.0;
  res.rtf = res.audio_seconds > 0 ? res.wall_seconds / (res.audio_seconds * streams) : 0.0;
  if (!block_seconds.empty()) {
    double sum = 0, mx = 0;
    for (double s : block_seconds) {
      sum += s;
      mx = std::max(mx, s);
    }
    res.block_latency_mean_ms = 1000.0 * sum / static_cast<double>(block_seconds.size());
    res.block_latency_max_ms = 1000.0 * mx;
  }
  return res;
}

// Shared --config/--preset/--weights/--seed handling.
struct ModelArgs {
  std::string config_path;
  std::string preset;
  std::string weights_path;
  std::string precision;
  std::uint64_t seed = 0;

  void attach(CLI::App* app, bool with_weights) {
    auto* c = app->add_option("--config", config_path, "model config file (key = value)");
    auto* p = app->add_option("--preset", preset, "named config: desk, full-32m, full-73m, full-73m-baseline");
    c->excludes(p);
    if (with_weights) app->add_option("--weights", weights_path, "weight file (generated from --seed if absent)");
    app->add_option("--seed", seed, "seed for weights and synthetic input");
    app->add_option("--precision", precision, "f32 or f64 (overrides config)");
  }

  // Resolves the config and weights; config/format problems throw.
  std::pair<ModelConfig, ModelWeights<double>> resolve() const {
    std::optional<ModelConfig> cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!preset.empty()) cfg = preset_config(preset);
    std::optional<LoadedWeights> loaded;
    if (!weights_path.empty()) {
      loaded = load_weights(weights_path);
      if (cfg) {
        // Precision is a runtime choice, not part of the weights.
        ModelConfig a = *cfg, b = loaded->config;
        a.precision = b.precision = Precision::kFloat64;
        if (!(a == b)) {
          throw ConfigError("config does not match the config stored in '" +
                            weights_path + "' (digest " + config_digest(loaded->config) + ")");
        }
      } else {
        cfg = loaded->config;
      }
    }
    if (!cfg) throw ConfigError("one of --config, --preset or --weights is required");
    if (const char* env = std::getenv(kPrecisionEnv); env && *env) {
      cfg->precision = parse_precision(env);
    }
    if (!precision.empty()) cfg->precision = parse_precision(precision);
    cfg->validate();
    ModelWeights<double> w = loaded ? std::move(loaded->weights)
                                    : generate_weights(*cfg, InitOptions{seed});
    return {*cfg, std::move(w)};
  }
};

struct InputArgs {
  std::string input_path;
  std::size_t random_frames = 0;

  void attach(CLI::App* app) {
    auto* i = app->add_option("--input", input_path, "feature file (binary or text)");
    auto* r = app->add_option("--random", random_frames, "synthesize this many 10 ms frames");
    i->excludes(r);
  }

  template <typename T>
  BasicTensor<T> load(const ModelConfig& cfg, std::uint64_t seed) const {
    if (!input_path.empty()) {
      const Tensor m = read_features(input_path);
      if (m.rows() > 0 && m.cols() != cfg.input_dim) {
        throw ConfigError("input has " + std::to_string(m.cols()) +
                          " features per frame, config input_dim is " +
                          std::to_string(cfg.input_dim));
      }
      return m.cast<T>();
    }
    if (random_frames == 0) throw ConfigError("one of --input or --random is required");
    return emformer::random_frames<T>(random_frames, cfg.input_dim, seed);
  }
};

void add_common(RunReport& rep, const std::string& command, const ModelConfig& cfg) {
  rep.add("command", command);
  rep.add("config_digest", config_digest(cfg));
  rep.add("precision", std::string(precision_name(cfg.precision)));
}

int cmd_gen_weights(const ModelArgs& model, const std::string& out_path, double th_noise,
                    std::ostream& out) {
  ModelConfig cfg;
  if (!model.config_path.empty()) cfg = load_config(model.config_path);
  else if (!model.preset.empty()) cfg = preset_config(model.preset);
  else throw ConfigError("one of --config or --preset is required");
  const auto w = generate_weights(cfg, InitOptions{model.seed, th_noise});
  save_weights(out_path, cfg, w);
  RunReport rep;
  add_common(rep, "gen-weights", cfg);
  rep.add("seed", std::to_string(model.seed));
  rep.add("tensors", tensor_count(w));
  rep.add("parameters", parameter_count(w));
  rep.add("out", out_path);
  rep.print(out);
  return kExitPass;
}

template <typename T>
int run_typed(const ModelConfig& cfg, const ModelWeights<double>& w64, const InputArgs& input,
              std::uint64_t seed, const std::string& mode, std::size_t chunk,
              const std::string& out_path, std::ostream& out) {
  const auto w = cast_weights<T>(w64);
  const auto frames = input.load<T>(cfg, seed);
  const auto start = std::chrono::steady_clock::now();
  const auto result = mode == "parallel" ? encoder_forward_parallel(frames, cfg, w)
                                         : encoder_forward_streaming(frames, cfg, w, chunk);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out_path.empty()) {
    write_features(out_path, result.template cast<double>(), format_for_path(out_path));
  }
  RunReport rep;
  add_common(rep, "run", cfg);
  rep.add("mode", mode);
  rep.add("input_frames", frames.rows());
  rep.add("emitted_frames", result.rows());
  rep.add("wall_clock_seconds", wall);
  rep.add("audio_seconds", audio_seconds(result.rows(), cfg.stack_factor));
  if (!out_path.empty()) rep.add("out", out_path);
  rep.print(out);
  return kExitPass;
}

template <typename T>
int check_typed(const ModelConfig& cfg, const ModelWeights<double>& w64, const InputArgs& input,
                std::uint64_t seed, double tolerance, bool corrupt, std::ostream& out) {
  const auto w = cast_weights<T>(w64);
  const auto frames = input.load<T>(cfg, seed);
  typename EncoderStream<T>::BlockHook hook;
  if (corrupt) {
    // Negative control: perturb the first conv history after block 0.
    hook = [](StreamingState<T>& s, std::size_t block) {
      if (block != 0) return;
      for (auto& layer : s.layers) {
        if (layer.conv && layer.conv->tail.numel() > 0) {
          layer.conv->tail[0] += T{1};
          return;
        }
      }
    };
  }
  const auto start = std::chrono::steady_clock::now();
  const auto eq = check_equivalence(frames, cfg, w, hook);
  const auto leak = leak_check(frames, cfg, w, seed + 1);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const bool eq_pass = eq.shapes_match && eq.max_abs_diff <= tolerance;
  const bool leak_pass = leak.max_abs_diff == 0.0;
  RunReport rep;
  add_common(rep, "check", cfg);
  rep.add("input_frames", frames.rows());
  rep.add("emitted_frames", eq.rows);
  rep.add("tolerance", tolerance);
  rep.add("max_abs_diff", eq.max_abs_diff);
  rep.add("argmax_row", eq.argmax_row);
  rep.add("argmax_col", eq.argmax_col);
  rep.add("equivalence", std::string(eq_pass ? "pass" : "fail"));
  rep.add("leak_blocks_checked", leak.blocks_checked);
  rep.add("leak_max_abs_diff", leak.max_abs_diff);
  rep.add("leak", std::string(leak_pass ? "pass" : "fail"));
  rep.add("wall_clock_seconds", wall);
  rep.add("status", std::string(eq_pass && leak_pass ? "pass" : "fail"));
  rep.print(out);
  return eq_pass && leak_pass ? kExitPass : kExitCheckFailed;
}

int cmd_bench(const ModelConfig& cfg, const ModelWeights<double>& w, const BenchOptions& opts,
              std::ostream& out) {
  const auto res = run_bench(cfg, w, opts);
  RunReport rep;
  add_common(rep, "bench", cfg);
  rep.add("mode", std::string(opts.mode == BenchMode::kParallel ? "parallel" : "streaming"));
  rep.add("rtf_scope", std::string("encoder_only"));
  rep.add("repeat", opts.repeat);
  rep.add("streams", opts.mode == BenchMode::kStreaming ? opts.streams : std::size_t{1});
  rep.add("superframes", res.superframes);
  rep.add("audio_seconds", res.audio_seconds);
  rep.add("wall_clock_seconds", res.wall_seconds);
  rep.add("rtf", res.rtf);
  if (opts.mode == BenchMode::kStreaming) {
    rep.add("block_latency_mean_ms", res.block_latency_mean_ms);
    rep.add("block_latency_max_ms", res.block_latency_max_ms);
    rep.add("first_emission_latency_ms", res.first_emission_ms);
  }
  rep.print(out);
  return kExitPass;
}

}  // namespace

BenchResult run_bench(const ModelConfig& cfg, const ModelWeights<double>& weights,
                      const BenchOptions& opts) {
  if (cfg.precision == Precision::kFloat32) return bench_typed<float>(cfg, weights, opts);
  return bench_typed<double>(cfg, weights, opts);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming Emformer encoder harness", "emformer-cli"};
  app.require_subcommand(1);

  ModelArgs gen_model;
  std::string gen_out;
  double th_noise = 0.01;
  auto* gen = app.add_subcommand("gen-weights", "generate seeded random weights");
  gen_model.attach(gen, false);
  gen->add_option("--out", gen_out, "output weight file")->required();
  gen->add_option("--th-noise", th_noise, "talking-heads init noise scale");

  ModelArgs run_model;
  InputArgs run_input;
  std::string run_mode = "parallel";
  std::string run_out;
  std::size_t run_chunk = 0;
  auto* run = app.add_subcommand("run", "encode features with one forward path");
  run_model.attach(run, true);
  run_input.attach(run);
  run->add_option("--mode", run_mode, "parallel or streaming")
      ->check(CLI::IsMember({"parallel", "streaming"}));
  run->add_option("--output", run_out, "output file (.txt/.csv for text)");
  run->add_option("--chunk", run_chunk, "streaming push size in frames (0 = all at once)");

  ModelArgs check_model;
  InputArgs check_input;
  double tolerance = 1e-9;
  bool corrupt = false;
  auto* check = app.add_subcommand("check", "parallel/streaming equivalence and leak test");
  check_model.attach(check, true);
  check_input.attach(check);
  check->add_option("--tolerance", tolerance, "max allowed |parallel - streaming|");
  check->add_flag("--corrupt-conv-state", corrupt, "negative control: perturb conv history");

  ModelArgs bench_model;
  BenchOptions bench_opts;
  std::string bench_mode = "streaming";
  auto* bench = app.add_subcommand("bench", "encoder real-time-factor benchmark");
  bench_model.attach(bench, true);
  bench->add_option("--seconds", bench_opts.seconds, "synthetic audio length");
  bench->add_option("--mode", bench_mode, "parallel or streaming")
      ->check(CLI::IsMember({"parallel", "streaming"}));
  bench->add_option("--repeat", bench_opts.repeat, "timed repeats (median reported)");
  bench->add_option("--streams", bench_opts.streams, "concurrent streams (streaming mode)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitPass;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitPass;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_weights(gen_model, gen_out, th_noise, out);
    if (run->parsed()) {
      const auto [cfg, w] = run_model.resolve();
      if (cfg.precision == Precision::kFloat32) {
        return run_typed<float>(cfg, w, run_input, run_model.seed, run_mode, run_chunk, run_out, out);
      }
      return run_typed<double>(cfg, w, run_input, run_model.seed, run_mode, run_chunk, run_out, out);
    }
    if (check->parsed()) {
      const auto [cfg, w] = check_model.resolve();
      if (cfg.precision == Precision::kFloat32) {
        return check_typed<float>(cfg, w, check_input, check_model.seed, tolerance, corrupt, out);
      }
      return check_typed<double>(cfg, w, check_input, check_model.seed, tolerance, corrupt, out);
    }
    if (bench->parsed()) {
      const auto [cfg, w] = bench_model.resolve();
      bench_opts.mode = bench_mode == "parallel" ? BenchMode::kParallel : BenchMode::kStreaming;
      bench_opts.seed = bench_model.seed;
      return cmd_bench(cfg, w, bench_opts, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace emformer::cli
