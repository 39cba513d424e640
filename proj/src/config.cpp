#include "emformer/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "emformer/errors.hpp"

namespace emformer {

std::string_view precision_name(Precision p) {
  return p == Precision::kFloat32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view name) {
  if (name == "f64" || name == "64") return Precision::kFloat64;
  if (name == "f32" || name == "32") return Precision::kFloat32;
  throw ConfigError("precision: expected f32 or f64, got '" +
                    std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(input_dim, "input_dim");
  positive(stack_factor, "stack_factor");
  positive(model_dim, "model_dim");
  positive(ffn_dim, "ffn_dim");
  positive(num_heads, "num_heads");
  positive(block_size, "block_size");
  if (model_dim % num_heads != 0) {
    throw ConfigError("model_dim (" + std::to_string(model_dim) +
                      ") must be divisible by num_heads (" +
                      std::to_string(num_heads) + ")");
  }
  if (use_conv) positive(kernel_size, "kernel_size");
}

namespace {

struct Field {
  std::function<void(ModelConfig&, std::string_view)> set;
  std::function<std::string(const ModelConfig&)> get;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) +
                      ": expected a nonnegative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" +
                    std::string(v) + "'");
}

#define SIZE_FIELD(name)                                                    \
  {                                                                         \
    #name, Field {                                                          \
      [](ModelConfig& c, std::string_view v) { c.name = parse_size(#name, v); }, \
          [](const ModelConfig& c) { return std::to_string(c.name); }       \
    }                                                                       \
  }
#define BOOL_FIELD(name)                                                    \
  {                                                                         \
    #name, Field {                                                          \
      [](ModelConfig& c, std::string_view v) { c.name = parse_bool(#name, v); }, \
          [](const ModelConfig& c) { return std::string(c.name ? "true" : "false"); } \
    }                                                                       \
  }

// Ordered: this is also the canonical serialization order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> kFields = {
      SIZE_FIELD(input_dim),
      SIZE_FIELD(stack_factor),
      SIZE_FIELD(model_dim),
      SIZE_FIELD(ffn_dim),
      SIZE_FIELD(num_layers),
      SIZE_FIELD(num_heads),
      SIZE_FIELD(block_size),
      SIZE_FIELD(lookahead),
      SIZE_FIELD(left_context),
      SIZE_FIELD(memory_slots),
      SIZE_FIELD(memory_offset),
      SIZE_FIELD(kernel_size),
      BOOL_FIELD(use_conv),
      BOOL_FIELD(use_macaron),
      BOOL_FIELD(use_talking_heads),
      {"precision",
       Field{[](ModelConfig& c, std::string_view v) {
               c.precision = parse_precision(v);
             },
             [](const ModelConfig& c) {
               return std::string(precision_name(c.precision));
             }}},
  };
  return kFields;
}

#undef SIZE_FIELD
#undef BOOL_FIELD

}  // namespace

ModelConfig parse_config(std::string_view text) {
  ModelConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& fs = fields();
    auto it = std::find_if(fs.begin(), fs.end(),
                           [&](const auto& f) { return f.first == key; });
    if (it == fs.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(key) + "'");
    }
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" +
                        std::string(key) + "'");
    }
    it->second.set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ModelConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : fields()) {
    out += name + " = " + field.get(cfg) + "\n";
  }
  return out;
}

std::string config_digest(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig preset_config(std::string_view name) {
  ModelConfig c;  // defaults are the desk-scale geometry
  if (name == "desk") return c;

  // 80-dim features stacked 8 at a time: 640-dim superframes at 80 ms.
  c.input_dim = 80;
  c.stack_factor = 8;
  c.block_size = 4;
  c.lookahead = 1;
  c.kernel_size = 7;
  if (name == "full-32m") {
    c.model_dim = 256;
    c.ffn_dim = 1024;
    c.num_layers = 18;
    c.num_heads = 4;
    c.left_context = 8;
    c.memory_slots = 2;
    c.memory_offset = 2;
    return c;
  }
  if (name == "full-73m") {
    c.model_dim = 384;
    c.ffn_dim = 1456;
    c.num_layers = 20;
    c.num_heads = 8;
    c.left_context = 8;
    c.memory_slots = 2;
    c.memory_offset = 2;
    return c;
  }
  if (name == "full-73m-baseline") {
    c.model_dim = 512;
    c.ffn_dim = 2048;
    c.num_layers = 20;
    c.num_heads = 8;
    c.left_context = 30;
    c.memory_slots = 0;
    c.memory_offset = 0;
    c.use_conv = false;
    c.use_macaron = false;
    c.use_talking_heads = false;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

}  // namespace emformer
