#include "emformer/weights.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <type_traits>

#include "emformer/errors.hpp"

namespace emformer {

namespace {

enum class Kind { kMatrix, kDepthwise, kGain, kBias, kMixing, kCompress };

template <typename W, typename F>
void visit_norm(W& n, const std::string& name, F&& fn) {
  fn(name + ".gain", n.gain, Kind::kGain);
  fn(name + ".bias", n.bias, Kind::kBias);
}

template <typename W, typename F>
void visit_ffn(W& f, const std::string& name, F&& fn) {
  visit_norm(f.norm, name + ".norm", fn);
  fn(name + ".lin_in", f.lin_in, Kind::kMatrix);
  fn(name + ".lin_out", f.lin_out, Kind::kMatrix);
}

// W is ModelWeights<T> or const ModelWeights<T>.
template <typename W, typename F>
void visit(W& w, F&& fn) {
  fn(std::string("input_proj"), w.input_proj, Kind::kMatrix);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    if (l.ffn1) visit_ffn(*l.ffn1, p + "ffn1", fn);
    visit_norm(l.ln_attn_in, p + "ln_attn_in", fn);
    fn(p + "attn.w_q", l.attn.w_q, Kind::kMatrix);
    fn(p + "attn.w_k", l.attn.w_k, Kind::kMatrix);
    fn(p + "attn.w_v", l.attn.w_v, Kind::kMatrix);
    fn(p + "attn.w_o", l.attn.w_o, Kind::kMatrix);
    if (l.talking_heads) {
      fn(p + "talking_heads.w_l", l.talking_heads->w_l, Kind::kMixing);
      fn(p + "talking_heads.w_r", l.talking_heads->w_r, Kind::kMixing);
    }
    if (l.conv) {
      visit_norm(*l.ln_conv_in, p + "ln_conv_in", fn);
      fn(p + "conv.pw1", l.conv->pw1, Kind::kMatrix);
      fn(p + "conv.dw", l.conv->dw, Kind::kDepthwise);
      fn(p + "conv.ln.gain", l.conv->ln_gain, Kind::kGain);
      fn(p + "conv.ln.bias", l.conv->ln_bias, Kind::kBias);
      fn(p + "conv.pw2", l.conv->pw2, Kind::kMatrix);
    }
    visit_ffn(l.ffn2, p + "ffn2", fn);
    visit_norm(l.ln_final, p + "ln_final", fn);
    if (l.compress) fn(p + "compress", *l.compress, Kind::kCompress);
  }
}

NormWeights<double> zero_norm(std::size_t d) {
  return {Tensor(Shape{d}), Tensor(Shape{d})};
}

FfnWeights<double> zero_ffn(const ModelConfig& cfg) {
  return {zero_norm(cfg.model_dim), Tensor::matrix(cfg.model_dim, cfg.ffn_dim),
          Tensor::matrix(cfg.ffn_dim, cfg.model_dim)};
}

// Uniform in [-1, 1) from the top 53 bits; independent of the standard
// library's distribution implementation.
double uniform_pm1(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
}

template <typename U>
BasicTensor<U> cast_tensor(const Tensor& t) {
  return t.template cast<U>();
}

template <typename U>
NormWeights<U> cast_norm(const NormWeights<double>& n) {
  return {cast_tensor<U>(n.gain), cast_tensor<U>(n.bias)};
}

template <typename U>
FfnWeights<U> cast_ffn(const FfnWeights<double>& f) {
  return {cast_norm<U>(f.norm), cast_tensor<U>(f.lin_in), cast_tensor<U>(f.lin_out)};
}

// Little-endian byte writer/reader.
class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("weight file truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'E', 'M', 'F', 'W', 'G', 'T', '\0', '\0'};

}  // namespace

template <typename T>
void ModelWeights<T>::validate(const ModelConfig& cfg) const {
  if (input_proj.shape() != Shape{cfg.superframe_dim(), cfg.model_dim}) {
    throw ShapeError("input_proj is " + shape_to_string(input_proj.shape()) +
                     ", expected " +
                     shape_to_string(Shape{cfg.superframe_dim(), cfg.model_dim}));
  }
  if (layers.size() != cfg.num_layers) {
    throw ConfigError("weights have " + std::to_string(layers.size()) +
                      " layers, config has " + std::to_string(cfg.num_layers));
  }
  for (const auto& l : layers) l.validate(cfg);
}

template <typename T>
void for_each_tensor(ModelWeights<T>& w,
                     const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
  visit(w, [&](const std::string& n, BasicTensor<T>& t, Kind) { fn(n, t); });
}

template <typename T>
void for_each_tensor(const ModelWeights<T>& w,
                     const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) {
  visit(w, [&](const std::string& n, const BasicTensor<T>& t, Kind) { fn(n, t); });
}

ModelWeights<double> skeleton_weights(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  ModelWeights<double> w;
  w.input_proj = Tensor::matrix(cfg.superframe_dim(), d);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    LayerWeights<double> l;
    if (cfg.use_macaron) l.ffn1 = zero_ffn(cfg);
    l.ln_attn_in = zero_norm(d);
    l.attn = {Tensor::matrix(d, d), Tensor::matrix(d, d), Tensor::matrix(d, d),
              Tensor::matrix(d, d), cfg.num_heads};
    if (cfg.use_talking_heads) {
      l.talking_heads = TalkingHeadsWeights<double>{
          Tensor::matrix(cfg.num_heads, cfg.num_heads),
          Tensor::matrix(cfg.num_heads, cfg.num_heads)};
    }
    if (cfg.use_conv) {
      l.ln_conv_in = zero_norm(d);
      l.conv = ConvWeights<double>{Tensor::matrix(d, 2 * d),
                                   Tensor::matrix(d, cfg.kernel_size),
                                   Tensor(Shape{d}), Tensor(Shape{d}),
                                   Tensor::matrix(d, d)};
    }
    l.ffn2 = zero_ffn(cfg);
    l.ln_final = zero_norm(d);
    if (cfg.memory_slots > 0) l.compress = Tensor(Shape{cfg.block_size});
    w.layers.push_back(std::move(l));
  }
  return w;
}

ModelWeights<double> generate_weights(const ModelConfig& cfg,
                                      const InitOptions& opts) {
  ModelWeights<double> w = skeleton_weights(cfg);
  std::mt19937_64 rng(opts.seed);
  visit(w, [&](const std::string&, Tensor& t, Kind kind) {
    switch (kind) {
      case Kind::kMatrix:
      case Kind::kDepthwise: {
        const std::size_t fan_in = kind == Kind::kMatrix ? t.shape()[0] : t.shape()[1];
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : t.data()) v = a * uniform_pm1(rng);
        break;
      }
      case Kind::kGain:
        for (double& v : t.data()) v = 1.0;
        break;
      case Kind::kBias:
        break;
      case Kind::kMixing: {
        const std::size_t h = t.shape()[0];
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < h; ++c) {
            const double noise = uniform_pm1(rng);
            t(r, c) = (r == c ? 1.0 : 0.0) + opts.talking_heads_noise * noise;
          }
        }
        break;
      }
      case Kind::kCompress:
        for (double& v : t.data()) v = 1.0 / static_cast<double>(t.numel());
        break;
    }
  });
  return w;
}

template <typename U>
ModelWeights<U> cast_weights(const ModelWeights<double>& w) {
  if constexpr (std::is_same_v<U, double>) {
    return w;
  } else {
    ModelWeights<U> out;
    out.input_proj = cast_tensor<U>(w.input_proj);
    for (const auto& l : w.layers) {
      LayerWeights<U> o;
      if (l.ffn1) o.ffn1 = cast_ffn<U>(*l.ffn1);
      o.ln_attn_in = cast_norm<U>(l.ln_attn_in);
      o.attn = {cast_tensor<U>(l.attn.w_q), cast_tensor<U>(l.attn.w_k),
                cast_tensor<U>(l.attn.w_v), cast_tensor<U>(l.attn.w_o),
                l.attn.num_heads};
      if (l.talking_heads) {
        o.talking_heads = TalkingHeadsWeights<U>{cast_tensor<U>(l.talking_heads->w_l),
                                                 cast_tensor<U>(l.talking_heads->w_r)};
      }
      if (l.ln_conv_in) o.ln_conv_in = cast_norm<U>(*l.ln_conv_in);
      if (l.conv) {
        o.conv = ConvWeights<U>{cast_tensor<U>(l.conv->pw1), cast_tensor<U>(l.conv->dw),
                                cast_tensor<U>(l.conv->ln_gain),
                                cast_tensor<U>(l.conv->ln_bias),
                                cast_tensor<U>(l.conv->pw2)};
      }
      o.ffn2 = cast_ffn<U>(l.ffn2);
      o.ln_final = cast_norm<U>(l.ln_final);
      if (l.compress) o.compress = cast_tensor<U>(*l.compress);
      out.layers.push_back(std::move(o));
    }
    return out;
  }
}

std::size_t tensor_count(const ModelWeights<double>& w) {
  std::size_t n = 0;
  visit(w, [&](const std::string&, const Tensor&, Kind) { ++n; });
  return n;
}

std::size_t parameter_count(const ModelWeights<double>& w) {
  std::size_t n = 0;
  visit(w, [&](const std::string&, const Tensor& t, Kind) { n += t.numel(); });
  return n;
}

std::vector<std::uint8_t> serialize_weights(const ModelConfig& cfg,
                                            const ModelWeights<double>& w) {
  w.validate(cfg);
  Writer out;
  out.raw(kMagic, sizeof(kMagic));
  out.u32(kWeightFormatVersion);
  out.str(serialize_config(cfg));
  out.u32(static_cast<std::uint32_t>(tensor_count(w)));
  visit(w, [&](const std::string& name, const Tensor& t, Kind) {
    out.str(name);
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) out.u64(e);
    for (double v : t.data()) out.f64(v);
  });
  return out.take();
}

LoadedWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("not a weight file (bad magic)");
  }
  if (const auto v = in.u32(); v != kWeightFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(v));
  }
  LoadedWeights result;
  try {
    result.config = parse_config(in.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("embedded config invalid: ") + e.what());
  }
  result.weights = skeleton_weights(result.config);
  const std::uint32_t count = in.u32();
  if (count != tensor_count(result.weights)) {
    throw FormatError("weight file has " + std::to_string(count) +
                      " tensors, config implies " +
                      std::to_string(tensor_count(result.weights)));
  }
  visit(result.weights, [&](const std::string& name, Tensor& t, Kind) {
    const std::string got = in.str();
    if (got != name) {
      throw FormatError("expected tensor '" + name + "', found '" + got + "'");
    }
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    if (shape != t.shape()) {
      throw FormatError("tensor '" + name + "' is " + shape_to_string(shape) +
                        ", expected " + shape_to_string(t.shape()));
    }
    for (double& v : t.data()) v = in.f64();
  });
  if (!in.done()) throw FormatError("trailing bytes after last tensor");
  return result;
}

void save_weights(const std::string& path, const ModelConfig& cfg,
                  const ModelWeights<double>& w) {
  const auto bytes = serialize_weights(cfg, w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path + "' failed");
}

LoadedWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

template struct ModelWeights<double>;
template struct ModelWeights<float>;
template void for_each_tensor(ModelWeights<double>&,
                              const std::function<void(const std::string&, Tensor&)>&);
template void for_each_tensor(const ModelWeights<double>&,
                              const std::function<void(const std::string&, const Tensor&)>&);
template ModelWeights<double> cast_weights<double>(const ModelWeights<double>&);
template ModelWeights<float> cast_weights<float>(const ModelWeights<double>&);

}  // namespace emformer
