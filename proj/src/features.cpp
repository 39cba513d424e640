#include "emformer/features.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "emformer/errors.hpp"

namespace emformer {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'F', 'F', 'E', 'A', 'T', '\0'};

std::uint64_t read_le(const std::vector<char>& b, std::size_t pos, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= std::uint64_t{static_cast<unsigned char>(b[pos + i])} << (8 * i);
  }
  return v;
}

void write_le(std::string& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Tensor parse_feature_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> data;
  std::size_t cols = 0, rows = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (char& ch : line) {
      if (ch == ',' || ch == '\t' || ch == ';') ch = ' ';
    }
    std::istringstream fields(line);
    std::size_t n = 0;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        data.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
      ++n;
    }
    if (n == 0) continue;
    if (rows == 0) cols = n;
    if (n != cols) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(cols) + " values, got " + std::to_string(n));
    }
    ++rows;
  }
  return Tensor(Shape{rows, cols}, std::move(data));
}

std::string format_feature_text(const Tensor& m) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (c) out.push_back(' ');
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

Tensor read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) ||
      !std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin())) {
    return parse_feature_text(std::string(bytes.begin(), bytes.end()));
  }
  constexpr std::size_t kHeader = sizeof(kMagic) + 4 + 8 + 8;
  if (bytes.size() < kHeader) throw FormatError("feature file header truncated");
  const auto bits = read_le(bytes, 8, 4);
  const auto rows = read_le(bytes, 12, 8);
  const auto cols = read_le(bytes, 20, 8);
  if (bits != 32 && bits != 64) {
    throw FormatError("feature file: unsupported width " + std::to_string(bits));
  }
  const std::size_t width = bits / 8;
  if (cols != 0 && rows > (bytes.size() - kHeader) / width / cols) {
    throw FormatError("feature file: payload shorter than header claims");
  }
  if (bytes.size() != kHeader + rows * cols * width) {
    throw FormatError("feature file: payload size mismatch");
  }
  Tensor m = Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::size_t pos = kHeader + i * width;
    m[i] = bits == 64 ? std::bit_cast<double>(read_le(bytes, pos, 8))
                      : static_cast<double>(std::bit_cast<float>(
                            static_cast<std::uint32_t>(read_le(bytes, pos, 4))));
  }
  return m;
}

void write_features(const std::string& path, const Tensor& m, FeatureFormat fmt) {
  std::string out;
  if (fmt == FeatureFormat::kText) {
    out = format_feature_text(m);
  } else {
    const bool wide = fmt == FeatureFormat::kBinary64;
    out.append(kMagic, sizeof(kMagic));
    write_le(out, wide ? 64 : 32, 4);
    write_le(out, m.rows(), 8);
    write_le(out, m.cols(), 8);
    for (double v : m.data()) {
      if (wide) {
        write_le(out, std::bit_cast<std::uint64_t>(v), 8);
      } else {
        write_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

FeatureFormat format_for_path(const std::string& path) {
  for (const char* ext : {".txt", ".csv", ".tsv"}) {
    if (ends_with(path, ext)) return FeatureFormat::kText;
  }
  return FeatureFormat::kBinary64;
}

}  // namespace emformer
