#pragma once

#include <string>

#include "emformer/tensor.hpp"

namespace emformer {

// Binary feature matrix (little-endian):
//   "EMFFEAT\0" | u32 bits (32 or 64) | u64 rows | u64 cols | data[rows*cols]
// Text feature matrix: one frame per line, values separated by whitespace
// or commas; '#' starts a comment.
enum class FeatureFormat { kBinary32, kBinary64, kText };

Tensor parse_feature_text(const std::string& text);
std::string format_feature_text(const Tensor& m);

// Detects the format from the magic bytes.
Tensor read_features(const std::string& path);
void write_features(const std::string& path, const Tensor& m, FeatureFormat fmt);

// kText for .txt/.csv/.tsv, kBinary64 otherwise.
FeatureFormat format_for_path(const std::string& path);

}  // namespace emformer
