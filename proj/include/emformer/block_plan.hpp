#pragma once

#include <cstddef>
#include <vector>

namespace emformer {

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const IndexRange&) const = default;
};

// Segmentation of a superframe sequence into center blocks, each with a
// hard-copied lookahead span (the next r superframes, clipped at the end).
struct BlockPlan {
  std::size_t num_frames = 0;
  std::vector<IndexRange> center;
  std::vector<IndexRange> lookahead;
  // Rows each block's lookahead copy occupies in the concatenated
  // right-context tensor.
  std::vector<IndexRange> right_rows;

  std::size_t num_blocks() const { return center.size(); }
  std::size_t total_right_rows() const {
    return right_rows.empty() ? 0 : right_rows.back().end;
  }
};

BlockPlan plan_blocks(std::size_t num_superframes, std::size_t block_size,
                      std::size_t lookahead);

// Blocks whose compressed vectors form the memory bank of block i:
// [max(0, i - offset - slots), i - offset - 1], empty when that is negative.
IndexRange memory_block_range(std::size_t block, std::size_t slots,
                              std::size_t offset);

// Center frames cached as left context for a block starting at block_begin.
IndexRange left_context_range(std::size_t block_begin,
                              std::size_t left_context);

}  // namespace emformer
