#include "emformer/block_plan.hpp"

#include <algorithm>

#include "emformer/errors.hpp"

namespace emformer {

BlockPlan plan_blocks(std::size_t num_superframes, std::size_t block_size,
                      std::size_t lookahead) {
  if (block_size == 0) throw ConfigError("block_size must be >= 1");
  BlockPlan plan;
  plan.num_frames = num_superframes;
  std::size_t right_offset = 0;
  for (std::size_t begin = 0; begin < num_superframes; begin += block_size) {
    const std::size_t end = std::min(begin + block_size, num_superframes);
    const std::size_t la_end = std::min(end + lookahead, num_superframes);
    plan.center.push_back({begin, end});
    plan.lookahead.push_back({end, la_end});
    plan.right_rows.push_back({right_offset, right_offset + (la_end - end)});
    right_offset += la_end - end;
  }
  return plan;
}

IndexRange memory_block_range(std::size_t block, std::size_t slots,
                              std::size_t offset) {
  if (slots == 0 || block < offset + 1) return {0, 0};
  const std::size_t last = block - offset - 1;
  const std::size_t first = block >= offset + slots ? block - offset - slots : 0;
  return {first, last + 1};
}

IndexRange left_context_range(std::size_t block_begin,
                              std::size_t left_context) {
  return {block_begin > left_context ? block_begin - left_context : 0,
          block_begin};
}

}  // namespace emformer
