#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "emformer/tensor.hpp"

namespace emformer {

// Boolean [queries x keys] matrix; true marks a key a query may attend.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, bool allowed = false)
      : queries_(queries), keys_(keys), allowed_(queries * keys, allowed) {}

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }

  bool allowed(std::size_t q, std::size_t k) const {
    return allowed_[q * keys_ + k] != 0;
  }
  void set(std::size_t q, std::size_t k, bool value = true) {
    allowed_[q * keys_ + k] = value ? 1 : 0;
  }
  // Allows keys [begin, end) for query q.
  void allow_range(std::size_t q, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) set(q, k);
  }

  // Throws NumericError naming the first query row with no allowed key.
  void validate() const;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allowed_;
};

template <typename T>
struct MhaWeights {
  BasicTensor<T> w_q, w_k, w_v, w_o;  // each d x d, applied as x * W
  std::size_t num_heads = 1;

  std::size_t model_dim() const { return w_q.shape()[0]; }
  void validate() const;
};

// Head-mixing matrices applied to the logit cube before the softmax (w_l)
// and to the attention weights after it (w_r).
template <typename T>
struct TalkingHeadsWeights {
  BasicTensor<T> w_l, w_r;  // each h x h

  void validate(std::size_t num_heads) const;
};

// Softmax(q k^T / sqrt(d_h)) v for one head. Masked logits are -inf.
template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q,
                                    const BasicTensor<T>& k,
                                    const BasicTensor<T>& v,
                                    const AttentionMask* mask = nullptr);

// Attention over already-projected q/k/v split into num_heads heads. Returns
// the concatenated head outputs before the output projection. With
// talking_heads set, logits are mixed across heads by w_l, masked, normalized
// over keys, then mixed again by w_r.
template <typename T>
BasicTensor<T> attend_projected(const BasicTensor<T>& q,
                                const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t num_heads,
                                const TalkingHeadsWeights<T>* talking_heads,
                                const AttentionMask* mask);

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q_in,
                                    const BasicTensor<T>& k_in,
                                    const BasicTensor<T>& v_in,
                                    const MhaWeights<T>& w,
                                    const AttentionMask* mask = nullptr);

template <typename T>
BasicTensor<T> talking_heads_attention(const BasicTensor<T>& q_in,
                                       const BasicTensor<T>& k_in,
                                       const BasicTensor<T>& v_in,
                                       const MhaWeights<T>& w,
                                       const TalkingHeadsWeights<T>& th,
                                       const AttentionMask* mask = nullptr);

}  // namespace emformer
