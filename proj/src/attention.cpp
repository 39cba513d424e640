#include "emformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "emformer/errors.hpp"
#include "emformer/numerics.hpp"

namespace emformer {

void AttentionMask::validate() const {
  for (std::size_t q = 0; q < queries_; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys_ && !any; ++k) any = allowed(q, k);
    if (!any) {
      throw NumericError("attention mask: query row " + std::to_string(q) +
                         " has no allowed key");
    }
  }
}

template <typename T>
void MhaWeights<T>::validate() const {
  const std::size_t d = w_q.rank() == 2 ? w_q.shape()[0] : 0;
  for (const auto* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != Shape{d, d}) {
      throw ShapeError("attention weights must all be " +
                       shape_to_string(Shape{d, d}) + ", got " +
                       shape_to_string(w->shape()));
    }
  }
  if (num_heads == 0 || d % num_heads != 0) {
    throw ShapeError("model dim " + std::to_string(d) +
                     " not divisible by num_heads " +
                     std::to_string(num_heads));
  }
}

template <typename T>
void TalkingHeadsWeights<T>::validate(std::size_t num_heads) const {
  const Shape want{num_heads, num_heads};
  if (w_l.shape() != want || w_r.shape() != want) {
    throw ShapeError("talking-heads matrices must be " + shape_to_string(want) +
                     ", got " + shape_to_string(w_l.shape()) + " and " +
                     shape_to_string(w_r.shape()));
  }
}

namespace {

template <typename T>
void check_qkv(const BasicTensor<T>& q, const BasicTensor<T>& k,
               const BasicTensor<T>& v, const AttentionMask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 ||
      q.cols() != k.cols() || k.rows() != v.rows() || q.cols() != v.cols()) {
    throw ShapeError("attention: inconsistent q/k/v shapes " +
                     shape_to_string(q.shape()) + ", " +
                     shape_to_string(k.shape()) + ", " +
                     shape_to_string(v.shape()));
  }
  if (q.cols() == 0) throw ShapeError("attention: head dimension is zero");
  if (mask) {
    if (mask->queries() != q.rows() || mask->keys() != k.rows()) {
      throw ShapeError("attention: mask is " + std::to_string(mask->queries()) +
                       "x" + std::to_string(mask->keys()) + " but logits are " +
                       std::to_string(q.rows()) + "x" +
                       std::to_string(k.rows()));
    }
    mask->validate();
  } else if (k.rows() == 0) {
    throw NumericError("attention: no keys to attend");
  }
}

}  // namespace

template <typename T>
BasicTensor<T> attend_projected(const BasicTensor<T>& q,
                                const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t num_heads,
                                const TalkingHeadsWeights<T>* talking_heads,
                                const AttentionMask* mask) {
  check_qkv(q, k, v, mask);
  const std::size_t d = q.cols();
  if (num_heads == 0 || d % num_heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(d) +
                     " not divisible by " + std::to_string(num_heads) +
                     " heads");
  }
  if (talking_heads) talking_heads->validate(num_heads);

  const std::size_t h = num_heads;
  const std::size_t dh = d / h;
  const std::size_t fq = q.rows();
  const std::size_t fk = k.rows();
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dh));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  if (fq == 0) return BasicTensor<T>::matrix(0, v.cols());

  // Logit cube laid out [head][query][key].
  BasicTensor<T> logits(Shape{h, fq, fk});
  for (std::size_t hd = 0; hd < h; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < fq; ++i) {
      auto qrow = q.row(i);
      for (std::size_t j = 0; j < fk; ++j) {
        if (mask && !mask->allowed(i, j)) {
          // Talking heads re-masks after mixing; a zero keeps the mix finite.
          logits[(hd * fq + i) * fk + j] = talking_heads ? T{0} : neg_inf;
          continue;
        }
        auto krow = k.row(j);
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += qrow[off + c] * krow[off + c];
        logits[(hd * fq + i) * fk + j] = dot * inv_scale;
      }
    }
  }

  if (talking_heads) {
    // Mix before masking so that masked keys stay at -inf after mixing.
    BasicTensor<T> mixed(Shape{h, fq, fk});
    const auto& wl = talking_heads->w_l;
    for (std::size_t i = 0; i < fq; ++i) {
      for (std::size_t j = 0; j < fk; ++j) {
        const bool ok = !mask || mask->allowed(i, j);
        for (std::size_t out_h = 0; out_h < h; ++out_h) {
          T acc = 0;
          for (std::size_t in_h = 0; in_h < h; ++in_h) {
            acc += logits[(in_h * fq + i) * fk + j] * wl(in_h, out_h);
          }
          mixed[(out_h * fq + i) * fk + j] = ok ? acc : neg_inf;
        }
      }
    }
    logits = std::move(mixed);
  }

  BasicTensor<T> weights = softmax_lastaxis(logits);

  if (talking_heads) {
    BasicTensor<T> mixed(Shape{h, fq, fk});
    const auto& wr = talking_heads->w_r;
    for (std::size_t i = 0; i < fq; ++i) {
      for (std::size_t j = 0; j < fk; ++j) {
        for (std::size_t out_h = 0; out_h < h; ++out_h) {
          T acc = 0;
          for (std::size_t in_h = 0; in_h < h; ++in_h) {
            acc += weights[(in_h * fq + i) * fk + j] * wr(in_h, out_h);
          }
          mixed[(out_h * fq + i) * fk + j] = acc;
        }
      }
    }
    weights = std::move(mixed);
  }

  BasicTensor<T> out = BasicTensor<T>::matrix(fq, d);
  for (std::size_t hd = 0; hd < h; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < fq; ++i) {
      auto orow = out.row(i);
      for (std::size_t j = 0; j < fk; ++j) {
        const T p = weights[(hd * fq + i) * fk + j];
        if (p == T{0}) continue;
        auto vrow = v.row(j);
        for (std::size_t c = 0; c < dh; ++c) orow[off + c] += p * vrow[off + c];
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q,
                                    const BasicTensor<T>& k,
                                    const BasicTensor<T>& v,
                                    const AttentionMask* mask) {
  return attend_projected<T>(q, k, v, 1, nullptr, mask);
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q_in,
                                    const BasicTensor<T>& k_in,
                                    const BasicTensor<T>& v_in,
                                    const MhaWeights<T>& w,
                                    const AttentionMask* mask) {
  w.validate();
  const auto heads = attend_projected(matmul(q_in, w.w_q), matmul(k_in, w.w_k),
                                      matmul(v_in, w.w_v), w.num_heads,
                                      static_cast<const TalkingHeadsWeights<T>*>(nullptr),
                                      mask);
  return matmul(heads, w.w_o);
}

template <typename T>
BasicTensor<T> talking_heads_attention(const BasicTensor<T>& q_in,
                                       const BasicTensor<T>& k_in,
                                       const BasicTensor<T>& v_in,
                                       const MhaWeights<T>& w,
                                       const TalkingHeadsWeights<T>& th,
                                       const AttentionMask* mask) {
  w.validate();
  const auto heads = attend_projected(matmul(q_in, w.w_q), matmul(k_in, w.w_k),
                                      matmul(v_in, w.w_v), w.num_heads, &th,
                                      mask);
  return matmul(heads, w.w_o);
}

#define EMFORMER_INSTANTIATE(T)                                                \
  template struct MhaWeights<T>;                                               \
  template struct TalkingHeadsWeights<T>;                                      \
  template BasicTensor<T> scaled_dot_attention(                                \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const AttentionMask*);                                                   \
  template BasicTensor<T> attend_projected(                                    \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      std::size_t, const TalkingHeadsWeights<T>*, const AttentionMask*);       \
  template BasicTensor<T> multi_head_attention(                                \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const MhaWeights<T>&, const AttentionMask*);                             \
  template BasicTensor<T> talking_heads_attention(                             \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      const MhaWeights<T>&, const TalkingHeadsWeights<T>&,                     \
      const AttentionMask*);

EMFORMER_INSTANTIATE(double)
EMFORMER_INSTANTIATE(float)

#undef EMFORMER_INSTANTIATE

}  // namespace emformer
