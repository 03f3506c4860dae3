#pragma once

#include "mvsurf/nn.hpp"

namespace mvsurf {

// Multi-head linear attention (kernel feature map elu(x)+1), O(S) in the
// token count. Accepts (S,C) or batched (B,S,C) token sets.
template <class R>
struct LinearAttention {
  Linear<R> wq, wk, wv, wo;
  int heads = 1;

  LinearAttention() = default;
  LinearAttention(ParamStore<R>& ps, const std::string& name, std::int64_t dim, int heads_,
                  Rng& rng)
      : wq(ps, name + ".q", dim, dim, rng),
        wk(ps, name + ".k", dim, dim, rng),
        wv(ps, name + ".v", dim, dim, rng),
        wo(ps, name + ".o", dim, dim, rng),
        heads(heads_) {
    if (dim % heads_ != 0)
      throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                  " not divisible by heads " + std::to_string(heads_));
  }

  Tensor<R> operator()(const Tensor<R>& queries, const Tensor<R>& keyvals) const {
    const bool batched = queries.rank() == 3;
    const std::int64_t B = batched ? queries.dim(0) : 1;
    const std::int64_t Sq = queries.dim(batched ? 1 : 0), C = queries.dim(-1);
    const std::int64_t Sk = keyvals.dim(batched ? 1 : 0);
    const std::int64_t H = heads, dh = C / H;

    auto split = [&](const Tensor<R>& t, std::int64_t S) {
      // (B,S,C) -> (B*H, S, dh)
      Tensor<R> r = reshape(t, {B, S, H, dh});
      r = permute(r, {0, 2, 1, 3});
      return reshape(r, {B * H, S, dh});
    };
    Tensor<R> q = split(add_scalar(elu(wq(queries)), R(1)), Sq);
    Tensor<R> k = split(add_scalar(elu(wk(keyvals)), R(1)), Sk);
    Tensor<R> v = split(wv(keyvals), Sk);

    Tensor<R> kv = matmul(permute(k, {0, 2, 1}), v);        // (B*H, dh, dh)
    Tensor<R> ksum = sum(k, {1}, true);                     // (B*H, 1, dh)
    Tensor<R> num = matmul(q, kv);                          // (B*H, Sq, dh)
    Tensor<R> den = matmul(q, permute(ksum, {0, 2, 1}));    // (B*H, Sq, 1)
    Tensor<R> out = div(num, add_scalar(den, R(1e-6)));

    out = reshape(out, {B, H, Sq, dh});
    out = permute(out, {0, 2, 1, 3});
    out = reshape(out, batched ? Shape{B, Sq, C} : Shape{Sq, C});
    return wo(out);
  }
};

// Pre-norm transformer block: attention + two-layer feed-forward, both with
// residual connections. Cross attention reuses the same weights with a
// different key/value token set.
template <class R>
struct TransformerBlock {
  LayerNorm<R> ln1, ln2;
  LinearAttention<R> attn;
  Linear<R> ffn1, ffn2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<R>& ps, const std::string& name, std::int64_t dim, int heads,
                   Rng& rng)
      : ln1(ps, name + ".ln1", dim),
        ln2(ps, name + ".ln2", dim),
        attn(ps, name + ".attn", dim, heads, rng),
        ffn1(ps, name + ".ffn1", dim, 2 * dim, rng),
        ffn2(ps, name + ".ffn2", 2 * dim, dim, rng) {}

  Tensor<R> operator()(const Tensor<R>& x, const Tensor<R>& keyvals) const {
    Tensor<R> h = add(x, attn(ln1(x), ln1(keyvals)));
    return add(h, ffn2(relu(ffn1(ln2(h)))));
  }

  Tensor<R> self(const Tensor<R>& x) const { return (*this)(x, x); }
};

// Fixed 2D sinusoidal positional encoding, (h*w, dim) row-major over pixels.
template <class R>
inline Tensor<R> positional_encoding_2d(std::int64_t dim, std::int64_t h, std::int64_t w) {
  if (dim % 4 != 0) throw std::invalid_argument("positional encoding dim must be divisible by 4");
  Tensor<R> pe({h * w, dim});
  const std::int64_t quarter = dim / 4;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      R* row = pe.data() + (y * w + x) * dim;
      for (std::int64_t k = 0; k < quarter; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / quarter);
        row[2 * k] = static_cast<R>(std::sin(x * freq));
        row[2 * k + 1] = static_cast<R>(std::cos(x * freq));
        row[2 * quarter + 2 * k] = static_cast<R>(std::sin(y * freq));
        row[2 * quarter + 2 * k + 1] = static_cast<R>(std::cos(y * freq));
      }
    }
  return pe;
}

}  // namespace mvsurf
