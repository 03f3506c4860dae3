#pragma once

#include "mvsurf/attention.hpp"
#include "mvsurf/config.hpp"

namespace mvsurf {

// Multi-scale feature extraction plus the cross-view matching transformer.
// Pyramid levels are coarse -> fine; level 0 carries the widest channels.
template <class R>
class Backbone {
 public:
  Backbone(ParamStore<R>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::string p = "backbone.";
    if (cfg.levels() != 3) throw std::invalid_argument("backbone: expects 3 pyramid levels");
    const int c0 = cfg.fpn_channels[2], c1 = cfg.fpn_channels[1], c2 = cfg.fpn_channels[0];
    stem_ = Conv2d<R>(ps, p + "fpn.stem", 3, c0, 3, 1, 1, rng);
    down1_ = Conv2d<R>(ps, p + "fpn.down1", c0, c1, 3, 2, 1, rng);
    res1a_ = Conv2d<R>(ps, p + "fpn.res1a", c1, c1, 3, 1, 1, rng);
    res1b_ = Conv2d<R>(ps, p + "fpn.res1b", c1, c1, 3, 1, 1, rng);
    down2_ = Conv2d<R>(ps, p + "fpn.down2", c1, c2, 3, 2, 1, rng);
    res2a_ = Conv2d<R>(ps, p + "fpn.res2a", c2, c2, 3, 1, 1, rng);
    res2b_ = Conv2d<R>(ps, p + "fpn.res2b", c2, c2, 3, 1, 1, rng);
    lat2_ = Conv2d<R>(ps, p + "fpn.lat2", c2, c2, 1, 1, 0, rng);
    lat1_ = Conv2d<R>(ps, p + "fpn.lat1", c1, c1, 1, 1, 0, rng);
    lat0_ = Conv2d<R>(ps, p + "fpn.lat0", c0, c0, 1, 1, 0, rng);
    proj21_ = Conv2d<R>(ps, p + "fpn.proj21", c2, c1, 1, 1, 0, rng);
    proj10_ = Conv2d<R>(ps, p + "fpn.proj10", c1, c0, 1, 1, 0, rng);
    head2_ = Conv2d<R>(ps, p + "fpn.head2", c2, c2, 3, 1, 1, rng);
    head1_ = Conv2d<R>(ps, p + "fpn.head1", c1, c1, 3, 1, 1, rng);
    head0_ = Conv2d<R>(ps, p + "fpn.head0", c0, c0, 3, 1, 1, rng);
    for (int l = 0; l < cfg.levels(); ++l) {
      std::vector<TransformerBlock<R>> blocks;
      for (int b = 0; b < cfg.attn_blocks; ++b)
        blocks.emplace_back(ps, p + "match.l" + std::to_string(l) + ".b" + std::to_string(b),
                            cfg.fpn_channels[static_cast<std::size_t>(l)], cfg.attn_heads, rng);
      match_blocks_.push_back(std::move(blocks));
    }
  }

  // images: (N,3,H,W) with H, W divisible by 4. Returns levels coarse->fine:
  // (N,32,H/4,W/4), (N,16,H/2,W/2), (N,8,H,W) for the default channel plan.
  std::vector<Tensor<R>> extract_pyramid(const Tensor<R>& images) const {
    const std::int64_t H = images.dim(2), W = images.dim(3);
    const std::int64_t div = std::int64_t{1} << (cfg_.levels() - 1);
    if (H % div || W % div)
      throw std::invalid_argument("extract_pyramid: resolution " + std::to_string(W) + "x" +
                                  std::to_string(H) + " must be divisible by " +
                                  std::to_string(div) + "; pad the input");
    Tensor<R> c0 = relu(stem_(images));
    Tensor<R> c1 = relu(down1_(c0));
    c1 = relu(add(c1, res1b_(relu(res1a_(c1)))));
    Tensor<R> c2 = relu(down2_(c1));
    c2 = relu(add(c2, res2b_(relu(res2a_(c2)))));

    Tensor<R> t2 = lat2_(c2);
    Tensor<R> p0 = head2_(t2);
    Tensor<R> t1 = add(lat1_(c1), proj21_(upsample2d_nearest(t2, 2)));
    Tensor<R> p1 = head1_(t1);
    Tensor<R> t0 = add(lat0_(c0), proj10_(upsample2d_nearest(t1, 2)));
    Tensor<R> p2 = head0_(t0);
    return {p0, p1, p2};
  }

  // Pairwise matching features F_i = sum over j != i of the transformer
  // output for (i, j). Needs at least two views.
  std::vector<Tensor<R>> cross_view_match(const std::vector<Tensor<R>>& pyramid) const {
    const std::int64_t N = pyramid[0].dim(0);
    if (N < 2) throw std::invalid_argument("cross_view_match: need at least 2 views");
    std::vector<Tensor<R>> out;
    for (int l = 0; l < cfg_.levels(); ++l) {
      const Tensor<R>& level = pyramid[static_cast<std::size_t>(l)];
      const std::int64_t C = level.dim(1), h = level.dim(2), w = level.dim(3);
      const Tensor<R> pe = positional_encoding_2d<R>(C, h, w);
      std::vector<Tensor<R>> tokens;  // (S, C) per view, position-encoded
      for (std::int64_t i = 0; i < N; ++i) {
        Tensor<R> v = reshape(slice(level, 0, i, 1), {C, h * w});
        tokens.push_back(add(permute(v, {1, 0}), pe));
      }
      std::vector<Tensor<R>> acc(static_cast<std::size_t>(N));
      for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t j = i + 1; j < N; ++j) {
          Tensor<R> xi = tokens[static_cast<std::size_t>(i)];
          Tensor<R> xj = tokens[static_cast<std::size_t>(j)];
          const auto& blocks = match_blocks_[static_cast<std::size_t>(l)];
          for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (b % 2 == 0) {  // self
              xi = blocks[b].self(xi);
              xj = blocks[b].self(xj);
            } else {  // cross, simultaneous update
              Tensor<R> ni = blocks[b](xi, xj);
              Tensor<R> nj = blocks[b](xj, xi);
              xi = ni;
              xj = nj;
            }
          }
          auto& ai = acc[static_cast<std::size_t>(i)];
          auto& aj = acc[static_cast<std::size_t>(j)];
          ai = ai.defined() ? add(ai, xi) : xi;
          aj = aj.defined() ? add(aj, xj) : xj;
        }
      std::vector<Tensor<R>> per_view;
      for (std::int64_t i = 0; i < N; ++i)
        per_view.push_back(reshape(permute(acc[static_cast<std::size_t>(i)], {1, 0}), {1, C, h, w}));
      out.push_back(concat(per_view, 0));
    }
    return out;
  }

  // Full path: images (N,3,H,W) -> matching features per level, (N,C_l,h_l,w_l).
  std::vector<Tensor<R>> match_features(const Tensor<R>& images) const {
    return cross_view_match(extract_pyramid(images));
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Conv2d<R> stem_, down1_, res1a_, res1b_, down2_, res2a_, res2b_;
  Conv2d<R> lat2_, lat1_, lat0_, proj21_, proj10_, head2_, head1_, head0_;
  std::vector<std::vector<TransformerBlock<R>>> match_blocks_;
};

}  // namespace mvsurf
