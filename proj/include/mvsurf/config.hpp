#pragma once

#include <cstdint>
#include <vector>

namespace mvsurf {

// Network and sampling hyperparameters. Defaults are the full-scale
// configuration; desk_config() shrinks the expensive knobs for CPU runs.
struct ModelConfig {
  // feature pyramid + matching transformer (coarse -> fine)
  std::vector<int> fpn_channels = {32, 16, 8};
  int attn_blocks = 4;  // alternating self/cross
  int attn_heads = 8;

  // cascaded correlation frustums
  std::vector<int> depth_hyps = {48, 32, 8};
  double cascade_shrink = 0.5;  // per-level hypothesis range factor
  int reg_base_channels = 8;    // 3D regularizer 8 -> 16 -> 32
  int vol_channels = 8;         // feature volume channels per level
  int vol_feat_kernel = 3;      // kernel of the V -> V' conv stack

  // similarity encoding
  int sim_groups = 4;

  // reconstruction transformers
  int d_agg = 16;
  int agg_blocks = 2;
  int agg_heads = 4;
  int d_ray = 16;
  int ray_blocks = 2;
  int ray_heads = 4;
  int pe_octaves = 6;

  // ray sampling
  int coarse_samples = 64;
  int fine_samples = 64;

  int levels() const { return static_cast<int>(fpn_channels.size()); }
};

// Reduced configuration for laptop-scale runs.
inline ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.attn_blocks = 2;
  cfg.attn_heads = 4;
  cfg.depth_hyps = {32, 16, 8};
  cfg.vol_feat_kernel = 1;
  cfg.agg_blocks = 1;
  cfg.ray_blocks = 1;
  cfg.coarse_samples = 24;
  cfg.fine_samples = 16;
  return cfg;
}

}  // namespace mvsurf
