#pragma once

#include <string>
#include <vector>

#include "mvsurf/camera.hpp"
#include "mvsurf/tracks.hpp"

namespace mvsurf {

// Piecewise Gaussian over baseline angles (degrees). Tight on the near side
// of the peak, loose beyond it.
struct GaussianParams {
  double theta0 = 5.0;
  double sigma1 = 1.0;
  double sigma2 = 10.0;
};

double piecewise_gaussian(double theta_deg, const GaussianParams& g);

// Angle in [0, 180] degrees between the normalized directions from p to the
// two camera centers. Throws on a track coincident with a center.
double baseline_angle_deg(const Vec3& center_i, const Vec3& center_j, const Vec3& p);

// Sum of G(theta_ij(p)) over tracks visible in both views; 0 when none are.
double pairwise_score(int view_i, int view_j, const TrackSet& tracks,
                      const std::vector<Camera>& cams, const GaussianParams& g);

// Mean pairwise score over all unordered pairs in the set (needs >= 2 views).
double vc_score(const std::vector<int>& views, const TrackSet& tracks,
                const std::vector<Camera>& cams, const GaussianParams& g);

enum class VcGroup { kFavorable, kNormal, kUnfavorable };

const char* vc_group_name(VcGroup g);

struct ScoredCombination {
  std::vector<int> views;  // sorted ascending
  double score = 0;
  VcGroup group = VcGroup::kNormal;
};

struct CombinationRanking {
  std::vector<ScoredCombination> combinations;  // descending score, lexicographic tie-break
};

// Scores every k-subset of [0, num_views) and labels contiguous near-equal
// terciles. Refuses to enumerate more than 10^6 combinations.
CombinationRanking rank_combinations(int num_views, int k, const TrackSet& tracks,
                                     const std::vector<Camera>& cams, const GaussianParams& g);

// Source views for a target: the k views with the highest pairwise score
// against it (ties resolved toward smaller ids).
std::vector<int> best_sources(int target, int k, const TrackSet& tracks,
                              const std::vector<Camera>& cams, const GaussianParams& g);

// CSV with columns views;score;group (view ids comma-joined).
void write_ranking_csv(const std::string& path, const CombinationRanking& ranking);

}  // namespace mvsurf
