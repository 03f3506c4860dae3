#include "mvsurf/vcscore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace mvsurf {

double piecewise_gaussian(double theta_deg, const GaussianParams& g) {
  const double d = theta_deg - g.theta0;
  const double sigma = theta_deg <= g.theta0 ? g.sigma1 : g.sigma2;
  return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

double baseline_angle_deg(const Vec3& center_i, const Vec3& center_j, const Vec3& p) {
  const Vec3 a = center_i - p;
  const Vec3 b = center_j - p;
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-9 || nb < 1e-9) throw std::runtime_error("degenerate track: coincides with a camera center");
  double c = a.dot(b) / (na * nb);
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) * (180.0 / M_PI);
}

double pairwise_score(int view_i, int view_j, const TrackSet& tracks,
                      const std::vector<Camera>& cams, const GaussianParams& g) {
  const Vec3 ci = cams[static_cast<std::size_t>(view_i)].center();
  const Vec3 cj = cams[static_cast<std::size_t>(view_j)].center();
  double score = 0;
  for (const Track& tr : tracks.tracks) {
    const bool in_i = std::find(tr.views.begin(), tr.views.end(), view_i) != tr.views.end();
    const bool in_j = std::find(tr.views.begin(), tr.views.end(), view_j) != tr.views.end();
    if (!in_i || !in_j) continue;
    score += piecewise_gaussian(baseline_angle_deg(ci, cj, tr.position), g);
  }
  return score;
}

double vc_score(const std::vector<int>& views, const TrackSet& tracks,
                const std::vector<Camera>& cams, const GaussianParams& g) {
  const std::size_t n = views.size();
  if (n < 2) throw std::invalid_argument("vc_score: need at least 2 views");
  double total = 0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      total += pairwise_score(views[i], views[j], tracks, cams, g);
  return total / (static_cast<double>(n) * (static_cast<double>(n) - 1.0) / 2.0);
}

const char* vc_group_name(VcGroup g) {
  switch (g) {
    case VcGroup::kFavorable: return "favorable";
    case VcGroup::kNormal: return "normal";
    case VcGroup::kUnfavorable: return "unfavorable";
  }
  return "?";
}

CombinationRanking rank_combinations(int num_views, int k, const TrackSet& tracks,
                                     const std::vector<Camera>& cams, const GaussianParams& g) {
  if (k < 2 || k > num_views)
    throw std::invalid_argument("rank_combinations: k=" + std::to_string(k) + " with " +
                                std::to_string(num_views) + " views");
  // C(n, k) with overflow-safe early exit
  double count = 1;
  for (int i = 0; i < k; ++i) count = count * (num_views - i) / (i + 1);
  if (count > 1e6)
    throw std::runtime_error("rank_combinations: " + std::to_string(count) +
                             " combinations exceed the enumeration limit; sample combinations "
                             "instead of ranking them all");

  // Pairwise scores once, reused across combinations.
  std::vector<std::vector<double>> pair(static_cast<std::size_t>(num_views),
                                        std::vector<double>(static_cast<std::size_t>(num_views), 0));
  for (int i = 0; i < num_views; ++i)
    for (int j = i + 1; j < num_views; ++j)
      pair[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          pair[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
              pairwise_score(i, j, tracks, cams, g);

  CombinationRanking ranking;
  std::vector<int> combo(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) combo[static_cast<std::size_t>(i)] = i;
  const double pairs_per_combo = static_cast<double>(k) * (k - 1) / 2.0;
  while (true) {
    double total = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j)
        total += pair[static_cast<std::size_t>(combo[static_cast<std::size_t>(i)])]
                     [static_cast<std::size_t>(combo[static_cast<std::size_t>(j)])];
    ranking.combinations.push_back({combo, total / pairs_per_combo, VcGroup::kNormal});
    // next lexicographic combination
    int i = k - 1;
    while (i >= 0 && combo[static_cast<std::size_t>(i)] == num_views - k + i) --i;
    if (i < 0) break;
    ++combo[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      combo[static_cast<std::size_t>(j)] = combo[static_cast<std::size_t>(j - 1)] + 1;
  }

  std::stable_sort(ranking.combinations.begin(), ranking.combinations.end(),
                   [](const ScoredCombination& a, const ScoredCombination& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.views < b.views;
                   });

  // contiguous near-equal thirds, extras go to the front groups
  const std::size_t m = ranking.combinations.size();
  const std::size_t s1 = (m + 2) / 3, s2 = (m + 1) / 3;
  for (std::size_t i = 0; i < m; ++i)
    ranking.combinations[i].group =
        i < s1 ? VcGroup::kFavorable : (i < s1 + s2 ? VcGroup::kNormal : VcGroup::kUnfavorable);
  return ranking;
}

std::vector<int> best_sources(int target, int k, const TrackSet& tracks,
                              const std::vector<Camera>& cams, const GaussianParams& g) {
  std::vector<std::pair<double, int>> scored;
  for (int v = 0; v < static_cast<int>(cams.size()); ++v) {
    if (v == target) continue;
    scored.emplace_back(pairwise_score(target, v, tracks, cams, g), v);
  }
  if (static_cast<int>(scored.size()) < k)
    throw std::invalid_argument("best_sources: not enough views");
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(out.begin(), out.end());
  return out;
}

void write_ranking_csv(const std::string& path, const CombinationRanking& ranking) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("ranking: cannot open " + path + " for writing");
  os << "views;score;group\n" << std::setprecision(12);
  for (const auto& c : ranking.combinations) {
    for (std::size_t i = 0; i < c.views.size(); ++i) os << (i ? "," : "") << c.views[i];
    os << ';' << c.score << ';' << vc_group_name(c.group) << '\n';
  }
}

}  // namespace mvsurf
