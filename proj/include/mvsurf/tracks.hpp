#pragma once

#include <string>
#include <vector>

#include "mvsurf/vec.hpp"

namespace mvsurf {

// Sparse 3D point with the views that observe it.
struct Track {
  Vec3 position;
  std::vector<int> views;
};

struct TrackSet {
  std::vector<Track> tracks;

  // Every view id must reference an existing camera and every track needs at
  // least two observers.
  void validate(int num_views) const;
};

// ASCII, one track per line: x y z v1 v2 ... vk
TrackSet load_track_file(const std::string& path);
void save_track_file(const std::string& path, const TrackSet& tracks);

}  // namespace mvsurf
