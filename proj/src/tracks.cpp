#include "mvsurf/tracks.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mvsurf {

void TrackSet::validate(int num_views) const {
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const Track& tr = tracks[i];
    if (tr.views.size() < 2)
      throw std::runtime_error("track " + std::to_string(i) + " visible in fewer than 2 views");
    for (int v : tr.views)
      if (v < 0 || v >= num_views)
        throw std::runtime_error("track " + std::to_string(i) + " references view " +
                                 std::to_string(v) + " of " + std::to_string(num_views));
  }
}

TrackSet load_track_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("tracks: cannot open " + path);
  TrackSet ts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Track tr;
    if (!(ss >> tr.position.x >> tr.position.y >> tr.position.z))
      throw std::runtime_error("tracks: malformed line in " + path + ": " + line);
    int v;
    while (ss >> v) tr.views.push_back(v);
    ts.tracks.push_back(std::move(tr));
  }
  return ts;
}

void save_track_file(const std::string& path, const TrackSet& tracks) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("tracks: cannot open " + path + " for writing");
  os << std::setprecision(17);
  for (const auto& tr : tracks.tracks) {
    os << tr.position.x << ' ' << tr.position.y << ' ' << tr.position.z;
    for (int v : tr.views) os << ' ' << v;
    os << '\n';
  }
}

}  // namespace mvsurf
