#pragma once

#include <string>
#include <vector>

#include "oneshot/volume.hpp"

namespace oneshot {

struct GeosConfig {
  double gamma = 32.0;   // weight of the intensity term in the step metric
  int neighborhood = 26;  // 6 or 26
  int max_passes = 8;     // one pass = forward + backward sweep
  double epsilon = 1e-6;  // stop when the largest per-pass change drops below this

  void validate() const;
};

struct GeodesicMap {
  Shape3 shape{0, 0, 0};
  std::vector<double> dist;
  int passes_used = 0;   // raster only
  bool converged = true;  // raster only

  std::size_t index(int z, int x, int y) const {
    return (static_cast<std::size_t>(z) * shape[1] + x) * shape[2] + y;
  }
  double at(int z, int x, int y) const { return dist[index(z, x, y)]; }
};

// Step cost between adjacent voxels: Euclidean length of the physical step
// plus the gamma-scaled intensity difference, combined as a 2-norm.
double edge_weight(const Volume3& v, const Coord3& a, const Coord3& b, double gamma);

// Exact multi-source shortest-path distances; the oracle the raster kernel is
// tested against.
GeodesicMap geodesic_dijkstra(const Volume3& v, const std::vector<Coord3>& seeds,
                              const GeosConfig& cfg);

// Chamfer-style solver: alternating forward/backward sweeps, each relaxing a
// voxel from its causal half-neighborhood, until change < epsilon or the pass
// budget runs out. A pass with zero change is a Bellman fixpoint, i.e. the
// exact distance map.
GeodesicMap geodesic_raster(const Volume3& v, const std::vector<Coord3>& seeds,
                            const GeosConfig& cfg);

// Per-class geodesic maps from the scribble points; each voxel takes the class
// of its nearest seed set, ties to the lowest class index. Classes with no
// points are skipped with a warning.
LabelGrid pseudo_mask(const Volume3& v, const ScribbleSet& scribbles, const GeosConfig& cfg,
                      std::vector<std::string>* warnings = nullptr);

struct Box3 {
  Coord3 lo{0, 0, 0};
  Coord3 hi{0, 0, 0};  // inclusive

  Shape3 size() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  bool contains(const Coord3& c) const {
    for (int a = 0; a < 3; ++a)
      if (c[a] < lo[a] || c[a] > hi[a]) return false;
    return true;
  }
};

// Bounding box of a class, dilated by margin voxels, clipped to the grid.
Box3 crop_roi(const LabelGrid& mask, std::uint8_t cls, int margin);

}  // namespace oneshot
