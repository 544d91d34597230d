#include "oneshot/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>

namespace oneshot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Coord3> neighborhood_offsets(int neighborhood) {
  std::vector<Coord3> offs;
  if (neighborhood == 6) {
    offs = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  } else {
    for (int dz = -1; dz <= 1; ++dz)
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          if (dz || dx || dy) offs.push_back({dz, dx, dy});
  }
  return offs;
}

// Offsets lexicographically before (0,0,0): the voxels already finalized when
// a forward sweep reaches the current one.
std::vector<Coord3> causal_offsets(int neighborhood) {
  std::vector<Coord3> offs;
  for (const Coord3& o : neighborhood_offsets(neighborhood)) {
    const bool before =
        o[0] < 0 || (o[0] == 0 && (o[1] < 0 || (o[1] == 0 && o[2] < 0)));
    if (before) offs.push_back(o);
  }
  return offs;
}

void check_seeds(const Volume3& v, const std::vector<Coord3>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("geodesic: empty seed set");
  for (const Coord3& s : seeds)
    if (!v.in_bounds(s)) throw std::invalid_argument("geodesic: seed out of bounds");
}

// Precomputed step costs for an offset: the spatial part is constant, only the
// intensity difference varies per edge.
struct StepCost {
  Coord3 off;
  double space_sq;
};

std::vector<StepCost> step_costs(const Vec3& spacing, const std::vector<Coord3>& offs) {
  std::vector<StepCost> sc;
  for (const Coord3& o : offs) {
    double sq = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = o[a] * spacing[a];
      sq += d * d;
    }
    sc.push_back({o, sq});
  }
  return sc;
}

}  // namespace

void GeosConfig::validate() const {
  if (gamma < 0.0) throw std::invalid_argument("GeosConfig: gamma must be >= 0");
  if (neighborhood != 6 && neighborhood != 26)
    throw std::invalid_argument("GeosConfig: neighborhood must be 6 or 26");
  if (max_passes < 1) throw std::invalid_argument("GeosConfig: max_passes must be >= 1");
  if (epsilon < 0.0) throw std::invalid_argument("GeosConfig: epsilon must be >= 0");
}

double edge_weight(const Volume3& v, const Coord3& a, const Coord3& b, double gamma) {
  int cheb = 0;
  for (int k = 0; k < 3; ++k) cheb = std::max(cheb, std::abs(a[k] - b[k]));
  if (cheb != 1) throw std::invalid_argument("edge_weight: voxels are not adjacent");
  double space_sq = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = (a[k] - b[k]) * v.spacing[k];
    space_sq += d * d;
  }
  const double di = double(v.at(a[0], a[1], a[2])) - double(v.at(b[0], b[1], b[2]));
  return std::sqrt(space_sq + gamma * gamma * di * di);
}

GeodesicMap geodesic_dijkstra(const Volume3& v, const std::vector<Coord3>& seeds,
                              const GeosConfig& cfg) {
  cfg.validate();
  check_seeds(v, seeds);
  const int D = v.shape[0], H = v.shape[1], W = v.shape[2];
  GeodesicMap map;
  map.shape = v.shape;
  map.dist.assign(std::size_t(D) * H * W, kInf);

  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  for (const Coord3& s : seeds) {
    const std::size_t i = map.index(s[0], s[1], s[2]);
    if (map.dist[i] > 0.0) {
      map.dist[i] = 0.0;
      pq.push({0.0, i});
    }
  }

  const auto sc = step_costs(v.spacing, neighborhood_offsets(cfg.neighborhood));
  const double g2 = cfg.gamma * cfg.gamma;
  while (!pq.empty()) {
    const auto [d, i] = pq.top();
    pq.pop();
    if (d > map.dist[i]) continue;  // stale entry
    const int z = int(i / (std::size_t(H) * W));
    const int x = int((i / W) % H);
    const int y = int(i % W);
    const double vi = double(v.data[i]);
    for (const StepCost& s : sc) {
      const int nz = z + s.off[0], nx = x + s.off[1], ny = y + s.off[2];
      if (nz < 0 || nz >= D || nx < 0 || nx >= H || ny < 0 || ny >= W) continue;
      const std::size_t ni = map.index(nz, nx, ny);
      const double di = vi - double(v.data[ni]);
      const double nd = d + std::sqrt(s.space_sq + g2 * di * di);
      if (nd < map.dist[ni]) {
        map.dist[ni] = nd;
        pq.push({nd, ni});
      }
    }
  }
  return map;
}

GeodesicMap geodesic_raster(const Volume3& v, const std::vector<Coord3>& seeds,
                            const GeosConfig& cfg) {
  cfg.validate();
  check_seeds(v, seeds);
  const int D = v.shape[0], H = v.shape[1], W = v.shape[2];
  GeodesicMap map;
  map.shape = v.shape;
  map.dist.assign(std::size_t(D) * H * W, kInf);
  for (const Coord3& s : seeds) map.dist[map.index(s[0], s[1], s[2])] = 0.0;

  const auto fwd = step_costs(v.spacing, causal_offsets(cfg.neighborhood));
  auto bwd = fwd;
  for (auto& s : bwd)
    s.off = {-s.off[0], -s.off[1], -s.off[2]};
  const double g2 = cfg.gamma * cfg.gamma;

  auto relax_at = [&](int z, int x, int y, const std::vector<StepCost>& half) {
    const std::size_t i = map.index(z, x, y);
    const double vi = double(v.data[i]);
    double best = map.dist[i];
    for (const StepCost& s : half) {
      const int nz = z + s.off[0], nx = x + s.off[1], ny = y + s.off[2];
      if (nz < 0 || nz >= D || nx < 0 || nx >= H || ny < 0 || ny >= W) continue;
      const std::size_t ni = map.index(nz, nx, ny);
      if (map.dist[ni] == kInf) continue;
      const double di = vi - double(v.data[ni]);
      const double cand = map.dist[ni] + std::sqrt(s.space_sq + g2 * di * di);
      if (cand < best) best = cand;
    }
    if (best < map.dist[i]) {
      const double change = map.dist[i] == kInf ? kInf : map.dist[i] - best;
      map.dist[i] = best;
      return change;
    }
    return 0.0;
  };

  map.converged = false;
  for (int pass = 0; pass < cfg.max_passes; ++pass) {
    double max_change = 0.0;
    for (int z = 0; z < D; ++z)
      for (int x = 0; x < H; ++x)
        for (int y = 0; y < W; ++y) max_change = std::max(max_change, relax_at(z, x, y, fwd));
    for (int z = D - 1; z >= 0; --z)
      for (int x = H - 1; x >= 0; --x)
        for (int y = W - 1; y >= 0; --y)
          max_change = std::max(max_change, relax_at(z, x, y, bwd));
    map.passes_used = pass + 1;
    if (max_change <= cfg.epsilon) {
      map.converged = true;
      break;
    }
  }
  return map;
}

LabelGrid pseudo_mask(const Volume3& v, const ScribbleSet& scribbles, const GeosConfig& cfg,
                      std::vector<std::string>* warnings) {
  cfg.validate();
  scribbles.validate(v.shape);
  if (!scribbles.has_class(0))
    throw std::invalid_argument("pseudo_mask: scribbles must include background points");
  bool any_fg = false;
  for (int c = 1; c < scribbles.class_count; ++c) any_fg = any_fg || scribbles.has_class(c);
  if (!any_fg)
    throw std::invalid_argument("pseudo_mask: scribbles must include a foreground class");

  LabelGrid mask(v.shape);
  std::vector<double> best(mask.numel(), kInf);
  for (int c = 0; c < scribbles.class_count; ++c) {
    const auto pts = scribbles.points_of_class(std::uint8_t(c));
    if (pts.empty()) {
      if (warnings)
        warnings->push_back("pseudo_mask: class " + std::to_string(c) + " has no seeds");
      continue;
    }
    GeodesicMap gm = geodesic_raster(v, pts, cfg);
    for (std::size_t i = 0; i < best.size(); ++i) {
      // strict <: earlier (lower) class indices win ties
      if (gm.dist[i] < best[i]) {
        best[i] = gm.dist[i];
        mask.labels[i] = std::uint8_t(c);
      }
    }
  }
  return mask;
}

Box3 crop_roi(const LabelGrid& mask, std::uint8_t cls, int margin) {
  if (margin < 0) throw std::invalid_argument("crop_roi: negative margin");
  Box3 box;
  bool found = false;
  for (int z = 0; z < mask.shape[0]; ++z)
    for (int x = 0; x < mask.shape[1]; ++x)
      for (int y = 0; y < mask.shape[2]; ++y) {
        if (mask.at(z, x, y) != cls) continue;
        const Coord3 c{z, x, y};
        if (!found) {
          box.lo = box.hi = c;
          found = true;
        } else {
          for (int a = 0; a < 3; ++a) {
            box.lo[a] = std::min(box.lo[a], c[a]);
            box.hi[a] = std::max(box.hi[a], c[a]);
          }
        }
      }
  if (!found)
    throw std::invalid_argument("crop_roi: class " + std::to_string(cls) + " not present");
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = std::max(0, box.lo[a] - margin);
    box.hi[a] = std::min(mask.shape[a] - 1, box.hi[a] + margin);
  }
  return box;
}

}  // namespace oneshot
