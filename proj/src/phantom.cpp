#include "oneshot/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace oneshot {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
  Vec3 center;  // voxel units, template space
  Vec3 radius;  // voxel units
};

struct Template {
  std::vector<Ellipsoid> organs;
  std::array<double, 4> pattern_phase;
};

// Template anatomy depends on cfg.seed only, never on the subject.
Template build_template(const PhantomConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7e3a11c5u));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Template t;
  for (auto& ph : t.pattern_phase) ph = 2.0 * kPi * u01(rng);

  const double margin_vox = cfg.deform_amplitude_vox + 3.0;  // keeps organs apart and off walls
  const int max_attempts = 400;
  for (int organ = 0; organ < cfg.organ_count; ++organ) {
    bool placed = false;
    for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
      Ellipsoid e;
      for (int a = 0; a < 3; ++a) {
        const double frac = cfg.organ_radius_frac_min +
                            (cfg.organ_radius_frac_max - cfg.organ_radius_frac_min) * u01(rng);
        e.radius[a] = frac * cfg.shape[a];
        const double lo = e.radius[a] + margin_vox;
        const double hi = cfg.shape[a] - 1 - e.radius[a] - margin_vox;
        if (hi <= lo) goto next_attempt;
        e.center[a] = lo + (hi - lo) * u01(rng);
      }
      {
        bool overlap = false;
        for (const auto& o : t.organs) {
          // Conservative sphere test on the largest semi-axes.
          const double rs = *std::max_element(e.radius.begin(), e.radius.end()) +
                            *std::max_element(o.radius.begin(), o.radius.end()) + margin_vox;
          const double dz = e.center[0] - o.center[0];
          const double dx = e.center[1] - o.center[1];
          const double dy = e.center[2] - o.center[2];
          if (dz * dz + dx * dx + dy * dy < rs * rs) {
            overlap = true;
            break;
          }
        }
        if (!overlap) {
          t.organs.push_back(e);
          placed = true;
        }
      }
    next_attempt:;
    }
    if (!placed)
      throw std::runtime_error("generate_phantom: organ placement infeasible for shape (organ " +
                               std::to_string(organ) + ")");
  }
  return t;
}

// One displacement component: normalized sum of low-frequency cosines.
struct WarpComponent {
  static constexpr int kModes = 3;
  std::array<double, kModes> coef;
  std::array<std::array<int, 3>, kModes> freq;
  std::array<double, kModes> phase;
  double amplitude = 0.0;

  double eval(double fz, double fx, double fy) const {
    double s = 0.0;
    for (int m = 0; m < kModes; ++m)
      s += coef[m] * std::cos(2.0 * kPi * (freq[m][0] * fz + freq[m][1] * fx + freq[m][2] * fy) +
                              phase[m]);
    return amplitude * s;
  }
};

std::array<WarpComponent, 3> build_warp(const PhantomConfig& cfg, int subject_id) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x51ab0000u + static_cast<std::uint64_t>(subject_id)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> fdist(-std::max(1, cfg.deform_modes),
                                           std::max(1, cfg.deform_modes));
  std::array<WarpComponent, 3> w;
  for (auto& comp : w) {
    double sum_abs = 0.0;
    for (int m = 0; m < WarpComponent::kModes; ++m) {
      comp.coef[m] = 2.0 * u01(rng) - 1.0;
      sum_abs += std::abs(comp.coef[m]);
      for (int a = 0; a < 3; ++a) comp.freq[m][a] = fdist(rng);
      comp.phase[m] = 2.0 * kPi * u01(rng);
    }
    comp.amplitude = sum_abs > 0.0 ? cfg.deform_amplitude_vox / sum_abs : 0.0;
  }
  return w;
}

// Positional intensity cues in template space: three axis ramps plus
// low-frequency cosines, so any patch carries information about where it sits.
double pattern_value(const Template& t, double fz, double fx, double fy, double amplitude) {
  const double ramps = 0.35 * (2.0 * fz - 1.0) + 0.35 * (2.0 * fx - 1.0) + 0.35 * (2.0 * fy - 1.0);
  const double waves = 0.15 * std::cos(2.0 * kPi * 2.0 * fz + t.pattern_phase[0]) +
                       0.15 * std::cos(2.0 * kPi * 2.0 * fx + t.pattern_phase[1]) +
                       0.15 * std::cos(2.0 * kPi * 2.0 * fy + t.pattern_phase[2]) +
                       0.20 * std::cos(2.0 * kPi * (fz + fx + fy) + t.pattern_phase[3]);
  return amplitude * (ramps + waves);
}

int organ_at(const Template& t, double tz, double tx, double ty) {
  for (std::size_t i = 0; i < t.organs.size(); ++i) {
    const auto& e = t.organs[i];
    const double az = (tz - e.center[0]) / e.radius[0];
    const double ax = (tx - e.center[1]) / e.radius[1];
    const double ay = (ty - e.center[2]) / e.radius[2];
    if (az * az + ax * ax + ay * ay <= 1.0) return static_cast<int>(i) + 1;
  }
  return 0;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void PhantomConfig::validate() const {
  if (organ_count < 1) throw std::invalid_argument("PhantomConfig: organ_count must be >= 1");
  if (deform_amplitude_vox < 0.0)
    throw std::invalid_argument("PhantomConfig: deformation amplitude must be >= 0");
  if (organ_offsets.empty()) throw std::invalid_argument("PhantomConfig: organ_offsets empty");
  for (int a = 0; a < 3; ++a) {
    if (shape[a] <= 0) throw std::invalid_argument("PhantomConfig: non-positive shape");
    if (!(spacing[a] > 0.0)) throw std::invalid_argument("PhantomConfig: non-positive spacing");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("PhantomConfig: negative noise sigma");
}

std::pair<Volume3, LabelGrid> generate_phantom(const PhantomConfig& cfg, int subject_id) {
  cfg.validate();
  const Template tmpl = build_template(cfg);
  const auto warp = build_warp(cfg, subject_id);

  std::mt19937_64 noise_rng(
      mix_seed(cfg.seed, 0x230dull + 7919ull * static_cast<std::uint64_t>(subject_id)));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Volume3 vol(cfg.shape, cfg.spacing);
  LabelGrid lab(cfg.shape);
  const int D = cfg.shape[0], H = cfg.shape[1], W = cfg.shape[2];
  std::size_t idx = 0;
  for (int z = 0; z < D; ++z) {
    for (int x = 0; x < H; ++x) {
      for (int y = 0; y < W; ++y, ++idx) {
        const double fz = double(z) / D, fx = double(x) / H, fy = double(y) / W;
        // Pull the voxel back into template space through the subject warp.
        const double tz = z + warp[0].eval(fz, fx, fy);
        const double tx = x + warp[1].eval(fz, fx, fy);
        const double ty = y + warp[2].eval(fz, fx, fy);
        const int organ = organ_at(tmpl, tz, tx, ty);
        lab.labels[idx] = static_cast<std::uint8_t>(organ);

        double value = cfg.background_level +
                       pattern_value(tmpl, tz / D, tx / H, ty / W, cfg.pattern_amplitude);
        if (organ > 0) value += cfg.organ_offsets[(organ - 1) % cfg.organ_offsets.size()];
        if (cfg.noise_sigma > 0.0) value += cfg.noise_sigma * gauss(noise_rng);
        vol.data[idx] = static_cast<float>(value);
      }
    }
  }
  return {std::move(vol), std::move(lab)};
}

namespace {

// Voxels of `cls` whose full Chebyshev-1 neighborhood is in bounds and in `cls`.
std::vector<std::uint32_t> eroded_region(const LabelGrid& g, std::uint8_t cls) {
  std::vector<std::uint32_t> out;
  const int D = g.shape[0], H = g.shape[1], W = g.shape[2];
  for (int z = 1; z < D - 1; ++z)
    for (int x = 1; x < H - 1; ++x)
      for (int y = 1; y < W - 1; ++y) {
        if (g.at(z, x, y) != cls) continue;
        bool interior = true;
        for (int dz = -1; dz <= 1 && interior; ++dz)
          for (int dx = -1; dx <= 1 && interior; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
              if (g.at(z + dz, x + dx, y + dy) != cls) {
                interior = false;
                break;
              }
        if (interior) out.push_back(static_cast<std::uint32_t>(g.index(z, x, y)));
      }
  return out;
}

// Chebyshev distance to the voxels of `cls`, saturated at `radius` + 1
// (frontier dilation; every dilation round grows the ball by one).
std::vector<std::int16_t> cheb_distance_to_class(const LabelGrid& g, std::uint8_t cls,
                                                 int radius) {
  std::vector<std::int16_t> dist(g.numel(), -1);
  std::vector<std::uint32_t> frontier;
  for (std::size_t i = 0; i < g.labels.size(); ++i)
    if (g.labels[i] == cls) {
      dist[i] = 0;
      frontier.push_back(static_cast<std::uint32_t>(i));
    }
  const int D = g.shape[0], H = g.shape[1], W = g.shape[2];
  for (int r = 1; r <= radius && !frontier.empty(); ++r) {
    std::vector<std::uint32_t> next;
    for (auto idx : frontier) {
      const int y = idx % W, x = (idx / W) % H, z = idx / (W * H);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy) {
            const int qz = z + dz, qx = x + dx, qy = y + dy;
            if (qz < 0 || qz >= D || qx < 0 || qx >= H || qy < 0 || qy >= W) continue;
            const std::uint32_t qi = static_cast<std::uint32_t>(g.index(qz, qx, qy));
            if (dist[qi] < 0) {
              dist[qi] = static_cast<std::int16_t>(r);
              next.push_back(qi);
            }
          }
    }
    frontier = std::move(next);
  }
  return dist;
}

Coord3 unflatten(const LabelGrid& g, std::uint32_t idx) {
  const int W = g.shape[2], H = g.shape[1];
  const int y = idx % W;
  const int x = (idx / W) % H;
  const int z = idx / (W * H);
  return {z, x, y};
}

// Randomized DFS over the eroded set: emits n voxels, each adjacent
// (Chebyshev) to an earlier one, so the scribble stays connected.
std::vector<Coord3> grow_polyline(const LabelGrid& g, const std::vector<std::uint32_t>& region,
                                  int n, std::mt19937_64& rng) {
  std::vector<std::uint8_t> in_region(g.numel(), 0);
  for (auto i : region) in_region[i] = 1;

  std::uniform_int_distribution<std::size_t> pick(0, region.size() - 1);
  for (int attempt = 0; attempt < 8; ++attempt) {
    std::vector<Coord3> emitted;
    std::vector<std::uint8_t> visited(g.numel(), 0);
    std::vector<std::uint32_t> stack{region[pick(rng)]};
    while (!stack.empty() && static_cast<int>(emitted.size()) < n) {
      const std::uint32_t cur = stack.back();
      stack.pop_back();
      if (visited[cur]) continue;
      visited[cur] = 1;
      emitted.push_back(unflatten(g, cur));
      Coord3 c = emitted.back();
      std::vector<std::uint32_t> nbrs;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy) {
            if (!dz && !dx && !dy) continue;
            Coord3 q{c[0] + dz, c[1] + dx, c[2] + dy};
            if (!g.in_bounds(q)) continue;
            const std::uint32_t qi = static_cast<std::uint32_t>(g.index(q[0], q[1], q[2]));
            if (in_region[qi] && !visited[qi]) nbrs.push_back(qi);
          }
      std::shuffle(nbrs.begin(), nbrs.end(), rng);
      for (auto q : nbrs) stack.push_back(q);
    }
    if (static_cast<int>(emitted.size()) == n) return emitted;
  }
  throw std::runtime_error("draw_support_scribble: region component too small for requested points");
}

// Evenly spread picks: start random, then repeatedly take the region voxel
// farthest (min squared Euclidean) from everything chosen so far.
std::vector<Coord3> farthest_point_sample(const LabelGrid& g,
                                          const std::vector<std::uint32_t>& region, int n,
                                          std::mt19937_64& rng) {
  if (static_cast<int>(region.size()) < n)
    throw std::runtime_error("draw_support_scribble: region too small for requested points");
  std::uniform_int_distribution<std::size_t> pick(0, region.size() - 1);
  std::vector<double> min_d2(region.size(), std::numeric_limits<double>::infinity());
  std::vector<Coord3> chosen;
  std::size_t next = pick(rng);
  for (int k = 0; k < n; ++k) {
    const Coord3 c = unflatten(g, region[next]);
    chosen.push_back(c);
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < region.size(); ++i) {
      const Coord3 q = unflatten(g, region[i]);
      const double dz = q[0] - c[0], dx = q[1] - c[1], dy = q[2] - c[2];
      min_d2[i] = std::min(min_d2[i], dz * dz + dx * dx + dy * dy);
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    next = best;
  }
  return chosen;
}

}  // namespace

ScribbleSet draw_support_scribble(const LabelGrid& gt, std::uint8_t cls, int points_per_class,
                                  std::mt19937_64& rng) {
  return draw_support_scribbles(gt, {cls}, points_per_class, rng);
}

ScribbleSet draw_support_scribbles(const LabelGrid& gt, const std::vector<std::uint8_t>& classes,
                                   int points_per_class, std::mt19937_64& rng) {
  if (points_per_class < 1)
    throw std::invalid_argument("draw_support_scribble: points_per_class must be >= 1");
  int max_cls = 0;
  for (auto l : gt.labels) max_cls = std::max(max_cls, int(l));

  const auto bg = eroded_region(gt, 0);
  if (bg.empty()) throw std::runtime_error("draw_support_scribble: background has no interior");

  ScribbleSet out;
  out.class_count = max_cls + 1;
  for (std::uint8_t cls : classes) {
    const auto region = eroded_region(gt, cls);
    if (region.empty())
      throw std::runtime_error("draw_support_scribble: class " + std::to_string(int(cls)) +
                               " absent or has no interior");
    for (const auto& c : grow_polyline(gt, region, points_per_class, rng))
      out.points.push_back({c, cls});

    // An annotator fences the organ: the paired background marks are spread
    // around the shell just outside it (Chebyshev 2..8), evenly, so no side is
    // left open. Fall back to anywhere in the background only when that shell
    // is too cramped.
    const auto dist = cheb_distance_to_class(gt, cls, 8);
    std::vector<std::uint32_t> shell;
    for (auto i : bg)
      if (dist[i] >= 2 && dist[i] <= 8) shell.push_back(i);
    const auto& bg_region = static_cast<int>(shell.size()) >= 3 * points_per_class ? shell : bg;
    for (const auto& c : farthest_point_sample(gt, bg_region, points_per_class, rng))
      out.points.push_back({c, 0});
  }
  return out;
}

}  // namespace oneshot
