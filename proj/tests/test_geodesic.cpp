#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "oneshot/geodesic.hpp"
#include "oneshot/metrics.hpp"
#include "oneshot/phantom.hpp"

using namespace oneshot;

namespace {

Volume3 uniform_volume(Shape3 shape, float value = 0.5f, Vec3 spacing = {1, 1, 1}) {
  Volume3 v(shape, spacing);
  std::fill(v.data.begin(), v.data.end(), value);
  return v;
}

Volume3 random_volume(Shape3 shape, std::uint64_t seed, Vec3 spacing = {1, 1, 1}) {
  Volume3 v(shape, spacing);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (float& x : v.data) x = u(rng);
  return v;
}

// Second, independent oracle for tiny grids: plain Bellman-Ford over the full
// enumerated edge list, no priority queue, no sweeps.
std::vector<double> bellman_ford(const Volume3& v, const std::vector<Coord3>& seeds,
                                 const GeosConfig& cfg) {
  const int D = v.shape[0], H = v.shape[1], W = v.shape[2];
  std::vector<double> dist(std::size_t(D) * H * W, std::numeric_limits<double>::infinity());
  auto idx = [&](int z, int x, int y) { return (std::size_t(z) * H + x) * W + y; };
  for (const auto& s : seeds) dist[idx(s[0], s[1], s[2])] = 0.0;
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> edges;
  for (int z = 0; z < D; ++z)
    for (int x = 0; x < H; ++x)
      for (int y = 0; y < W; ++y)
        for (int dz = -1; dz <= 1; ++dz)
          for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy) {
              if (!dz && !dx && !dy) continue;
              if (cfg.neighborhood == 6 && std::abs(dz) + std::abs(dx) + std::abs(dy) != 1)
                continue;
              const int nz = z + dz, nx = x + dx, ny = y + dy;
              if (nz < 0 || nz >= D || nx < 0 || nx >= H || ny < 0 || ny >= W) continue;
              edges.push_back({idx(z, x, y), idx(nz, nx, ny),
                               edge_weight(v, {z, x, y}, {nz, nx, ny}, cfg.gamma)});
            }
  for (std::size_t round = 0; round < dist.size(); ++round) {
    bool changed = false;
    for (const Edge& e : edges)
      if (dist[e.a] + e.w < dist[e.b]) {
        dist[e.b] = dist[e.a] + e.w;
        changed = true;
      }
    if (!changed) break;
  }
  return dist;
}

}  // namespace

TEST_CASE("edge weight on a uniform volume is the spatial step length") {
  Volume3 v = uniform_volume({3, 3, 3});
  CHECK(edge_weight(v, {1, 1, 1}, {1, 1, 2}, 0.0) == 1.0);
  CHECK(edge_weight(v, {1, 1, 1}, {1, 1, 2}, 17.0) == 1.0);  // gamma irrelevant
  CHECK(edge_weight(v, {1, 1, 1}, {1, 2, 2}, 5.0) == doctest::Approx(std::sqrt(2.0)));
  CHECK(edge_weight(v, {1, 1, 1}, {2, 2, 2}, 5.0) == doctest::Approx(std::sqrt(3.0)));
}

TEST_CASE("edge weight hand arithmetic with an intensity step") {
  Volume3 v = uniform_volume({1, 1, 2});
  v.data[0] = 0.0f;
  v.data[1] = 0.5f;  // axis step 1, dI = 0.5, gamma = 2 -> sqrt(1 + 1)
  CHECK(edge_weight(v, {0, 0, 0}, {0, 0, 1}, 2.0) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("edge weight respects anisotropic spacing") {
  Volume3 v = uniform_volume({2, 2, 2}, 0.5f, {3, 1, 1});
  CHECK(edge_weight(v, {0, 0, 0}, {1, 0, 0}, 0.0) == 3.0);
  CHECK(edge_weight(v, {0, 0, 0}, {1, 1, 0}, 0.0) == doctest::Approx(std::sqrt(10.0)));
}

TEST_CASE("edge weight is symmetric") {
  Volume3 v = random_volume({4, 4, 4}, 1);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> u(0, 3), d(-1, 1);
  for (int t = 0; t < 100; ++t) {
    Coord3 a{u(rng), u(rng), u(rng)};
    Coord3 b{a[0] + d(rng), a[1] + d(rng), a[2] + d(rng)};
    if (a == b || !v.in_bounds(b)) continue;
    CHECK(edge_weight(v, a, b, 7.0) == edge_weight(v, b, a, 7.0));
  }
}

TEST_CASE("edge weight rejects non-adjacent pairs") {
  Volume3 v = uniform_volume({4, 4, 4});
  CHECK_THROWS_AS(edge_weight(v, {0, 0, 0}, {0, 0, 2}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(edge_weight(v, {1, 1, 1}, {1, 1, 1}, 1.0), std::invalid_argument);
}

TEST_CASE("dijkstra distances vanish exactly at seeds") {
  Volume3 v = random_volume({5, 5, 5}, 3);
  GeosConfig cfg;
  GeodesicMap m = geodesic_dijkstra(v, {{0, 0, 0}, {4, 4, 4}, {2, 1, 3}}, cfg);
  CHECK(m.at(0, 0, 0) == 0.0);
  CHECK(m.at(4, 4, 4) == 0.0);
  CHECK(m.at(2, 1, 3) == 0.0);
  for (double d : m.dist) {
    CHECK(d >= 0.0);
    CHECK(std::isfinite(d));
  }
}

TEST_CASE("dijkstra on a uniform cube: space-diagonal distance is 2*sqrt(3)") {
  Volume3 v = uniform_volume({3, 3, 3});
  GeosConfig cfg;
  cfg.neighborhood = 26;
  GeodesicMap m = geodesic_dijkstra(v, {{0, 0, 0}}, cfg);
  CHECK(m.at(2, 2, 2) == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
  CHECK(m.at(0, 0, 2) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.at(1, 1, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("dijkstra agrees with an enumerated Bellman-Ford oracle") {
  for (int nb : {6, 26}) {
    for (double gamma : {0.0, 10.0}) {
      Volume3 v = random_volume({4, 5, 4}, 7 + nb, {2, 1, 1});
      GeosConfig cfg;
      cfg.neighborhood = nb;
      cfg.gamma = gamma;
      GeodesicMap m = geodesic_dijkstra(v, {{0, 0, 0}, {3, 4, 3}}, cfg);
      auto want = bellman_ford(v, {{0, 0, 0}, {3, 4, 3}}, cfg);
      for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(m.dist[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("adding a seed never increases any distance") {
  Volume3 v = random_volume({6, 6, 6}, 11);
  GeosConfig cfg;
  cfg.gamma = 10.0;
  GeodesicMap base = geodesic_dijkstra(v, {{0, 0, 0}}, cfg);
  GeodesicMap more = geodesic_dijkstra(v, {{0, 0, 0}, {3, 3, 3}, {5, 0, 5}}, cfg);
  for (std::size_t i = 0; i < base.dist.size(); ++i) CHECK(more.dist[i] <= base.dist[i]);
}

TEST_CASE("dijkstra rejects empty or out-of-bounds seeds") {
  Volume3 v = uniform_volume({4, 4, 4});
  GeosConfig cfg;
  CHECK_THROWS_AS(geodesic_dijkstra(v, {}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(geodesic_dijkstra(v, {{4, 0, 0}}, cfg), std::invalid_argument);
}

TEST_CASE("raster matches dijkstra on a uniform volume within two passes") {
  Volume3 v = uniform_volume({8, 8, 8});
  for (int nb : {6, 26}) {
    GeosConfig cfg;
    cfg.neighborhood = nb;
    cfg.max_passes = 2;
    cfg.epsilon = 0.0;
    GeodesicMap r = geodesic_raster(v, {{1, 2, 3}}, cfg);
    GeodesicMap d = geodesic_dijkstra(v, {{1, 2, 3}}, cfg);
    for (std::size_t i = 0; i < r.dist.size(); ++i)
      CHECK(r.dist[i] == doctest::Approx(d.dist[i]).epsilon(1e-12));
  }
}

TEST_CASE("converged raster equals dijkstra on random volumes") {
  // Exact-fixpoint configuration: epsilon 0 stops only on a zero-change pass,
  // which pins the map to the Bellman fixpoint (= exact shortest paths).
  int done = 0;
  for (int nb : {6, 26})
    for (double gamma : {0.0, 10.0, 32.0}) {
      Volume3 v = random_volume({16, 16, 16}, 100 + nb + int(gamma));
      std::mt19937_64 rng(200 + nb + int(gamma));
      std::uniform_int_distribution<int> u(0, 15);
      std::vector<Coord3> seeds;
      for (int s = 0; s < 3; ++s) seeds.push_back({u(rng), u(rng), u(rng)});
      GeosConfig cfg;
      cfg.neighborhood = nb;
      cfg.gamma = gamma;
      cfg.max_passes = 64;
      cfg.epsilon = 0.0;
      GeodesicMap r = geodesic_raster(v, seeds, cfg);
      CHECK(r.converged);
      GeodesicMap d = geodesic_dijkstra(v, seeds, cfg);
      double worst = 0.0;
      for (std::size_t i = 0; i < r.dist.size(); ++i)
        worst = std::max(worst, std::abs(r.dist[i] - d.dist[i]));
      CHECK(worst <= 1e-5);
      ++done;
    }
  CHECK(done == 6);
}

TEST_CASE("raster distances are non-increasing in the pass count") {
  Volume3 v = random_volume({10, 10, 10}, 13);
  std::vector<Coord3> seeds = {{0, 9, 4}};
  GeosConfig cfg;
  cfg.gamma = 20.0;
  cfg.epsilon = 0.0;
  std::vector<double> prev;
  for (int passes = 1; passes <= 4; ++passes) {
    cfg.max_passes = passes;
    GeodesicMap m = geodesic_raster(v, seeds, cfg);
    if (!prev.empty())
      for (std::size_t i = 0; i < m.dist.size(); ++i) CHECK(m.dist[i] <= prev[i]);
    prev = m.dist;
  }
}

TEST_CASE("gamma=0 distances ignore the intensities entirely") {
  Volume3 a = random_volume({8, 8, 8}, 17);
  Volume3 b = a;
  // permute intensities arbitrarily: the spatial-only metric must not care
  std::mt19937_64 rng(18);
  std::shuffle(b.data.begin(), b.data.end(), rng);
  GeosConfig cfg;
  cfg.gamma = 0.0;
  cfg.max_passes = 64;
  cfg.epsilon = 0.0;
  std::vector<Coord3> seeds = {{2, 2, 2}};
  GeodesicMap ma = geodesic_raster(a, seeds, cfg);
  GeodesicMap mb = geodesic_raster(b, seeds, cfg);
  CHECK(ma.dist == mb.dist);
}

TEST_CASE("distances obey the path-segment bound") {
  // For any adjacent pair, |d(a) - d(b)| <= w(a,b): otherwise relaxing through
  // the edge would shorten one side.
  Volume3 v = random_volume({6, 6, 6}, 19);
  GeosConfig cfg;
  cfg.gamma = 15.0;
  cfg.max_passes = 64;
  cfg.epsilon = 0.0;
  GeodesicMap m = geodesic_raster(v, {{0, 0, 0}}, cfg);
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<int> u(0, 5), d(-1, 1);
  for (int t = 0; t < 500; ++t) {
    Coord3 a{u(rng), u(rng), u(rng)};
    Coord3 b{a[0] + d(rng), a[1] + d(rng), a[2] + d(rng)};
    if (a == b || !v.in_bounds(b)) continue;
    const double w = edge_weight(v, a, b, cfg.gamma);
    CHECK(std::abs(m.at(a[0], a[1], a[2]) - m.at(b[0], b[1], b[2])) <= w + 1e-9);
  }
}

TEST_CASE("pseudo mask keeps every scribble voxel's own label") {
  Volume3 v = random_volume({10, 10, 10}, 21);
  ScribbleSet s;
  s.class_count = 3;
  s.points = {{{1, 1, 1}, 1}, {{8, 8, 8}, 2}, {{5, 5, 5}, 0}, {{0, 9, 0}, 0}};
  GeosConfig cfg;
  LabelGrid mask = pseudo_mask(v, s, cfg);
  for (const auto& p : s.points) CHECK(mask.at(p.voxel[0], p.voxel[1], p.voxel[2]) == p.label);
}

TEST_CASE("pseudo mask on a uniform volume is the geodesic Voronoi split") {
  Volume3 v = uniform_volume({8, 8, 8});
  ScribbleSet s;
  s.class_count = 2;
  s.points = {{{2, 2, 2}, 1}, {{6, 6, 6}, 0}};
  GeosConfig cfg;
  cfg.max_passes = 64;
  cfg.epsilon = 0.0;
  LabelGrid mask = pseudo_mask(v, s, cfg);
  GeodesicMap fg = geodesic_dijkstra(v, {{2, 2, 2}}, cfg);
  GeodesicMap bg = geodesic_dijkstra(v, {{6, 6, 6}}, cfg);
  for (int z = 0; z < 8; ++z)
    for (int x = 0; x < 8; ++x)
      for (int y = 0; y < 8; ++y) {
        // background (class 0) wins ties
        const std::uint8_t want = fg.at(z, x, y) < bg.at(z, x, y) ? 1 : 0;
        CHECK(mask.at(z, x, y) == want);
      }
}

TEST_CASE("contrast weighting improves the mask on an intensity-separated organ") {
  PhantomConfig pcfg;
  pcfg.shape = {24, 32, 32};
  pcfg.organ_count = 1;
  pcfg.noise_sigma = 0.01;
  auto [vol, gt] = generate_phantom(pcfg, 0);
  Volume3 nv = normalize_intensity(vol);
  std::mt19937_64 rng(23);
  ScribbleSet s = draw_support_scribbles(gt, {1}, 8, rng);

  GeosConfig flat;
  flat.gamma = 0.0;
  GeosConfig contrast;
  contrast.gamma = 32.0;
  LabelGrid m0 = pseudo_mask(nv, s, flat);
  LabelGrid m1 = pseudo_mask(nv, s, contrast);
  LabelGrid bin_gt(gt.shape);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) bin_gt.labels[i] = gt.labels[i] == 1;
  const double d0 = dice_score(m0, bin_gt, 1);
  const double d1 = dice_score(m1, bin_gt, 1);
  INFO("dice gamma=0: " << d0 << " gamma=32: " << d1);
  CHECK(d1 >= d0);
  CHECK(d1 > 0.9);  // contrast-aware mask must be nearly right on a clean phantom
}

TEST_CASE("pseudo mask requires background and foreground seeds") {
  Volume3 v = uniform_volume({6, 6, 6});
  GeosConfig cfg;
  ScribbleSet no_bg;
  no_bg.class_count = 2;
  no_bg.points = {{{1, 1, 1}, 1}};
  CHECK_THROWS_AS(pseudo_mask(v, no_bg, cfg), std::invalid_argument);
  ScribbleSet no_fg;
  no_fg.class_count = 2;
  no_fg.points = {{{1, 1, 1}, 0}};
  CHECK_THROWS_AS(pseudo_mask(v, no_fg, cfg), std::invalid_argument);
}

TEST_CASE("a seedless class is skipped with a warning") {
  Volume3 v = uniform_volume({6, 6, 6});
  ScribbleSet s;
  s.class_count = 3;  // class 2 never seeded
  s.points = {{{1, 1, 1}, 1}, {{4, 4, 4}, 0}};
  GeosConfig cfg;
  std::vector<std::string> warnings;
  LabelGrid mask = pseudo_mask(v, s, cfg, &warnings);
  CHECK(mask.count_label(2) == 0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("class 2") != std::string::npos);
}

TEST_CASE("roi box dilates and clips around a class") {
  LabelGrid g({10, 10, 10});
  g.at(5, 5, 5) = 1;
  Box3 b2 = crop_roi(g, 1, 2);
  CHECK(b2.lo == Coord3{3, 3, 3});
  CHECK(b2.hi == Coord3{7, 7, 7});
  Box3 b0 = crop_roi(g, 1, 0);
  CHECK(b0.lo == Coord3{5, 5, 5});
  CHECK(b0.hi == Coord3{5, 5, 5});
  Box3 bbig = crop_roi(g, 1, 100);
  CHECK(bbig.lo == Coord3{0, 0, 0});
  CHECK(bbig.hi == Coord3{9, 9, 9});
  CHECK_THROWS_AS(crop_roi(g, 3, 1), std::invalid_argument);
}

TEST_CASE("roi box spans all voxels of the class") {
  LabelGrid g({8, 8, 8});
  g.at(1, 2, 3) = 2;
  g.at(6, 2, 3) = 2;
  g.at(3, 7, 0) = 2;
  Box3 b = crop_roi(g, 2, 0);
  CHECK(b.lo == Coord3{1, 2, 0});
  CHECK(b.hi == Coord3{6, 7, 3});
  CHECK(b.size() == Shape3{6, 6, 4});
}

TEST_CASE("dice score basics") {
  LabelGrid a({2, 2, 2}), b({2, 2, 2});
  // both empty for class 1 -> perfect by convention
  CHECK(dice_score(a, b, 1) == 1.0);
  a.at(0, 0, 0) = 1;
  CHECK(dice_score(a, b, 1) == 0.0);  // prediction only
  b.at(0, 0, 0) = 1;
  CHECK(dice_score(a, b, 1) == 1.0);  // exact match
  a.at(0, 0, 1) = 1;                  // |M|=2, |G|=1, inter=1 -> 2/3
  CHECK(dice_score(a, b, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  LabelGrid c({2, 2, 1});
  CHECK_THROWS_AS(dice_score(a, c, 1), std::invalid_argument);
}

TEST_CASE("mean dice averages the per-class scores") {
  LabelGrid a({2, 2, 2}), b({2, 2, 2});
  a.at(0, 0, 0) = 1;
  b.at(0, 0, 0) = 1;  // class 1 dice 1
  a.at(1, 1, 1) = 2;  // class 2 dice 0
  CHECK(mean_dice(a, b, {1, 2}) == doctest::Approx(0.5).epsilon(1e-12));
}
