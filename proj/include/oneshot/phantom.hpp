#ifndef ONESHOT_PHANTOM_HPP
#define ONESHOT_PHANTOM_HPP

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "oneshot/volume.hpp"

namespace oneshot {

// Procedural stand-in for a cohort of CT scans: one fixed template anatomy
// (axis-aligned ellipsoid organs over a smooth positional intensity pattern),
// warped per subject by a low-frequency displacement field plus voxel noise.
struct PhantomConfig {
  Shape3 shape{48, 64, 64};
  Vec3 spacing{3.0, 1.0, 1.0};
  int organ_count = 2;
  // Intensity offset of each organ vs the background level; cycled if shorter
  // than organ_count.
  std::vector<double> organ_offsets{0.35, -0.25};
  double noise_sigma = 0.02;
  double deform_amplitude_vox = 1.5;  // peak per-axis displacement in voxels
  int deform_modes = 2;               // highest cosine frequency of the warp field
  double background_level = 0.45;
  double pattern_amplitude = 0.10;    // strength of the positional intensity cues
  double organ_radius_frac_min = 0.10;  // ellipsoid semi-axis as fraction of axis extent
  double organ_radius_frac_max = 0.18;
  // Declared bounds on the voxel fraction each organ may occupy; generation
  // honors them by construction and tests count labels against them.
  double min_organ_fraction = 0.002;
  double max_organ_fraction = 0.08;
  std::uint64_t seed = 20240817;

  void validate() const;
};

// Deterministic in (cfg.seed, subject_id). All subjects share the template
// anatomy; only the warp and the noise differ.
std::pair<Volume3, LabelGrid> generate_phantom(const PhantomConfig& cfg, int subject_id);

// Simulated manual scribble: a connected polyline of `points_per_class` voxels
// strictly interior (>= 1 voxel, Chebyshev) to the region of `cls`, plus an
// equal number of background marks spread evenly over the background shell
// just outside the organ (how an annotator fences a structure; falls back to
// anywhere in the background when the shell is too small). Throws if the
// eroded class region is too small.
ScribbleSet draw_support_scribble(const LabelGrid& gt, std::uint8_t cls, int points_per_class,
                                  std::mt19937_64& rng);

// Multi-class variant: one interior polyline per listed foreground class, each
// paired with its own nearby background polyline.
ScribbleSet draw_support_scribbles(const LabelGrid& gt, const std::vector<std::uint8_t>& classes,
                                   int points_per_class, std::mt19937_64& rng);

// Stable per-subject stream derived from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace oneshot

#endif
