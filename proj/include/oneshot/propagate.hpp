#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "oneshot/prnet.hpp"
#include "oneshot/volume.hpp"

namespace oneshot {

// What the localizer provides about one voxel of one volume: its predicted
// body-frame coordinate and the two matching-feature vectors.
struct EncodedPoint {
  Vec3 p;
  Tensor f2;
  Tensor f4;
};

// Abstracts the patch predictor so propagation logic can be exercised against
// an oracle encoder with known geometry as well as the trained net.
class PatchEncoder {
 public:
  virtual ~PatchEncoder() = default;
  virtual EncodedPoint encode(const Volume3& vol, const Coord3& c) const = 0;
  virtual Shape3 patch() const = 0;  // used to keep random starts away from borders
};

class PRNetEncoder final : public PatchEncoder {
 public:
  PRNetEncoder(NetworkSpec spec, ModelParams params, PRNetConfig cfg)
      : spec_(std::move(spec)), params_(std::move(params)), cfg_(std::move(cfg)) {}

  EncodedPoint encode(const Volume3& vol, const Coord3& c) const override;
  Shape3 patch() const override { return cfg_.patch_size; }

 private:
  NetworkSpec spec_;
  ModelParams params_;
  PRNetConfig cfg_;
};

struct LocatedPoint {
  Coord3 source{0, 0, 0};  // scribble point in the support volume
  std::uint8_t label = 0;
  int query_id = -1;
  Coord3 start{0, 0, 0};    // random start c1 in the query volume
  Coord3 located{0, 0, 0};  // landing voxel, clamped to bounds
  double sim = -2.0;        // -2 marks "not yet scored"
  bool kept = false;
};

struct PropagationResult {
  std::vector<ScribbleSet> scribbles;  // kept points per query volume
  std::vector<LocatedPoint> audit;     // every localization attempt, scored
  std::vector<std::string> warnings;   // (volume, class) pairs that lost all points
};

struct PropagateConfig {
  int restarts = 1;       // random starts per (support point, query); best sim wins
  int loc_noise_vox = 0;  // uniform voxel perturbation of landings (ablation knob)
};

// Moves one support point into a query volume: encode both patches, translate
// the predicted physical offset into voxels from the random start, clamp.
// Similarity is left unscored.
LocatedPoint locate_point(const PatchEncoder& enc, double r, const Volume3& support,
                          const Coord3& c0, int query_id, const Volume3& query,
                          std::mt19937_64& rng);

// Product of the two cosine similarities (anatomical-level and pixel-level).
// Zero-norm vectors score -1: an uninformative feature should never pass the
// filter. Identical nonzero pairs score exactly 1.
double dfd_sim(const Tensor& f2_s, const Tensor& f4_s, const Tensor& f2_q, const Tensor& f4_q);

// Strict threshold: kept iff sim > tau. Updates flags in place, returns the
// kept subset.
std::vector<LocatedPoint> filter_points(std::vector<LocatedPoint>& points, double tau);

PropagationResult propagate_scribbles(const PatchEncoder& enc, double r, const Volume3& support,
                                      const ScribbleSet& scribbles,
                                      const std::vector<Volume3>& queries, double tau,
                                      const PropagateConfig& cfg, std::mt19937_64& rng);

struct ClassPrecision {
  int cls = 0;
  int kept = 0;
  int correct = 0;
  double precision = 0.0;  // 0 when nothing was kept (flagged below)
  bool empty = false;
};

struct PrecisionReport {
  std::vector<ClassPrecision> classes;
  double overall_precision = 0.0;    // pooled over every kept point
  double foreground_precision = 0.0; // mean over classes >= 1
  double mean_kept_per_volume = 0.0;
};

PrecisionReport precision_report(const PropagationResult& result,
                                 const std::vector<LabelGrid>& gt);

void save_propagation(const std::string& path, const PropagationResult& result);
PropagationResult load_propagation(const std::string& path, const std::vector<Shape3>& bounds);

}  // namespace oneshot
