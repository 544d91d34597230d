#ifndef ONESHOT_SEGMENTER_HPP
#define ONESHOT_SEGMENTER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oneshot/adam.hpp"
#include "oneshot/geodesic.hpp"
#include "oneshot/network.hpp"
#include "oneshot/tensor.hpp"
#include "oneshot/volume.hpp"

namespace oneshot {

// Desk-scale binary 3D UNet trained on pseudo masks. One model segments one
// foreground class against background; multi-organ callers train one per class.
struct SegConfig {
  Shape3 crop_size{16, 32, 32};  // must divide by 2^depth on every axis
  int depth = 3;                 // encoder levels; bottleneck sits below them
  int base_channels = 8;         // channels at full resolution, doubled per level
  double leaky_slope = 0.01;

  int epochs = 40;
  int batch = 4;
  int steps_per_epoch = 8;  // optimizer steps per epoch (batch crops each)
  AdamConfig adam;

  // Crops are sampled inside the per-volume region of interest (bounding box
  // of the pseudo-mask foreground dilated by roi_margin). With probability
  // fg_crop_bias a crop centers on a foreground voxel of the mask; otherwise
  // on a uniform box voxel. The bias keeps small organs from drowning in
  // background cross entropy.
  int roi_margin = 8;
  double fg_crop_bias = 0.7;

  // Progressive label correction: once the model has had plc_warmup_epochs of
  // plain fitting, every epoch ends with prediction flipping pseudo labels it
  // confidently disagrees with, and the confidence bar decays. Correcting from
  // a cold start is harmful: an unfit model is confidently wrong about whole
  // organs and would rewrite even clean labels wholesale.
  bool plc_enabled = false;
  int plc_warmup_epochs = 10;
  double plc_initial = 0.95;
  double plc_decay = 0.99;
  double plc_floor = 0.85;

  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

// Encoder/decoder with skip concatenations; single-channel sigmoid head
// exposed as tap "prob".
NetworkSpec build_unet_spec(const SegConfig& cfg);

// Probability map for one crop, shape (1,D,H,W) matching the input crop.
// Throws if the crop shape is not divisible by 2^depth.
Tensor seg_forward(const SegConfig& cfg, const NetworkSpec& spec, const ModelParams& params,
                   const Tensor& crop);

struct SegLoss {
  double ce = 0.0;    // mean binary cross entropy, probabilities clipped at 1e-7
  double dice = 0.0;  // 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps = 1e-5
  double total = 0.0;
};

// Cross entropy + Dice loss of a probability map against a 0/1 label tensor of
// identical shape. When grad is non-null it receives dL/dprobs.
SegLoss seg_loss(const Tensor& probs, const Tensor& labels, Tensor* grad = nullptr);

// Confidence threshold schedule for progressive label correction.
struct PLCState {
  double delta = 0.95;
  double initial = 0.95;
  double decay = 0.99;
  double floor = 0.85;
  std::vector<std::uint64_t> flip_history;  // one entry per completed epoch
};

// delta' = max(floor, delta * decay); everything else carried through.
PLCState plc_update_delta(const PLCState& s);

// Closed form of the schedule: max(floor, initial * decay^epoch).
double plc_delta_at(int epoch, double initial = 0.95, double decay = 0.99, double floor = 0.85);

// Flip mask labels the model confidently contradicts: with q = max(p, 1-p) and
// pred = [p > 0.5], a voxel flips to pred iff pred != label and q > delta.
// Returns the flip count. Requires delta in (0.5, 1]; shapes must match.
std::uint64_t plc_correct(const Volume3& probs, LabelGrid& labels, double delta);

struct SegEpochRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double delta = -1.0;           // -1 when PLC is disabled
  std::uint64_t flips = 0;       // 0 when PLC is disabled
  double dice_vs_gt = -1.0;      // -1 when no ground truth was supplied
};

struct SegTrainResult {
  NetworkSpec spec;
  ModelParams params;
  std::vector<SegEpochRow> log;
  std::vector<LabelGrid> final_masks;  // pseudo masks after any PLC rewrites
  std::vector<Box3> rois;              // fixed sampling boxes, one per volume
};

// Train on (volume, binary pseudo mask) pairs. Masks are treated as noisy and,
// with PLC enabled, rewritten between epochs. Ground truth, when given, is only
// scored against, never trained on. Deterministic in cfg.seed; throws on a
// non-finite loss.
SegTrainResult train_segmenter(const std::vector<Volume3>& volumes,
                               const std::vector<LabelGrid>& masks, const SegConfig& cfg,
                               const std::vector<LabelGrid>* gt = nullptr,
                               const std::string& log_csv_path = "");

// Tile the box (whole volume by default) with crop-sized windows and stitch
// the per-crop probabilities; voxels outside the box stay 0.
Volume3 predict_volume(const SegConfig& cfg, const NetworkSpec& spec, const ModelParams& params,
                       const Volume3& v, const Box3* roi = nullptr);

// probs > thr as a 0/1 grid.
LabelGrid threshold_mask(const Volume3& probs, double thr = 0.5);

}  // namespace oneshot

#endif
