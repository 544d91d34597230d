#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "oneshot/adam.hpp"
#include "oneshot/network.hpp"
#include "oneshot/volume.hpp"

namespace oneshot {

// Localizer: shared conv encoder feeding (a) a pooled coordinate head that
// places the patch in a body-frame mm coordinate system and (b) a
// reconstruction decoder whose intermediate maps provide matching features.
struct PRNetConfig {
  Shape3 patch_size{16, 32, 32};
  std::array<int, 4> enc_channels{8, 16, 32, 64};
  std::array<int, 4> dec_channels{32, 16, 8, 8};
  int head_width = 0;  // 0 = single dense layer straight from the pooled encoder
  double r = 0.0;      // offset bound in mm; 0 = derive from training volume diagonal
  std::string m2_tap = "m2";
  std::string m4_tap = "m4";

  void validate() const;
};

NetworkSpec build_prnet_spec(const PRNetConfig& cfg);

struct PRNetOutput {
  Vec3 p;       // predicted body-frame coordinate, mm
  Tensor recon;  // same shape as the input patch (d,h,w)
  Tensor f2;     // center voxel of the map after 2 upsamplings, one value per channel
  Tensor f4;     // center voxel of the map after 4 upsamplings
};

PRNetOutput prnet_forward(const NetworkSpec& spec, const ModelParams& params,
                          const PRNetConfig& cfg, const Tensor& patch);

// Ground-truth physical offset between two voxels: (c1 - c0) scaled by the
// per-axis spacing.
Vec3 gt_offset(const Coord3& c0, const Coord3& c1, const Vec3& e);

// Predicted offset r*tanh(p0 - p1), guaranteed strictly inside (-r, r) per
// component and exactly antisymmetric under argument swap.
Vec3 pred_offset(const Vec3& p0, const Vec3& p1, double r);

struct SslLossParts {
  double total = 0.0;
  double dis = 0.0;
  double rec = 0.0;
};

// dis = mean squared offset error over the 3 components; rec = per-voxel mean
// squared reconstruction error summed over the two patches.
SslLossParts ssl_loss(const PRNetOutput& out0, const PRNetOutput& out1, const Tensor& x0,
                      const Tensor& x1, const Vec3& d10, double r);

// Largest physical diagonal over the given volumes (the largest offset the
// predictor can be asked for).
double default_offset_bound(const std::vector<Volume3>& volumes);

struct PRNetTrainConfig {
  int batch = 8;
  int steps_per_epoch = 16;
  int epochs = 10;
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::string log_csv_path;  // optional per-epoch CSV: epoch,dis,rec,total
};

struct EpochLossRow {
  int epoch = 0;
  double dis = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

struct PRNetTrainResult {
  NetworkSpec spec;
  ModelParams params;
  double r = 0.0;  // resolved offset bound actually used
  std::vector<EpochLossRow> log;
};

PRNetTrainResult train_prnet(const std::vector<Volume3>& volumes, const PRNetConfig& cfg,
                             const PRNetTrainConfig& tcfg);

}  // namespace oneshot
