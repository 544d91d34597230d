#include "oneshot/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "oneshot/metrics.hpp"
#include "oneshot/phantom.hpp"

namespace oneshot {

namespace {

constexpr double kCeClip = 1e-7;
constexpr double kDiceEps = 1e-5;

constexpr std::uint64_t kSegInitSalt = 0x5365674921ull;
constexpr std::uint64_t kSegSampleSalt = 0x5365675321ull;

int pow2(int n) { return 1 << n; }

}  // namespace

void SegConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("SegConfig: depth must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("SegConfig: base_channels must be >= 1");
  if (epochs < 1) throw std::invalid_argument("SegConfig: epochs must be >= 1");
  if (batch < 1 || steps_per_epoch < 1)
    throw std::invalid_argument("SegConfig: batch and steps_per_epoch must be >= 1");
  if (roi_margin < 0) throw std::invalid_argument("SegConfig: roi_margin must be >= 0");
  if (!(fg_crop_bias >= 0.0 && fg_crop_bias <= 1.0))
    throw std::invalid_argument("SegConfig: fg_crop_bias must lie in [0, 1]");
  const int div = pow2(depth);
  for (int a = 0; a < 3; ++a)
    if (crop_size[a] < div || crop_size[a] % div != 0)
      throw std::invalid_argument("SegConfig: crop_size must be a positive multiple of 2^depth");
  if (!(plc_initial > 0.5 && plc_initial <= 1.0))
    throw std::invalid_argument("SegConfig: plc_initial must lie in (0.5, 1]");
  if (!(plc_floor > 0.0 && plc_floor <= plc_initial))
    throw std::invalid_argument("SegConfig: plc_floor must lie in (0, plc_initial]");
  if (!(plc_decay > 0.0 && plc_decay <= 1.0))
    throw std::invalid_argument("SegConfig: plc_decay must lie in (0, 1]");
  if (plc_warmup_epochs < 0)
    throw std::invalid_argument("SegConfig: plc_warmup_epochs must be >= 0");
}

NetworkSpec build_unet_spec(const SegConfig& cfg) {
  cfg.validate();
  const auto ch = [&](int level) { return cfg.base_channels * pow2(level); };

  NetworkSpec spec;
  spec.input_shape = {1, cfg.crop_size[0], cfg.crop_size[1], cfg.crop_size[2]};

  const auto conv = [&](int in, int out, int kernel, int pad) {
    LayerSpec l;
    l.kind = LayerKind::Conv3d;
    l.in_ch = in;
    l.out_ch = out;
    l.kernel = kernel;
    l.stride = 1;
    l.pad = pad;
    return l;
  };
  const auto lrelu = [&] {
    LayerSpec l;
    l.kind = LayerKind::LeakyRelu;
    l.slope = cfg.leaky_slope;
    return l;
  };

  for (int i = 0; i < cfg.depth; ++i) {
    spec.layers.push_back(conv(i == 0 ? 1 : ch(i - 1), ch(i), 3, 1));
    spec.layers.push_back(lrelu());
    spec.layers.push_back(conv(ch(i), ch(i), 3, 1));
    LayerSpec act = lrelu();
    act.tap = "enc" + std::to_string(i);
    spec.layers.push_back(act);
    spec.layers.push_back({.kind = LayerKind::Downsample2});
  }

  spec.layers.push_back(conv(ch(cfg.depth - 1), ch(cfg.depth), 3, 1));
  spec.layers.push_back(lrelu());
  spec.layers.push_back(conv(ch(cfg.depth), ch(cfg.depth), 3, 1));
  spec.layers.push_back(lrelu());

  for (int i = cfg.depth - 1; i >= 0; --i) {
    spec.layers.push_back({.kind = LayerKind::Upsample2});
    LayerSpec merge = conv(ch(i + 1) + ch(i), ch(i), 3, 1);
    merge.skip_from = "enc" + std::to_string(i);
    spec.layers.push_back(merge);
    spec.layers.push_back(lrelu());
    spec.layers.push_back(conv(ch(i), ch(i), 3, 1));
    spec.layers.push_back(lrelu());
  }

  spec.layers.push_back(conv(ch(0), 1, 1, 0));
  LayerSpec head;
  head.kind = LayerKind::Sigmoid;
  head.tap = "prob";
  spec.layers.push_back(head);
  spec.outputs = {"prob"};
  spec.validate();
  return spec;
}

Tensor seg_forward(const SegConfig& cfg, const NetworkSpec& spec, const ModelParams& params,
                   const Tensor& crop) {
  if (crop.rank() != 4 || crop.shape[0] != 1)
    throw std::invalid_argument("seg_forward: crop must have shape (1,D,H,W)");
  const int div = pow2(cfg.depth);
  for (int a = 1; a <= 3; ++a)
    if (crop.shape[a] % div != 0)
      throw std::invalid_argument("seg_forward: crop " + crop.shape_str() +
                                  " not divisible by 2^depth = " + std::to_string(div));
  return forward(spec, params, crop).outputs.at("prob");
}

SegLoss seg_loss(const Tensor& probs, const Tensor& labels, Tensor* grad) {
  if (!probs.same_shape(labels))
    throw std::invalid_argument("seg_loss: probs " + probs.shape_str() + " vs labels " +
                                labels.shape_str());
  const std::size_t n = probs.numel();
  if (n == 0) throw std::invalid_argument("seg_loss: empty tensors");

  double ce = 0.0, sum_p = 0.0, sum_g = 0.0, sum_pg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.data[i];
    const double g = labels.data[i];
    const double pc = std::clamp(p, kCeClip, 1.0 - kCeClip);
    ce += -(g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc));
    sum_p += p;
    sum_g += g;
    sum_pg += p * g;
  }
  ce /= static_cast<double>(n);
  const double denom = sum_p + sum_g + kDiceEps;
  const double inter2 = 2.0 * sum_pg + kDiceEps;

  SegLoss out;
  out.ce = ce;
  out.dice = 1.0 - inter2 / denom;
  out.total = out.ce + out.dice;

  if (grad) {
    *grad = Tensor(probs.shape);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = probs.data[i];
      const double g = labels.data[i];
      double d = 0.0;
      if (p > kCeClip && p < 1.0 - kCeClip) d += (-g / p + (1.0 - g) / (1.0 - p)) * inv_n;
      d += inter2 / (denom * denom) - 2.0 * g / denom;
      grad->data[i] = d;
    }
  }
  return out;
}

PLCState plc_update_delta(const PLCState& s) {
  if (!(s.delta >= s.floor && s.delta <= s.initial))
    throw std::invalid_argument("plc_update_delta: delta outside [floor, initial]");
  PLCState out = s;
  out.delta = std::max(s.floor, s.delta * s.decay);
  return out;
}

double plc_delta_at(int epoch, double initial, double decay, double floor) {
  if (epoch < 0) throw std::invalid_argument("plc_delta_at: epoch must be >= 0");
  return std::max(floor, initial * std::pow(decay, epoch));
}

std::uint64_t plc_correct(const Volume3& probs, LabelGrid& labels, double delta) {
  if (probs.shape != labels.shape)
    throw std::invalid_argument("plc_correct: probability/label shape mismatch");
  if (!(delta > 0.5 && delta <= 1.0))
    throw std::invalid_argument("plc_correct: delta must lie in (0.5, 1]");
  std::uint64_t flips = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] > 1)
      throw std::invalid_argument("plc_correct: labels must be binary");
    const double p = probs.data[i];
    const std::uint8_t pred = p > 0.5 ? 1 : 0;
    const double q = std::max(p, 1.0 - p);
    if (pred != labels.labels[i] && q > delta) {
      labels.labels[i] = pred;
      ++flips;
    }
  }
  return flips;
}

namespace {

// Tile starts covering [lo, hi] with fixed-size windows kept inside [0, dim).
std::vector<int> tile_starts(int lo, int hi, int crop, int dim) {
  if (dim < crop) throw std::invalid_argument("predict_volume: volume smaller than crop");
  std::vector<int> out;
  int s = std::clamp(lo, 0, dim - crop);
  for (;;) {
    out.push_back(s);
    if (s + crop > hi) break;
    const int next = std::min(s + crop, dim - crop);
    if (next == s) break;
    s = next;
  }
  return out;
}

Tensor crop_tensor(const Volume3& v, const Coord3& start, const Shape3& size) {
  Tensor t({1, size[0], size[1], size[2]});
  std::size_t k = 0;
  for (int z = 0; z < size[0]; ++z)
    for (int x = 0; x < size[1]; ++x)
      for (int y = 0; y < size[2]; ++y)
        t.data[k++] = v.at(start[0] + z, start[1] + x, start[2] + y);
  return t;
}

Tensor crop_labels(const LabelGrid& g, const Coord3& start, const Shape3& size) {
  Tensor t({1, size[0], size[1], size[2]});
  std::size_t k = 0;
  for (int z = 0; z < size[0]; ++z)
    for (int x = 0; x < size[1]; ++x)
      for (int y = 0; y < size[2]; ++y)
        t.data[k++] = g.at(start[0] + z, start[1] + x, start[2] + y);
  return t;
}

}  // namespace

Volume3 predict_volume(const SegConfig& cfg, const NetworkSpec& spec, const ModelParams& params,
                       const Volume3& v, const Box3* roi) {
  Box3 box{{0, 0, 0}, {v.shape[0] - 1, v.shape[1] - 1, v.shape[2] - 1}};
  if (roi) box = *roi;
  Volume3 out;
  out.shape = v.shape;
  out.spacing = v.spacing;
  out.data.assign(v.data.size(), 0.0f);

  const auto zs = tile_starts(box.lo[0], box.hi[0], cfg.crop_size[0], v.shape[0]);
  const auto xs = tile_starts(box.lo[1], box.hi[1], cfg.crop_size[1], v.shape[1]);
  const auto ys = tile_starts(box.lo[2], box.hi[2], cfg.crop_size[2], v.shape[2]);
  for (int z0 : zs)
    for (int x0 : xs)
      for (int y0 : ys) {
        const Tensor in = crop_tensor(v, {z0, x0, y0}, cfg.crop_size);
        const Tensor probs = seg_forward(cfg, spec, params, in);
        std::size_t k = 0;
        for (int z = 0; z < cfg.crop_size[0]; ++z)
          for (int x = 0; x < cfg.crop_size[1]; ++x)
            for (int y = 0; y < cfg.crop_size[2]; ++y) {
              const double p = probs.data[k++];
              if (box.contains({z0 + z, x0 + x, y0 + y}))
                out.at(z0 + z, x0 + x, y0 + y) = static_cast<float>(p);
            }
      }
  return out;
}

LabelGrid threshold_mask(const Volume3& probs, double thr) {
  LabelGrid g(probs.shape);
  for (std::size_t i = 0; i < probs.data.size(); ++i) g.labels[i] = probs.data[i] > thr ? 1 : 0;
  return g;
}

SegTrainResult train_segmenter(const std::vector<Volume3>& volumes,
                               const std::vector<LabelGrid>& masks, const SegConfig& cfg,
                               const std::vector<LabelGrid>* gt,
                               const std::string& log_csv_path) {
  cfg.validate();
  if (volumes.empty()) throw std::invalid_argument("train_segmenter: need >= 1 training pair");
  if (masks.size() != volumes.size())
    throw std::invalid_argument("train_segmenter: volume/mask count mismatch");
  if (gt && gt->size() != volumes.size())
    throw std::invalid_argument("train_segmenter: volume/gt count mismatch");
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i].shape != masks[i].shape)
      throw std::invalid_argument("train_segmenter: volume/mask shape mismatch");
    for (int a = 0; a < 3; ++a)
      if (volumes[i].shape[a] < cfg.crop_size[a])
        throw std::invalid_argument("train_segmenter: volume smaller than crop_size");
    for (auto l : masks[i].labels)
      if (l > 1) throw std::invalid_argument("train_segmenter: masks must be binary");
  }

  SegTrainResult res;
  res.spec = build_unet_spec(cfg);
  res.params = init_params(res.spec, mix_seed(cfg.seed, kSegInitSalt));
  res.final_masks = masks;

  // Sampling boxes and foreground voxel lists are fixed up front (from the raw
  // pseudo masks) so PLC rewrites cannot shift what the sampler sees.
  std::vector<std::vector<std::uint32_t>> fg_voxels(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    if (m.count_label(1) > 0) {
      res.rois.push_back(crop_roi(m, 1, cfg.roi_margin));
      for (std::size_t k = 0; k < m.labels.size(); ++k)
        if (m.labels[k] == 1) fg_voxels[i].push_back(static_cast<std::uint32_t>(k));
    } else {
      res.rois.push_back(Box3{{0, 0, 0}, {m.shape[0] - 1, m.shape[1] - 1, m.shape[2] - 1}});
    }
  }

  AdamState adam = init_adam(res.params);
  std::mt19937_64 rng(mix_seed(cfg.seed, kSegSampleSalt));
  std::uniform_int_distribution<std::size_t> pick_vol(0, volumes.size() - 1);
  std::uniform_real_distribution<double> fg_bias(0.0, 1.0);

  PLCState plc;
  plc.delta = cfg.plc_initial;
  plc.initial = cfg.plc_initial;
  plc.decay = cfg.plc_decay;
  plc.floor = cfg.plc_floor;

  const Tensor input_like({1, cfg.crop_size[0], cfg.crop_size[1], cfg.crop_size[2]});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = adam_lr_at_epoch(cfg.adam, epoch);
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      Gradients grads = zero_gradients(res.params, input_like);
      for (int b = 0; b < cfg.batch; ++b) {
        const std::size_t vi = pick_vol(rng);
        const Box3& roi = res.rois[vi];
        // Crops center on a mask-foreground voxel most of the time (tiny
        // organs would otherwise drown in background cross entropy) and on a
        // uniform box voxel the rest, so pure-background tiles stay in play.
        Coord3 center;
        const bool on_fg = !fg_voxels[vi].empty() && fg_bias(rng) < cfg.fg_crop_bias;
        if (on_fg) {
          std::uniform_int_distribution<std::size_t> pick_fg(0, fg_voxels[vi].size() - 1);
          const std::uint32_t idx = fg_voxels[vi][pick_fg(rng)];
          const int W = masks[vi].shape[2], H = masks[vi].shape[1];
          center = {static_cast<int>(idx) / (W * H), (static_cast<int>(idx) / W) % H,
                    static_cast<int>(idx) % W};
        } else {
          for (int a = 0; a < 3; ++a) {
            std::uniform_int_distribution<int> pick_c(roi.lo[a], roi.hi[a]);
            center[a] = pick_c(rng);
          }
        }
        Coord3 start;
        for (int a = 0; a < 3; ++a)
          start[a] = std::clamp(center[a] - cfg.crop_size[a] / 2, 0,
                                volumes[vi].shape[a] - cfg.crop_size[a]);
        const Tensor in = crop_tensor(volumes[vi], start, cfg.crop_size);
        const Tensor lab = crop_labels(res.final_masks[vi], start, cfg.crop_size);
        ForwardResult fwd = forward(res.spec, res.params, in);
        Tensor gprob;
        const SegLoss L = seg_loss(fwd.outputs.at("prob"), lab, &gprob);
        if (!std::isfinite(L.total))
          throw std::runtime_error("train_segmenter: non-finite loss at epoch " +
                                   std::to_string(epoch));
        grads.accumulate(backward(fwd.cache, {{"prob", gprob}}));
        loss_sum += L.total;
      }
      grads.scale(1.0 / cfg.batch);
      adam_step(res.params, grads, adam, cfg.adam, lr);
    }

    SegEpochRow row;
    row.epoch = epoch;
    row.mean_loss = loss_sum / (cfg.steps_per_epoch * cfg.batch);
    row.lr = lr;

    const bool want_dice = gt != nullptr;
    const bool correct_now = cfg.plc_enabled && epoch >= cfg.plc_warmup_epochs;
    double dice_sum = 0.0;
    if (correct_now || want_dice) {
      std::uint64_t flips = 0;
      for (std::size_t vi = 0; vi < volumes.size(); ++vi) {
        const Volume3 probs =
            predict_volume(cfg, res.spec, res.params, volumes[vi], &res.rois[vi]);
        if (want_dice) dice_sum += dice_score(threshold_mask(probs), (*gt)[vi], 1);
        if (correct_now) flips += plc_correct(probs, res.final_masks[vi], plc.delta);
      }
      if (correct_now) {
        row.delta = plc.delta;
        row.flips = flips;
        plc.flip_history.push_back(flips);
        plc = plc_update_delta(plc);
      }
      if (want_dice) row.dice_vs_gt = dice_sum / volumes.size();
    }
    res.log.push_back(row);
  }

  if (!log_csv_path.empty()) {
    std::FILE* f = std::fopen(log_csv_path.c_str(), "w");
    if (!f) throw std::runtime_error("train_segmenter: cannot open " + log_csv_path);
    std::fprintf(f, "epoch,mean_loss,lr,delta,flips,dice_vs_gt\n");
    for (const auto& r : res.log)
      std::fprintf(f, "%d,%.17g,%.17g,%.17g,%llu,%.17g\n", r.epoch, r.mean_loss, r.lr, r.delta,
                   static_cast<unsigned long long>(r.flips), r.dice_vs_gt);
    std::fclose(f);
  }
  return res;
}

}  // namespace oneshot
