#include "oneshot/prnet.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "oneshot/phantom.hpp"  // mix_seed

namespace oneshot {

void PRNetConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (patch_size[a] < 16 || patch_size[a] % 16 != 0)
      throw std::invalid_argument(
          "PRNetConfig: patch_size must be a positive multiple of 16 per axis (4 halvings)");
  }
  for (int c : enc_channels)
    if (c < 1) throw std::invalid_argument("PRNetConfig: encoder channels must be positive");
  for (int c : dec_channels)
    if (c < 1) throw std::invalid_argument("PRNetConfig: decoder channels must be positive");
  if (head_width < 0) throw std::invalid_argument("PRNetConfig: negative head width");
  if (r < 0.0) throw std::invalid_argument("PRNetConfig: negative offset bound");
  if (m2_tap.empty() || m4_tap.empty() || m2_tap == m4_tap)
    throw std::invalid_argument("PRNetConfig: feature tap names must be distinct and non-empty");
}

NetworkSpec build_prnet_spec(const PRNetConfig& cfg) {
  cfg.validate();
  NetworkSpec spec;
  spec.input_shape = {1, cfg.patch_size[0], cfg.patch_size[1], cfg.patch_size[2]};

  auto conv = [](int in_ch, int out_ch) {
    LayerSpec l;
    l.kind = LayerKind::Conv3d;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    return l;
  };
  auto lrelu = [] {
    LayerSpec l;
    l.kind = LayerKind::LeakyRelu;
    return l;
  };

  int prev = 1;
  for (int b = 0; b < 4; ++b) {
    spec.layers.push_back(conv(prev, cfg.enc_channels[b]));
    spec.layers.push_back(lrelu());
    LayerSpec down;
    down.kind = LayerKind::Downsample2;
    if (b == 3) down.tap = "enc";
    spec.layers.push_back(down);
    prev = cfg.enc_channels[b];
  }

  LayerSpec gap;
  gap.kind = LayerKind::GlobalAvgPool;
  spec.layers.push_back(gap);
  if (cfg.head_width > 0) {
    LayerSpec h1;
    h1.kind = LayerKind::Dense;
    h1.in_dim = prev;
    h1.out_dim = cfg.head_width;
    spec.layers.push_back(h1);
    spec.layers.push_back(lrelu());
    LayerSpec h2;
    h2.kind = LayerKind::Dense;
    h2.in_dim = cfg.head_width;
    h2.out_dim = 3;
    h2.tap = "p";
    spec.layers.push_back(h2);
  } else {
    LayerSpec h;
    h.kind = LayerKind::Dense;
    h.in_dim = prev;
    h.out_dim = 3;
    h.tap = "p";
    spec.layers.push_back(h);
  }

  // Reconstruction decoder, branching off the bottleneck. The activation maps
  // after the 2nd and 4th upsampling are exposed for feature matching.
  int dprev = prev;
  for (int b = 0; b < 4; ++b) {
    LayerSpec up;
    up.kind = LayerKind::Upsample2;
    if (b == 0) up.input = "enc";
    spec.layers.push_back(up);
    spec.layers.push_back(conv(dprev, cfg.dec_channels[b]));
    LayerSpec act = lrelu();
    if (b == 1) act.tap = cfg.m2_tap;
    if (b == 3) act.tap = cfg.m4_tap;
    spec.layers.push_back(act);
    dprev = cfg.dec_channels[b];
  }
  LayerSpec out_conv = conv(dprev, 1);
  out_conv.tap = "recon";
  spec.layers.push_back(out_conv);

  spec.outputs = {"p", "recon", cfg.m2_tap, cfg.m4_tap};
  spec.validate();
  return spec;
}

namespace {

Tensor center_fiber(const Tensor& map) {
  const int C = map.shape[0], D = map.shape[1], H = map.shape[2], W = map.shape[3];
  Tensor f({C});
  const int cz = D / 2, cx = H / 2, cy = W / 2;
  for (int c = 0; c < C; ++c)
    f.data[c] = map.data[((std::size_t(c) * D + cz) * H + cx) * W + cy];
  return f;
}

Tensor squeeze_channel(const Tensor& t) {
  Tensor out({t.shape[1], t.shape[2], t.shape[3]});
  out.data = t.data;
  return out;
}

}  // namespace

PRNetOutput prnet_forward(const NetworkSpec& spec, const ModelParams& params,
                          const PRNetConfig& cfg, const Tensor& patch) {
  if (patch.rank() != 3 || patch.shape[0] != cfg.patch_size[0] ||
      patch.shape[1] != cfg.patch_size[1] || patch.shape[2] != cfg.patch_size[2])
    throw std::invalid_argument("prnet_forward: patch shape " + patch.shape_str() +
                                " does not match configured patch size");
  ForwardResult r = forward(spec, params, with_channel(patch));
  PRNetOutput out;
  const Tensor& p = r.outputs.at("p");
  out.p = {p.data[0], p.data[1], p.data[2]};
  out.recon = squeeze_channel(r.outputs.at("recon"));
  out.f2 = center_fiber(r.outputs.at(cfg.m2_tap));
  out.f4 = center_fiber(r.outputs.at(cfg.m4_tap));
  return out;
}

Vec3 gt_offset(const Coord3& c0, const Coord3& c1, const Vec3& e) {
  return {(c1[0] - c0[0]) * e[0], (c1[1] - c0[1]) * e[1], (c1[2] - c0[2]) * e[2]};
}

Vec3 pred_offset(const Vec3& p0, const Vec3& p1, double r) {
  if (r <= 0.0) throw std::invalid_argument("pred_offset: bound must be positive");
  Vec3 out;
  for (int k = 0; k < 3; ++k) {
    const double s = p0[k] - p1[k];
    // Odd symmetry is enforced explicitly (|s| then copysign) so that swapping
    // the arguments negates the result bit-exactly; the clamps keep the value
    // strictly inside (-r, r) even when rounding would saturate it.
    double a = std::tanh(std::fabs(s));
    if (a >= 1.0) a = std::nextafter(1.0, 0.0);
    double v = r * a;
    if (v >= r) v = std::nextafter(r, 0.0);
    out[k] = std::copysign(v, s);
  }
  return out;
}

SslLossParts ssl_loss(const PRNetOutput& out0, const PRNetOutput& out1, const Tensor& x0,
                      const Tensor& x1, const Vec3& d10, double r) {
  if (!out0.recon.same_shape(x0) || !out1.recon.same_shape(x1))
    throw std::invalid_argument("ssl_loss: reconstruction/patch shape mismatch");
  SslLossParts parts;
  const Vec3 d = pred_offset(out0.p, out1.p, r);
  for (int k = 0; k < 3; ++k) {
    const double err = d10[k] - d[k];
    parts.dis += err * err;
  }
  parts.dis /= 3.0;
  const double n = double(x0.numel());
  double rec = 0.0;
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    const double e0 = x0.data[i] - out0.recon.data[i];
    const double e1 = x1.data[i] - out1.recon.data[i];
    rec += e0 * e0 + e1 * e1;
  }
  parts.rec = rec / n;
  parts.total = parts.dis + parts.rec;
  return parts;
}

double default_offset_bound(const std::vector<Volume3>& volumes) {
  if (volumes.empty()) throw std::invalid_argument("default_offset_bound: no volumes");
  double best = 0.0;
  for (const auto& v : volumes) {
    double sq = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double ext = v.shape[a] * v.spacing[a];
      sq += ext * ext;
    }
    best = std::max(best, std::sqrt(sq));
  }
  return best;
}

namespace {

struct PairResult {
  SslLossParts parts;
  std::map<std::string, Tensor> g0, g1;
};

// Loss and d(loss)/d(outputs) for one patch pair. Gradients flow into the
// coordinate tap and the reconstruction tap; the feature taps are unused by
// the SSL objective.
PairResult ssl_pair(const PRNetConfig& cfg, const ForwardResult& f0, const ForwardResult& f1,
                    const Tensor& x0c, const Tensor& x1c, const Vec3& d10, double r) {
  PairResult pr;
  const Tensor& p0 = f0.outputs.at("p");
  const Tensor& p1 = f1.outputs.at("p");
  PRNetOutput o0, o1;
  o0.p = {p0.data[0], p0.data[1], p0.data[2]};
  o1.p = {p1.data[0], p1.data[1], p1.data[2]};
  o0.recon = squeeze_channel(f0.outputs.at("recon"));
  o1.recon = squeeze_channel(f1.outputs.at("recon"));
  Tensor x0 = squeeze_channel(x0c), x1 = squeeze_channel(x1c);
  pr.parts = ssl_loss(o0, o1, x0, x1, d10, r);

  Tensor gp0({3}), gp1({3});
  const Vec3 dpred = pred_offset(o0.p, o1.p, r);
  for (int k = 0; k < 3; ++k) {
    const double t = std::tanh(o0.p[k] - o1.p[k]);
    const double dloss_dd = (2.0 / 3.0) * (dpred[k] - d10[k]);
    gp0.data[k] = dloss_dd * r * (1.0 - t * t);
    gp1.data[k] = -gp0.data[k];
  }
  const double n = double(x0.numel());
  Tensor gr0(f0.outputs.at("recon").shape), gr1(gr0.shape);
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    gr0.data[i] = (2.0 / n) * (o0.recon.data[i] - x0.data[i]);
    gr1.data[i] = (2.0 / n) * (o1.recon.data[i] - x1.data[i]);
  }
  pr.g0["p"] = gp0;
  pr.g0["recon"] = gr0;
  pr.g1["p"] = std::move(gp1);
  pr.g1["recon"] = std::move(gr1);
  return pr;
}

}  // namespace

PRNetTrainResult train_prnet(const std::vector<Volume3>& volumes, const PRNetConfig& cfg,
                             const PRNetTrainConfig& tcfg) {
  if (volumes.empty()) throw std::invalid_argument("train_prnet: no training volumes");
  if (tcfg.batch < 1 || tcfg.steps_per_epoch < 1 || tcfg.epochs < 1)
    throw std::invalid_argument("train_prnet: batch/steps/epochs must be positive");

  PRNetTrainResult res;
  res.spec = build_prnet_spec(cfg);
  res.r = cfg.r > 0.0 ? cfg.r : default_offset_bound(volumes);
  res.params = init_params(res.spec, mix_seed(tcfg.seed, 0x70526e65u));
  AdamState adam = init_adam(res.params);
  std::mt19937_64 rng(mix_seed(tcfg.seed, 0x53534c62u));
  std::uniform_int_distribution<std::size_t> pick_vol(0, volumes.size() - 1);

  const Tensor zero_input = Tensor::zeros(res.spec.input_shape);
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = adam_lr_at_epoch(tcfg.adam, epoch);
    EpochLossRow row;
    row.epoch = epoch;
    for (int step = 0; step < tcfg.steps_per_epoch; ++step) {
      Gradients acc = zero_gradients(res.params, zero_input);
      SslLossParts step_parts;
      for (int b = 0; b < tcfg.batch; ++b) {
        const Volume3& vol = volumes[pick_vol(rng)];
        Coord3 c0, c1;
        for (int a = 0; a < 3; ++a) {
          std::uniform_int_distribution<int> u(0, vol.shape[a] - 1);
          c0[a] = u(rng);
          c1[a] = u(rng);
        }
        const Tensor x0 = with_channel(crop_patch(vol, c0, cfg.patch_size));
        const Tensor x1 = with_channel(crop_patch(vol, c1, cfg.patch_size));
        ForwardResult f0 = forward(res.spec, res.params, x0);
        ForwardResult f1 = forward(res.spec, res.params, x1);
        // The coordinate head is trained so that r*tanh(p(a)-p(b)) matches the
        // physical offset from b to a; the teacher therefore measures c1->c0.
        const Vec3 d10 = gt_offset(c1, c0, vol.spacing);
        PairResult pr = ssl_pair(cfg, f0, f1, x0, x1, d10, res.r);
        if (!std::isfinite(pr.parts.total))
          throw std::runtime_error("train_prnet: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(step));
        step_parts.dis += pr.parts.dis;
        step_parts.rec += pr.parts.rec;
        step_parts.total += pr.parts.total;
        acc.accumulate(backward(f0.cache, pr.g0));
        acc.accumulate(backward(f1.cache, pr.g1));
      }
      acc.scale(1.0 / tcfg.batch);
      adam_step(res.params, acc, adam, tcfg.adam, lr);
      row.dis += step_parts.dis / tcfg.batch;
      row.rec += step_parts.rec / tcfg.batch;
      row.total += step_parts.total / tcfg.batch;
    }
    row.dis /= tcfg.steps_per_epoch;
    row.rec /= tcfg.steps_per_epoch;
    row.total /= tcfg.steps_per_epoch;
    res.log.push_back(row);
  }

  if (!tcfg.log_csv_path.empty()) {
    std::ofstream f(tcfg.log_csv_path);
    if (!f) throw std::runtime_error("train_prnet: cannot write " + tcfg.log_csv_path);
    f << "epoch,dis,rec,total\n";
    char buf[160];
    for (const auto& row : res.log) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", row.epoch, row.dis, row.rec,
                    row.total);
      f << buf;
    }
  }
  return res;
}

}  // namespace oneshot
