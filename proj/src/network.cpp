#include "oneshot/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace oneshot {

using nlohmann::json;

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Downsample2: return "downsample2";
    case LayerKind::Upsample2: return "upsample2";
    case LayerKind::Dense: return "dense";
    case LayerKind::TanhScale: return "tanh_scale";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (LayerKind k : {LayerKind::Conv3d, LayerKind::LeakyRelu, LayerKind::Downsample2,
                      LayerKind::Upsample2, LayerKind::Dense, LayerKind::TanhScale,
                      LayerKind::GlobalAvgPool, LayerKind::Sigmoid})
    if (name == layer_kind_name(k)) return k;
  throw std::invalid_argument("unknown layer kind: " + name);
}

namespace {

[[noreturn]] void layer_error(int idx, LayerKind kind, const std::string& msg) {
  throw std::runtime_error("layer " + std::to_string(idx) + " (" + layer_kind_name(kind) +
                           "): " + msg);
}

// ---------------------------------------------------------------------------
// conv3d kernels (C,D,H,W layout, cubic kernel, zero padding)
// ---------------------------------------------------------------------------

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void conv3d_fwd(const double* in, int Ci, int D, int H, int W, const double* wt,
                const double* bias, int Co, int k, int stride, int pad, double* out, int Do,
                int Ho, int Wo) {
  const std::size_t out_sp = std::size_t(Do) * Ho * Wo;
  for (int co = 0; co < Co; ++co)
    std::fill(out + co * out_sp, out + (co + 1) * out_sp, bias[co]);

  if (stride == 1) {
    for (int co = 0; co < Co; ++co) {
      double* outc = out + co * out_sp;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* inc = in + std::size_t(ci) * D * H * W;
        const double* wcc = wt + (std::size_t(co) * Ci + ci) * k * k * k;
        for (int kz = 0; kz < k; ++kz) {
          const int z_lo = std::max(0, pad - kz), z_hi = std::min(Do, D + pad - kz);
          for (int kx = 0; kx < k; ++kx) {
            const int x_lo = std::max(0, pad - kx), x_hi = std::min(Ho, H + pad - kx);
            for (int ky = 0; ky < k; ++ky) {
              const double wv = wcc[(kz * k + kx) * k + ky];
              const int y_lo = std::max(0, pad - ky), y_hi = std::min(Wo, W + pad - ky);
              const int sh = ky - pad;
              for (int z = z_lo; z < z_hi; ++z) {
                const std::size_t zi = std::size_t(z + kz - pad);
                for (int x = x_lo; x < x_hi; ++x) {
                  const double* row = inc + (zi * H + (x + kx - pad)) * W;
                  double* orow = outc + (std::size_t(z) * Ho + x) * Wo;
                  for (int y = y_lo; y < y_hi; ++y) orow[y] += wv * row[y + sh];
                }
              }
            }
          }
        }
      }
    }
    return;
  }

  for (int co = 0; co < Co; ++co) {
    double* outc = out + co * out_sp;
    for (int ci = 0; ci < Ci; ++ci) {
      const double* inc = in + std::size_t(ci) * D * H * W;
      const double* wcc = wt + (std::size_t(co) * Ci + ci) * k * k * k;
      for (int z = 0; z < Do; ++z)
        for (int x = 0; x < Ho; ++x)
          for (int y = 0; y < Wo; ++y) {
            double acc = 0.0;
            for (int kz = 0; kz < k; ++kz) {
              const int zi = z * stride + kz - pad;
              if (zi < 0 || zi >= D) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int xi = x * stride + kx - pad;
                if (xi < 0 || xi >= H) continue;
                for (int ky = 0; ky < k; ++ky) {
                  const int yi = y * stride + ky - pad;
                  if (yi < 0 || yi >= W) continue;
                  acc += wcc[(kz * k + kx) * k + ky] * inc[(std::size_t(zi) * H + xi) * W + yi];
                }
              }
            }
            outc[(std::size_t(z) * Ho + x) * Wo + y] += acc;
          }
    }
  }
}

void conv3d_bwd(const double* in, int Ci, int D, int H, int W, const double* wt, int Co, int k,
                int stride, int pad, const double* dout, int Do, int Ho, int Wo, double* din,
                double* dwt, double* dbias) {
  const std::size_t out_sp = std::size_t(Do) * Ho * Wo;
  for (int co = 0; co < Co; ++co) {
    const double* doc = dout + co * out_sp;
    double acc = 0.0;
    for (std::size_t i = 0; i < out_sp; ++i) acc += doc[i];
    dbias[co] += acc;
  }

  if (stride == 1) {
    for (int co = 0; co < Co; ++co) {
      const double* doc = dout + co * out_sp;
      for (int ci = 0; ci < Ci; ++ci) {
        const double* inc = in + std::size_t(ci) * D * H * W;
        double* dinc = din + std::size_t(ci) * D * H * W;
        const double* wcc = wt + (std::size_t(co) * Ci + ci) * k * k * k;
        double* dwcc = dwt + (std::size_t(co) * Ci + ci) * k * k * k;
        for (int kz = 0; kz < k; ++kz) {
          const int z_lo = std::max(0, pad - kz), z_hi = std::min(Do, D + pad - kz);
          for (int kx = 0; kx < k; ++kx) {
            const int x_lo = std::max(0, pad - kx), x_hi = std::min(Ho, H + pad - kx);
            for (int ky = 0; ky < k; ++ky) {
              const double wv = wcc[(kz * k + kx) * k + ky];
              const int y_lo = std::max(0, pad - ky), y_hi = std::min(Wo, W + pad - ky);
              const int sh = ky - pad;
              double wacc = 0.0;
              for (int z = z_lo; z < z_hi; ++z) {
                const std::size_t zi = std::size_t(z + kz - pad);
                for (int x = x_lo; x < x_hi; ++x) {
                  const std::size_t in_off = (zi * H + (x + kx - pad)) * W;
                  const double* row = inc + in_off;
                  double* drow = dinc + in_off;
                  const double* dorow = doc + (std::size_t(z) * Ho + x) * Wo;
                  for (int y = y_lo; y < y_hi; ++y) {
                    wacc += dorow[y] * row[y + sh];
                    drow[y + sh] += wv * dorow[y];
                  }
                }
              }
              dwcc[(kz * k + kx) * k + ky] += wacc;
            }
          }
        }
      }
    }
    return;
  }

  for (int co = 0; co < Co; ++co) {
    const double* doc = dout + co * out_sp;
    for (int ci = 0; ci < Ci; ++ci) {
      const double* inc = in + std::size_t(ci) * D * H * W;
      double* dinc = din + std::size_t(ci) * D * H * W;
      const double* wcc = wt + (std::size_t(co) * Ci + ci) * k * k * k;
      double* dwcc = dwt + (std::size_t(co) * Ci + ci) * k * k * k;
      for (int z = 0; z < Do; ++z)
        for (int x = 0; x < Ho; ++x)
          for (int y = 0; y < Wo; ++y) {
            const double g = doc[(std::size_t(z) * Ho + x) * Wo + y];
            if (g == 0.0) continue;
            for (int kz = 0; kz < k; ++kz) {
              const int zi = z * stride + kz - pad;
              if (zi < 0 || zi >= D) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int xi = x * stride + kx - pad;
                if (xi < 0 || xi >= H) continue;
                for (int ky = 0; ky < k; ++ky) {
                  const int yi = y * stride + ky - pad;
                  if (yi < 0 || yi >= W) continue;
                  const std::size_t ii = (std::size_t(zi) * H + xi) * W + yi;
                  dwcc[(kz * k + kx) * k + ky] += g * inc[ii];
                  dinc[ii] += g * wcc[(kz * k + kx) * k + ky];
                }
              }
            }
          }
    }
  }
}

// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b, int idx, LayerKind kind) {
  if (a.rank() != 4 || b.rank() != 4) layer_error(idx, kind, "skip concat needs rank-4 tensors");
  for (int d = 1; d < 4; ++d)
    if (a.shape[d] != b.shape[d])
      layer_error(idx, kind,
                  "skip concat spatial mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

Tensor apply_layer(const LayerSpec& L, const std::vector<Tensor>& P, const Tensor& x, int idx) {
  switch (L.kind) {
    case LayerKind::Conv3d: {
      if (x.rank() != 4) layer_error(idx, L.kind, "expected rank-4 input, got " + x.shape_str());
      if (x.shape[0] != L.in_ch)
        layer_error(idx, L.kind,
                    "expected " + std::to_string(L.in_ch) + " input channels, got " +
                        std::to_string(x.shape[0]));
      const int D = x.shape[1], H = x.shape[2], W = x.shape[3];
      const int Do = conv_out_dim(D, L.kernel, L.stride, L.pad);
      const int Ho = conv_out_dim(H, L.kernel, L.stride, L.pad);
      const int Wo = conv_out_dim(W, L.kernel, L.stride, L.pad);
      if (Do < 1 || Ho < 1 || Wo < 1) layer_error(idx, L.kind, "output collapses to empty");
      Tensor out({L.out_ch, Do, Ho, Wo});
      conv3d_fwd(x.ptr(), L.in_ch, D, H, W, P[0].ptr(), P[1].ptr(), L.out_ch, L.kernel, L.stride,
                 L.pad, out.ptr(), Do, Ho, Wo);
      return out;
    }
    case LayerKind::LeakyRelu: {
      Tensor out = x;
      for (double& v : out.data)
        if (v < 0.0) v *= L.slope;
      return out;
    }
    case LayerKind::Downsample2: {
      if (x.rank() != 4) layer_error(idx, L.kind, "expected rank-4 input, got " + x.shape_str());
      const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
      if (D % 2 || H % 2 || W % 2)
        layer_error(idx, L.kind, "spatial dims must be even, got " + x.shape_str());
      Tensor out({C, D / 2, H / 2, W / 2});
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < D / 2; ++z)
          for (int xx = 0; xx < H / 2; ++xx)
            for (int y = 0; y < W / 2; ++y) {
              double acc = 0.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int c2 = 0; c2 < 2; ++c2)
                    acc += x.data[((std::size_t(c) * D + 2 * z + a) * H + 2 * xx + b) * W + 2 * y +
                                  c2];
              out.data[((std::size_t(c) * (D / 2) + z) * (H / 2) + xx) * (W / 2) + y] = acc / 8.0;
            }
      return out;
    }
    case LayerKind::Upsample2: {
      if (x.rank() != 4) layer_error(idx, L.kind, "expected rank-4 input, got " + x.shape_str());
      const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
      Tensor out({C, 2 * D, 2 * H, 2 * W});
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
          for (int xx = 0; xx < H; ++xx)
            for (int y = 0; y < W; ++y) {
              const double v = x.data[((std::size_t(c) * D + z) * H + xx) * W + y];
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int c2 = 0; c2 < 2; ++c2)
                    out.data[((std::size_t(c) * 2 * D + 2 * z + a) * 2 * H + 2 * xx + b) * 2 * W +
                             2 * y + c2] = v;
            }
      return out;
    }
    case LayerKind::Dense: {
      if (x.rank() != 1 || x.shape[0] != L.in_dim)
        layer_error(idx, L.kind,
                    "expected rank-1 input of length " + std::to_string(L.in_dim) + ", got " +
                        x.shape_str());
      Tensor out({L.out_dim});
      for (int o = 0; o < L.out_dim; ++o) {
        double acc = P[1].data[o];
        const double* wr = P[0].ptr() + std::size_t(o) * L.in_dim;
        for (int i = 0; i < L.in_dim; ++i) acc += wr[i] * x.data[i];
        out.data[o] = acc;
      }
      return out;
    }
    case LayerKind::TanhScale: {
      Tensor out = x;
      for (double& v : out.data) v = L.scale * std::tanh(v);
      return out;
    }
    case LayerKind::GlobalAvgPool: {
      if (x.rank() != 4) layer_error(idx, L.kind, "expected rank-4 input, got " + x.shape_str());
      const int C = x.shape[0];
      const std::size_t sp = x.numel() / C;
      Tensor out({C});
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* p = x.ptr() + c * sp;
        for (std::size_t i = 0; i < sp; ++i) acc += p[i];
        out.data[c] = acc / double(sp);
      }
      return out;
    }
    case LayerKind::Sigmoid: {
      Tensor out = x;
      for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }
  }
  layer_error(idx, L.kind, "unhandled kind");
}

struct LayerBack {
  std::vector<Tensor> dparams;
  Tensor dinput;
};

LayerBack layer_backward(const LayerSpec& L, const std::vector<Tensor>& P, const Tensor& x,
                         const Tensor& y, const Tensor& g, int idx) {
  if (!g.same_shape(y)) layer_error(idx, L.kind, "output grad shape mismatch");
  LayerBack out;
  out.dinput = Tensor::zeros(x.shape);
  switch (L.kind) {
    case LayerKind::Conv3d: {
      out.dparams = {Tensor::zeros(P[0].shape), Tensor::zeros(P[1].shape)};
      conv3d_bwd(x.ptr(), L.in_ch, x.shape[1], x.shape[2], x.shape[3], P[0].ptr(), L.out_ch,
                 L.kernel, L.stride, L.pad, g.ptr(), y.shape[1], y.shape[2], y.shape[3],
                 out.dinput.ptr(), out.dparams[0].ptr(), out.dparams[1].ptr());
      break;
    }
    case LayerKind::LeakyRelu: {
      for (std::size_t i = 0; i < x.data.size(); ++i)
        out.dinput.data[i] = g.data[i] * (x.data[i] > 0.0 ? 1.0 : L.slope);
      break;
    }
    case LayerKind::Downsample2: {
      const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < D / 2; ++z)
          for (int xx = 0; xx < H / 2; ++xx)
            for (int y = 0; y < W / 2; ++y) {
              const double gv =
                  g.data[((std::size_t(c) * (D / 2) + z) * (H / 2) + xx) * (W / 2) + y] / 8.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int c2 = 0; c2 < 2; ++c2)
                    out.dinput.data[((std::size_t(c) * D + 2 * z + a) * H + 2 * xx + b) * W +
                                    2 * y + c2] = gv;
            }
      break;
    }
    case LayerKind::Upsample2: {
      const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
          for (int xx = 0; xx < H; ++xx)
            for (int y = 0; y < W; ++y) {
              double acc = 0.0;
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  for (int c2 = 0; c2 < 2; ++c2)
                    acc += g.data[((std::size_t(c) * 2 * D + 2 * z + a) * 2 * H + 2 * xx + b) * 2 *
                                      W +
                                  2 * y + c2];
              out.dinput.data[((std::size_t(c) * D + z) * H + xx) * W + y] = acc;
            }
      break;
    }
    case LayerKind::Dense: {
      out.dparams = {Tensor::zeros(P[0].shape), Tensor::zeros(P[1].shape)};
      for (int o = 0; o < L.out_dim; ++o) {
        const double go = g.data[o];
        out.dparams[1].data[o] = go;
        double* dwr = out.dparams[0].ptr() + std::size_t(o) * L.in_dim;
        const double* wr = P[0].ptr() + std::size_t(o) * L.in_dim;
        for (int i = 0; i < L.in_dim; ++i) {
          dwr[i] = go * x.data[i];
          out.dinput.data[i] += go * wr[i];
        }
      }
      break;
    }
    case LayerKind::TanhScale: {
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double t = y.data[i] / L.scale;
        out.dinput.data[i] = g.data[i] * L.scale * (1.0 - t * t);
      }
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const int C = x.shape[0];
      const std::size_t sp = x.numel() / C;
      for (int c = 0; c < C; ++c) {
        const double gv = g.data[c] / double(sp);
        double* p = out.dinput.ptr() + c * sp;
        for (std::size_t i = 0; i < sp; ++i) p[i] = gv;
      }
      break;
    }
    case LayerKind::Sigmoid: {
      for (std::size_t i = 0; i < x.data.size(); ++i)
        out.dinput.data[i] = g.data[i] * y.data[i] * (1.0 - y.data[i]);
      break;
    }
  }
  return out;
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_shape.empty()) throw std::invalid_argument("NetworkSpec: empty input shape");
  std::map<std::string, int> taps;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& L = layers[i];
    auto check_ref = [&](const std::string& name, const char* what) {
      if (name.empty()) return;
      auto it = taps.find(name);
      if (it == taps.end())
        throw std::invalid_argument("NetworkSpec: layer " + std::to_string(i) + " " + what +
                                    " references unknown tap '" + name + "'");
    };
    check_ref(L.input, "input");
    check_ref(L.skip_from, "skip_from");
    switch (L.kind) {
      case LayerKind::Conv3d:
        if (L.in_ch < 1 || L.out_ch < 1 || L.kernel < 1 || L.stride < 1 || L.pad < 0)
          throw std::invalid_argument("NetworkSpec: bad conv3d parameters at layer " +
                                      std::to_string(i));
        break;
      case LayerKind::Dense:
        if (L.in_dim < 1 || L.out_dim < 1)
          throw std::invalid_argument("NetworkSpec: bad dense dims at layer " + std::to_string(i));
        break;
      case LayerKind::TanhScale:
        if (L.scale == 0.0)
          throw std::invalid_argument("NetworkSpec: tanh_scale with zero scale at layer " +
                                      std::to_string(i));
        break;
      default:
        break;
    }
    if (!L.tap.empty()) {
      if (taps.count(L.tap))
        throw std::invalid_argument("NetworkSpec: duplicate tap name '" + L.tap + "'");
      taps[L.tap] = static_cast<int>(i);
    }
  }
  for (const auto& o : outputs)
    if (!taps.count(o))
      throw std::invalid_argument("NetworkSpec: output '" + o + "' is not a tap");
}

int NetworkSpec::tap_layer(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].tap == name) return static_cast<int>(i);
  return -1;
}

std::size_t ModelParams::total_count() const {
  std::size_t n = 0;
  for (const auto& lp : layers)
    for (const auto& t : lp) n += t.numel();
  return n;
}

ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.init_seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& L : spec.layers) {
    std::vector<Tensor> lp;
    if (L.kind == LayerKind::Conv3d) {
      const double fan_in = double(L.in_ch) * L.kernel * L.kernel * L.kernel;
      const double lim = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> u(-lim, lim);
      Tensor w({L.out_ch, L.in_ch, L.kernel, L.kernel, L.kernel});
      for (double& v : w.data) v = u(rng);
      lp.push_back(std::move(w));
      lp.push_back(Tensor({L.out_ch}));
    } else if (L.kind == LayerKind::Dense) {
      const double lim = std::sqrt(6.0 / double(L.in_dim));
      std::uniform_real_distribution<double> u(-lim, lim);
      Tensor w({L.out_dim, L.in_dim});
      for (double& v : w.data) v = u(rng);
      lp.push_back(std::move(w));
      lp.push_back(Tensor({L.out_dim}));
    }
    p.layers.push_back(std::move(lp));
  }
  return p;
}

ForwardResult forward(const NetworkSpec& spec, const ModelParams& params, const Tensor& input) {
  spec.validate();
  if (params.layers.size() != spec.layers.size())
    throw std::invalid_argument("forward: params do not match spec");
  if (input.shape != spec.input_shape)
    throw std::runtime_error("forward: network input shape " + input.shape_str() +
                             " does not match spec");

  ForwardResult res;
  res.cache.spec = &spec;
  res.cache.params = &params;
  res.cache.input = input;
  res.cache.layer_out.resize(spec.layers.size());
  res.cache.concat_in.resize(spec.layers.size());

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& L = spec.layers[i];
    const Tensor* src = nullptr;
    if (L.input.empty()) {
      src = (i == 0) ? &res.cache.input : &res.cache.layer_out[i - 1];
    } else {
      src = &res.cache.layer_out[spec.tap_layer(L.input)];
    }
    const Tensor* x = src;
    if (!L.skip_from.empty()) {
      res.cache.concat_in[i] =
          concat_channels(*src, res.cache.layer_out[spec.tap_layer(L.skip_from)],
                          static_cast<int>(i), L.kind);
      x = &res.cache.concat_in[i];
    }
    res.cache.layer_out[i] = apply_layer(L, params.layers[i], *x, static_cast<int>(i));
    if (!L.tap.empty()) res.taps[L.tap] = res.cache.layer_out[i];
  }
  for (const auto& name : spec.outputs) res.outputs[name] = res.taps.at(name);
  return res;
}

void Gradients::accumulate(const Gradients& other) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (std::size_t j = 0; j < layers[i].size(); ++j) add_inplace(layers[i][j], other.layers[i][j]);
  add_inplace(input, other.input);
}

void Gradients::scale(double a) {
  for (auto& lp : layers)
    for (auto& t : lp) scale_inplace(t, a);
  scale_inplace(input, a);
}

bool Gradients::all_finite() const {
  for (const auto& lp : layers)
    for (const auto& t : lp)
      for (double v : t.data)
        if (!std::isfinite(v)) return false;
  for (double v : input.data)
    if (!std::isfinite(v)) return false;
  return true;
}

Gradients zero_gradients(const ModelParams& params, const Tensor& input_like) {
  Gradients g;
  g.input = Tensor::zeros(input_like.shape);
  for (const auto& lp : params.layers) {
    std::vector<Tensor> zl;
    for (const auto& t : lp) zl.push_back(Tensor::zeros(t.shape));
    g.layers.push_back(std::move(zl));
  }
  return g;
}

Gradients backward(const ForwardCache& cache, const std::map<std::string, Tensor>& output_grads) {
  const NetworkSpec& spec = *cache.spec;
  const ModelParams& params = *cache.params;
  const std::size_t L = spec.layers.size();

  std::vector<Tensor> grad(L);
  std::vector<char> has(L, 0);
  auto add_grad = [&](int li, const Tensor& g) {
    if (!has[li]) {
      grad[li] = g;
      has[li] = 1;
    } else {
      add_inplace(grad[li], g);
    }
  };

  for (const auto& [name, g] : output_grads) {
    const int li = spec.tap_layer(name);
    if (li < 0) throw std::invalid_argument("backward: unknown output tap '" + name + "'");
    if (!g.same_shape(cache.layer_out[li]))
      throw std::invalid_argument("backward: grad shape mismatch for tap '" + name + "'");
    add_grad(li, g);
  }

  Gradients out = zero_gradients(params, cache.input);
  for (int i = static_cast<int>(L) - 1; i >= 0; --i) {
    if (!has[i]) continue;
    const auto& spec_l = spec.layers[i];
    const Tensor* src = spec_l.input.empty()
                            ? (i == 0 ? &cache.input : &cache.layer_out[i - 1])
                            : &cache.layer_out[spec.tap_layer(spec_l.input)];
    const Tensor* x = spec_l.skip_from.empty() ? src : &cache.concat_in[i];

    LayerBack lb =
        layer_backward(spec_l, params.layers[i], *x, cache.layer_out[i], grad[i], i);
    out.layers[i] = std::move(lb.dparams);
    if (out.layers[i].empty())
      for (const auto& t : params.layers[i]) out.layers[i].push_back(Tensor::zeros(t.shape));

    Tensor din = std::move(lb.dinput);
    if (!spec_l.skip_from.empty()) {
      // Split the concat gradient back into the chain part and the skip part.
      const int skip_li = spec.tap_layer(spec_l.skip_from);
      const Tensor& skip_t = cache.layer_out[skip_li];
      const int src_ch = src->shape[0];
      Tensor dsrc({src_ch, src->shape[1], src->shape[2], src->shape[3]});
      Tensor dskip(skip_t.shape);
      std::copy(din.data.begin(), din.data.begin() + dsrc.data.size(), dsrc.data.begin());
      std::copy(din.data.begin() + dsrc.data.size(), din.data.end(), dskip.data.begin());
      add_grad(skip_li, dskip);
      din = std::move(dsrc);
    }
    if (spec_l.input.empty() && i == 0) {
      add_inplace(out.input, din);
    } else if (spec_l.input.empty()) {
      add_grad(i - 1, din);
    } else {
      add_grad(spec.tap_layer(spec_l.input), din);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

json layer_to_json(const LayerSpec& L) {
  json j;
  j["kind"] = layer_kind_name(L.kind);
  j["in_ch"] = L.in_ch;
  j["out_ch"] = L.out_ch;
  j["kernel"] = L.kernel;
  j["stride"] = L.stride;
  j["pad"] = L.pad;
  j["slope"] = L.slope;
  j["in_dim"] = L.in_dim;
  j["out_dim"] = L.out_dim;
  j["scale"] = L.scale;
  j["input"] = L.input;
  j["skip_from"] = L.skip_from;
  j["tap"] = L.tap;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec L;
  L.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  L.in_ch = j.at("in_ch").get<int>();
  L.out_ch = j.at("out_ch").get<int>();
  L.kernel = j.at("kernel").get<int>();
  L.stride = j.at("stride").get<int>();
  L.pad = j.at("pad").get<int>();
  L.slope = j.at("slope").get<double>();
  L.in_dim = j.at("in_dim").get<int>();
  L.out_dim = j.at("out_dim").get<int>();
  L.scale = j.at("scale").get<double>();
  L.input = j.at("input").get<std::string>();
  L.skip_from = j.at("skip_from").get<std::string>();
  L.tap = j.at("tap").get<std::string>();
  return L;
}

}  // namespace

void save_params(const std::string& path_prefix, const NetworkSpec& spec,
                 const ModelParams& params) {
  json j;
  j["format"] = "oneshot-params-v1";
  j["init_seed"] = params.init_seed;
  j["input_shape"] = spec.input_shape;
  j["outputs"] = spec.outputs;
  auto layers = json::array();
  for (const auto& L : spec.layers) layers.push_back(layer_to_json(L));
  j["layers"] = layers;

  auto pj = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto tensors = json::array();
    for (const auto& t : params.layers[i]) {
      tensors.push_back({{"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
      offset += t.numel();
    }
    pj.push_back({{"layer", i}, {"tensors", tensors}});
  }
  j["params"] = pj;

  std::ofstream mf(path_prefix + ".json");
  if (!mf) throw std::runtime_error("save_params: cannot write " + path_prefix + ".json");
  mf << j.dump(2) << "\n";

  std::ofstream bf(path_prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("save_params: cannot write " + path_prefix + ".bin");
  for (const auto& lp : params.layers)
    for (const auto& t : lp)
      bf.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

std::pair<NetworkSpec, ModelParams> load_params(const std::string& path_prefix) {
  std::ifstream mf(path_prefix + ".json");
  if (!mf) throw std::runtime_error("load_params: cannot read " + path_prefix + ".json");
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_params: malformed manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "oneshot-params-v1")
    throw std::runtime_error("load_params: unknown format in " + path_prefix + ".json");

  NetworkSpec spec;
  spec.input_shape = j.at("input_shape").get<std::vector<int>>();
  spec.outputs = j.at("outputs").get<std::vector<std::string>>();
  for (const auto& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
  spec.validate();

  ModelParams params;
  params.init_seed = j.at("init_seed").get<std::uint64_t>();
  std::ifstream bf(path_prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("load_params: cannot read " + path_prefix + ".bin");
  params.layers.resize(spec.layers.size());
  for (const auto& pj : j.at("params")) {
    const std::size_t li = pj.at("layer").get<std::size_t>();
    if (li >= params.layers.size()) throw std::runtime_error("load_params: bad layer index");
    for (const auto& tj : pj.at("tensors")) {
      Tensor t(tj.at("shape").get<std::vector<int>>());
      bf.seekg(static_cast<std::streamoff>(tj.at("offset").get<std::size_t>() * sizeof(double)));
      bf.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!bf) throw std::runtime_error("load_params: short read in " + path_prefix + ".bin");
      params.layers[li].push_back(std::move(t));
    }
  }
  return {std::move(spec), std::move(params)};
}

Tensor with_channel(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("with_channel: expected rank-3 tensor");
  Tensor out({1, t.shape[0], t.shape[1], t.shape[2]});
  out.data = t.data;
  return out;
}

}  // namespace oneshot
