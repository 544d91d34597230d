#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oneshot/adam.hpp"
#include "oneshot/gradcheck.hpp"
#include "oneshot/network.hpp"

using namespace oneshot;

namespace {

// Independent convolution oracle: direct gather over the definition, no shared
// loop structure with the engine's shifted-row implementation.
Tensor conv3d_oracle(const Tensor& in, const Tensor& w, const Tensor& b, int k, int stride,
                     int pad) {
  const int Ci = in.shape[0], D = in.shape[1], H = in.shape[2], W = in.shape[3];
  const int Co = w.shape[0];
  const int Do = (D + 2 * pad - k) / stride + 1;
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({Co, Do, Ho, Wo});
  for (int co = 0; co < Co; ++co)
    for (int z = 0; z < Do; ++z)
      for (int x = 0; x < Ho; ++x)
        for (int y = 0; y < Wo; ++y) {
          double acc = b.data[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int kz = 0; kz < k; ++kz)
              for (int kx = 0; kx < k; ++kx)
                for (int ky = 0; ky < k; ++ky) {
                  const int zi = z * stride + kz - pad;
                  const int xi = x * stride + kx - pad;
                  const int yi = y * stride + ky - pad;
                  if (zi < 0 || zi >= D || xi < 0 || xi >= H || yi < 0 || yi >= W) continue;
                  acc += w.data[(((std::size_t(co) * Ci + ci) * k + kz) * k + kx) * k + ky] *
                         in.data[((std::size_t(ci) * D + zi) * H + xi) * W + yi];
                }
          out.data[((std::size_t(co) * Do + z) * Ho + x) * Wo + y] = acc;
        }
  return out;
}

Tensor random_tensor(const std::vector<int>& shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data) v = u(rng);
  return t;
}

// Random tensor with |value| >= floor, to keep activations away from the
// leaky-relu kink during finite differencing.
Tensor random_tensor_away_from_zero(const std::vector<int>& shape, std::mt19937_64& rng,
                                    double floor_mag = 0.05) {
  Tensor t = random_tensor(shape, rng);
  for (double& v : t.data)
    if (std::abs(v) < floor_mag) v = v < 0.0 ? -floor_mag : floor_mag;
  return t;
}

// Loss = sum_i w_i * out_i with fixed pseudo-random weights, so every output
// entry carries gradient. Weights drawn once per construction.
LossFn weighted_sum_loss(const NetworkSpec& spec, const ModelParams& params, const Tensor& input,
                         std::uint64_t seed) {
  ForwardResult probe = forward(spec, params, input);
  std::map<std::string, Tensor> weights;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& [name, t] : probe.outputs) {
    Tensor w(t.shape);
    for (double& v : w.data) v = u(rng);
    weights[name] = w;
  }
  return [weights](const std::map<std::string, Tensor>& outputs,
                   std::map<std::string, Tensor>* grads) {
    double total = 0.0;
    for (const auto& [name, w] : weights) {
      const Tensor& o = outputs.at(name);
      for (std::size_t i = 0; i < o.data.size(); ++i) total += w.data[i] * o.data[i];
      if (grads) (*grads)[name] = w;
    }
    return total;
  };
}

NetworkSpec single_layer_spec(LayerSpec layer, std::vector<int> input_shape) {
  layer.tap = "out";
  NetworkSpec s;
  s.input_shape = std::move(input_shape);
  s.layers = {layer};
  s.outputs = {"out"};
  return s;
}

double fd_check_layer(LayerSpec layer, std::vector<int> input_shape, std::uint64_t seed,
                      bool check_input) {
  NetworkSpec spec = single_layer_spec(std::move(layer), input_shape);
  ModelParams params = init_params(spec, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  Tensor input = random_tensor_away_from_zero(spec.input_shape, rng);
  LossFn loss = weighted_sum_loss(spec, params, input, seed + 1);
  GradCheckReport rep = finite_diff_check(spec, params, input, loss, 48, 1e-3, seed + 2,
                                          check_input);
  return rep.max_rel_err;
}

}  // namespace

TEST_CASE("tensor shape/data invariant enforced") {
  CHECK_THROWS(Tensor({2, 3}, {1.0, 2.0}));  // 2*3 != 2
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.data.size() == 6);
}

TEST_CASE("dense layer with identity weights reproduces input") {
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = d.out_dim = 4;
  NetworkSpec spec = single_layer_spec(d, {4});
  ModelParams params = init_params(spec, 1);
  for (double& v : params.layers[0][0].data) v = 0.0;
  for (int i = 0; i < 4; ++i) params.layers[0][0].data[i * 4 + i] = 1.0;
  std::mt19937_64 rng(7);
  Tensor in = random_tensor({4}, rng);
  ForwardResult r = forward(spec, params, in);
  for (int i = 0; i < 4; ++i) CHECK(r.outputs.at("out").data[i] == in.data[i]);
}

TEST_CASE("conv3d with all-zero kernel gives all-zero output") {
  LayerSpec c;
  c.kind = LayerKind::Conv3d;
  c.in_ch = 2;
  c.out_ch = 3;
  NetworkSpec spec = single_layer_spec(c, {2, 4, 4, 4});
  ModelParams params = init_params(spec, 2);
  for (auto& t : params.layers[0])
    for (double& v : t.data) v = 0.0;
  std::mt19937_64 rng(8);
  Tensor in = random_tensor({2, 4, 4, 4}, rng);
  ForwardResult r = forward(spec, params, in);
  for (double v : r.outputs.at("out").data) CHECK(v == 0.0);
}

TEST_CASE("upsample2 repeats every value eight times") {
  LayerSpec u;
  u.kind = LayerKind::Upsample2;
  NetworkSpec spec = single_layer_spec(u, {3, 2, 2, 2});
  ModelParams params = init_params(spec, 3);
  std::mt19937_64 rng(9);
  Tensor in = random_tensor({3, 2, 2, 2}, rng);
  ForwardResult r = forward(spec, params, in);
  const Tensor& out = r.outputs.at("out");
  REQUIRE(out.shape == std::vector<int>{3, 4, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < 4; ++z)
      for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
          CHECK(out.data[((std::size_t(c) * 4 + z) * 4 + x) * 4 + y] ==
                in.data[((std::size_t(c) * 2 + z / 2) * 2 + x / 2) * 2 + y / 2]);
}

TEST_CASE("conv3d matches the direct-gather oracle") {
  std::mt19937_64 rng(42);
  struct Case {
    int ci, co, d, h, w, k, stride, pad;
  };
  for (const Case& cs : {Case{1, 1, 4, 4, 4, 3, 1, 1}, Case{2, 3, 5, 6, 7, 3, 1, 1},
                         Case{3, 2, 6, 6, 6, 3, 2, 1}, Case{2, 2, 5, 5, 5, 1, 1, 0},
                         Case{1, 2, 7, 5, 6, 3, 1, 0}, Case{2, 1, 8, 8, 8, 5, 2, 2}}) {
    LayerSpec c;
    c.kind = LayerKind::Conv3d;
    c.in_ch = cs.ci;
    c.out_ch = cs.co;
    c.kernel = cs.k;
    c.stride = cs.stride;
    c.pad = cs.pad;
    NetworkSpec spec = single_layer_spec(c, {cs.ci, cs.d, cs.h, cs.w});
    ModelParams params = init_params(spec, rng());
    Tensor in = random_tensor({cs.ci, cs.d, cs.h, cs.w}, rng);
    ForwardResult r = forward(spec, params, in);
    Tensor want = conv3d_oracle(in, params.layers[0][0], params.layers[0][1], cs.k, cs.stride,
                                cs.pad);
    REQUIRE(r.outputs.at("out").shape == want.shape);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(r.outputs.at("out").data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d is linear in its input") {
  LayerSpec c;
  c.kind = LayerKind::Conv3d;
  c.in_ch = 2;
  c.out_ch = 2;
  NetworkSpec spec = single_layer_spec(c, {2, 4, 4, 4});
  ModelParams params = init_params(spec, 5);
  for (double& v : params.layers[0][1].data) v = 0.0;  // bias breaks linearity, zero it
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({2, 4, 4, 4}, rng);
  Tensor y = random_tensor({2, 4, 4, 4}, rng);
  const double a = 0.7, b = -1.3;
  Tensor combo({2, 4, 4, 4});
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = a * x.data[i] + b * y.data[i];
  Tensor fx = forward(spec, params, x).outputs.at("out");
  Tensor fy = forward(spec, params, y).outputs.at("out");
  Tensor fc = forward(spec, params, combo).outputs.at("out");
  for (std::size_t i = 0; i < fc.data.size(); ++i)
    CHECK(std::abs(fc.data[i] - (a * fx.data[i] + b * fy.data[i])) < 1e-9);
}

TEST_CASE("forward is deterministic") {
  LayerSpec c;
  c.kind = LayerKind::Conv3d;
  c.in_ch = 1;
  c.out_ch = 2;
  NetworkSpec spec = single_layer_spec(c, {1, 4, 4, 4});
  ModelParams params = init_params(spec, 6);
  std::mt19937_64 rng(12);
  Tensor in = random_tensor({1, 4, 4, 4}, rng);
  Tensor a = forward(spec, params, in).outputs.at("out");
  Tensor b = forward(spec, params, in).outputs.at("out");
  CHECK(a.data == b.data);
}

TEST_CASE("dense sum-loss weight gradient equals broadcast input") {
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = 3;
  d.out_dim = 2;
  NetworkSpec spec = single_layer_spec(d, {3});
  ModelParams params = init_params(spec, 13);
  Tensor in({3}, {0.5, -1.0, 2.0});
  ForwardResult r = forward(spec, params, in);
  std::map<std::string, Tensor> og;
  og["out"] = Tensor({2}, {1.0, 1.0});  // loss = sum(out)
  Gradients g = backward(r.cache, og);
  // dW[o][i] = 1 * in[i] for both rows; dB = 1.
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i) CHECK(g.layers[0][0].data[o * 3 + i] == in.data[i]);
  CHECK(g.layers[0][1].data[0] == 1.0);
  CHECK(g.layers[0][1].data[1] == 1.0);
}

TEST_CASE("zero output grads give zero gradients") {
  LayerSpec c;
  c.kind = LayerKind::Conv3d;
  c.in_ch = 1;
  c.out_ch = 1;
  NetworkSpec spec = single_layer_spec(c, {1, 4, 4, 4});
  ModelParams params = init_params(spec, 14);
  std::mt19937_64 rng(15);
  Tensor in = random_tensor({1, 4, 4, 4}, rng);
  ForwardResult r = forward(spec, params, in);
  std::map<std::string, Tensor> og;
  og["out"] = Tensor::zeros(r.outputs.at("out").shape);
  Gradients g = backward(r.cache, og);
  for (const auto& lp : g.layers)
    for (const auto& t : lp)
      for (double v : t.data) CHECK(v == 0.0);
  for (double v : g.input.data) CHECK(v == 0.0);
}

TEST_CASE("finite differences validate every layer kind in isolation") {
  LayerSpec conv;
  conv.kind = LayerKind::Conv3d;
  conv.in_ch = 2;
  conv.out_ch = 3;
  CHECK(fd_check_layer(conv, {2, 4, 4, 4}, 101, false) < 1e-4);

  LayerSpec convs2;
  convs2.kind = LayerKind::Conv3d;
  convs2.in_ch = 2;
  convs2.out_ch = 2;
  convs2.stride = 2;
  CHECK(fd_check_layer(convs2, {2, 6, 6, 6}, 102, false) < 1e-4);

  LayerSpec lrelu;
  lrelu.kind = LayerKind::LeakyRelu;
  CHECK(fd_check_layer(lrelu, {2, 4, 4, 4}, 103, true) < 1e-4);

  LayerSpec down;
  down.kind = LayerKind::Downsample2;
  CHECK(fd_check_layer(down, {2, 4, 4, 4}, 104, true) < 1e-4);

  LayerSpec up;
  up.kind = LayerKind::Upsample2;
  CHECK(fd_check_layer(up, {2, 2, 2, 2}, 105, true) < 1e-4);

  LayerSpec dense;
  dense.kind = LayerKind::Dense;
  dense.in_dim = 6;
  dense.out_dim = 4;
  CHECK(fd_check_layer(dense, {6}, 106, false) < 1e-4);

  LayerSpec tanhs;
  tanhs.kind = LayerKind::TanhScale;
  tanhs.scale = 50.0;
  CHECK(fd_check_layer(tanhs, {5}, 107, true) < 1e-4);

  LayerSpec gap;
  gap.kind = LayerKind::GlobalAvgPool;
  CHECK(fd_check_layer(gap, {3, 4, 4, 4}, 108, true) < 1e-4);

  LayerSpec sig;
  sig.kind = LayerKind::Sigmoid;
  CHECK(fd_check_layer(sig, {2, 4, 4, 4}, 109, true) < 1e-4);
}

TEST_CASE("finite differences validate a skip-connected net") {
  // Small encoder/decoder with a channel concat, exercising tap routing and
  // the concat gradient split.
  NetworkSpec spec;
  spec.input_shape = {1, 4, 4, 4};
  LayerSpec c1;
  c1.kind = LayerKind::Conv3d;
  c1.in_ch = 1;
  c1.out_ch = 3;
  c1.tap = "enc";
  LayerSpec r1;
  r1.kind = LayerKind::LeakyRelu;
  LayerSpec d1;
  d1.kind = LayerKind::Downsample2;
  LayerSpec c2;
  c2.kind = LayerKind::Conv3d;
  c2.in_ch = 3;
  c2.out_ch = 3;
  LayerSpec u1;
  u1.kind = LayerKind::Upsample2;
  LayerSpec c3;
  c3.kind = LayerKind::Conv3d;
  c3.in_ch = 6;  // 3 chain + 3 skip
  c3.out_ch = 2;
  c3.skip_from = "enc";
  c3.tap = "out";
  spec.layers = {c1, r1, d1, c2, u1, c3};
  spec.outputs = {"out"};

  ModelParams params = init_params(spec, 777);
  std::mt19937_64 rng(778);
  Tensor input = random_tensor_away_from_zero(spec.input_shape, rng);
  LossFn loss = weighted_sum_loss(spec, params, input, 779);
  GradCheckReport rep = finite_diff_check(spec, params, input, loss, 64, 1e-3, 780, true);
  INFO("worst: " << rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("finite differences validate a two-output net") {
  // One trunk feeding two heads, as in the localizer (coordinate + recon).
  NetworkSpec spec;
  spec.input_shape = {1, 4, 4, 4};
  LayerSpec c1;
  c1.kind = LayerKind::Conv3d;
  c1.in_ch = 1;
  c1.out_ch = 2;
  c1.tap = "trunk";
  LayerSpec gap;
  gap.kind = LayerKind::GlobalAvgPool;
  LayerSpec d1;
  d1.kind = LayerKind::Dense;
  d1.in_dim = 2;
  d1.out_dim = 3;
  d1.tap = "head_a";
  LayerSpec c2;
  c2.kind = LayerKind::Conv3d;
  c2.in_ch = 2;
  c2.out_ch = 1;
  c2.input = "trunk";
  c2.tap = "head_b";
  spec.layers = {c1, gap, d1, c2};
  spec.outputs = {"head_a", "head_b"};

  ModelParams params = init_params(spec, 881);
  std::mt19937_64 rng(882);
  Tensor input = random_tensor_away_from_zero(spec.input_shape, rng);
  LossFn loss = weighted_sum_loss(spec, params, input, 883);
  GradCheckReport rep = finite_diff_check(spec, params, input, loss, 64, 1e-3, 884, true);
  INFO("worst: " << rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("negative control: corrupted loss gradient is caught") {
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = 4;
  d.out_dim = 4;
  NetworkSpec spec = single_layer_spec(d, {4});
  ModelParams params = init_params(spec, 21);
  std::mt19937_64 rng(22);
  Tensor input = random_tensor({4}, rng);
  LossFn bad = [](const std::map<std::string, Tensor>& outputs,
                  std::map<std::string, Tensor>* grads) {
    const Tensor& o = outputs.at("out");
    double total = 0.0;
    for (double v : o.data) total += v;
    if (grads) {
      Tensor g(o.shape);
      for (double& v : g.data) v = -1.0;  // sign flipped on purpose
      (*grads)["out"] = g;
    }
    return total;
  };
  GradCheckReport rep = finite_diff_check(spec, params, input, bad, 32, 1e-3, 23);
  CHECK(rep.max_rel_err > 0.1);
}

TEST_CASE("shape errors name the offending layer") {
  LayerSpec c;
  c.kind = LayerKind::Conv3d;
  c.in_ch = 2;
  c.out_ch = 2;
  NetworkSpec spec = single_layer_spec(c, {3, 4, 4, 4});  // 3 channels fed into in_ch=2
  ModelParams params = init_params(spec, 31);
  Tensor in = Tensor::zeros({3, 4, 4, 4});
  CHECK_THROWS_WITH_AS(forward(spec, params, in),
                       doctest::Contains("layer 0 (conv3d)"), std::runtime_error);
}

TEST_CASE("adam: zero gradients leave params unchanged and advance the step") {
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = 3;
  d.out_dim = 3;
  NetworkSpec spec = single_layer_spec(d, {3});
  ModelParams params = init_params(spec, 41);
  ModelParams before = params;
  AdamState st = init_adam(params);
  Gradients g = zero_gradients(params, Tensor::zeros({3}));
  AdamConfig cfg;
  adam_step(params, g, st, cfg, cfg.lr);
  CHECK(st.step == 1);
  for (std::size_t li = 0; li < params.layers.size(); ++li)
    for (std::size_t ti = 0; ti < params.layers[li].size(); ++ti)
      CHECK(params.layers[li][ti].data == before.layers[li][ti].data);
}

TEST_CASE("adam: learning-rate decay is 0.9 per 10 epochs") {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  CHECK(adam_lr_at_epoch(cfg, 0) == doctest::Approx(1e-3));
  CHECK(adam_lr_at_epoch(cfg, 9) == doctest::Approx(1e-3));
  CHECK(adam_lr_at_epoch(cfg, 10) / adam_lr_at_epoch(cfg, 0) == doctest::Approx(0.9));
  CHECK(adam_lr_at_epoch(cfg, 25) == doctest::Approx(1e-3 * 0.9 * 0.9));
}

TEST_CASE("adam: scalar recurrence matches a hand evaluation") {
  // One scalar parameter, constant gradient 1. The update sequence is fully
  // determined by the textbook recurrence, evaluated here independently.
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = 1;
  d.out_dim = 1;
  NetworkSpec spec = single_layer_spec(d, {1});
  ModelParams params = init_params(spec, 51);
  params.layers[0][0].data[0] = 0.3;
  params.layers[0][1].data[0] = 0.0;
  AdamState st = init_adam(params);
  AdamConfig cfg;

  double expect = 0.3, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    Gradients g = zero_gradients(params, Tensor::zeros({1}));
    g.layers[0][0].data[0] = 1.0;
    adam_step(params, g, st, cfg, cfg.lr);

    m = cfg.beta1 * m + (1 - cfg.beta1) * 1.0;
    v = cfg.beta2 * v + (1 - cfg.beta2) * 1.0;
    const double mhat = m / (1 - std::pow(cfg.beta1, t));
    const double vhat = v / (1 - std::pow(cfg.beta2, t));
    const double prev = expect;
    expect -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    CHECK(params.layers[0][0].data[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(params.layers[0][0].data[0] < prev);  // strictly decreasing
  }
}

TEST_CASE("adam: non-finite gradient fails fast") {
  LayerSpec d;
  d.kind = LayerKind::Dense;
  d.in_dim = 1;
  d.out_dim = 1;
  NetworkSpec spec = single_layer_spec(d, {1});
  ModelParams params = init_params(spec, 61);
  AdamState st = init_adam(params);
  Gradients g = zero_gradients(params, Tensor::zeros({1}));
  g.layers[0][0].data[0] = std::nan("");
  AdamConfig cfg;
  CHECK_THROWS_AS(adam_step(params, g, st, cfg, cfg.lr), std::runtime_error);
}

TEST_CASE("params serialize and reload bit-exactly") {
  NetworkSpec spec;
  spec.input_shape = {1, 4, 4, 4};
  LayerSpec c1;
  c1.kind = LayerKind::Conv3d;
  c1.in_ch = 1;
  c1.out_ch = 2;
  c1.tap = "enc";
  LayerSpec gap;
  gap.kind = LayerKind::GlobalAvgPool;
  LayerSpec d1;
  d1.kind = LayerKind::Dense;
  d1.in_dim = 2;
  d1.out_dim = 3;
  d1.tap = "out";
  spec.layers = {c1, gap, d1};
  spec.outputs = {"out"};
  ModelParams params = init_params(spec, 71);

  const std::string prefix = "/tmp/oneshot_test_params";
  save_params(prefix, spec, params);
  auto [spec2, params2] = load_params(prefix);
  REQUIRE(spec2.layers.size() == spec.layers.size());
  CHECK(spec2.input_shape == spec.input_shape);
  CHECK(spec2.outputs == spec.outputs);
  CHECK(params2.init_seed == params.init_seed);
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    REQUIRE(params2.layers[li].size() == params.layers[li].size());
    for (std::size_t ti = 0; ti < params.layers[li].size(); ++ti) {
      CHECK(params2.layers[li][ti].shape == params.layers[li][ti].shape);
      CHECK(params2.layers[li][ti].data == params.layers[li][ti].data);
    }
  }

  // Loaded nets must also run identically.
  std::mt19937_64 rng(72);
  Tensor in = random_tensor({1, 4, 4, 4}, rng);
  CHECK(forward(spec, params, in).outputs.at("out").data ==
        forward(spec2, params2, in).outputs.at("out").data);
}

TEST_CASE("spec validation rejects bad graphs") {
  NetworkSpec dup;
  dup.input_shape = {1, 2, 2, 2};
  LayerSpec a;
  a.kind = LayerKind::LeakyRelu;
  a.tap = "t";
  dup.layers = {a, a};  // duplicate tap name
  dup.outputs = {"t"};
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

  NetworkSpec missing;
  missing.input_shape = {1, 2, 2, 2};
  LayerSpec b;
  b.kind = LayerKind::LeakyRelu;
  b.input = "nowhere";
  missing.layers = {b};
  CHECK_THROWS_AS(missing.validate(), std::invalid_argument);

  NetworkSpec badout;
  badout.input_shape = {1, 2, 2, 2};
  LayerSpec c;
  c.kind = LayerKind::LeakyRelu;
  badout.layers = {c};
  badout.outputs = {"absent"};
  CHECK_THROWS_AS(badout.validate(), std::invalid_argument);
}
