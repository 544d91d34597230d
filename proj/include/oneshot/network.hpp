#ifndef ONESHOT_NETWORK_HPP
#define ONESHOT_NETWORK_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oneshot/tensor.hpp"

namespace oneshot {

// Fixed layer vocabulary shared by both networks. Spatial tensors are
// (C,D,H,W); Dense and GlobalAvgPool work with rank-1 vectors.
enum class LayerKind {
  Conv3d,         // cubic kernel, bias, zero padding
  LeakyRelu,      // elementwise max(x, slope*x)
  Downsample2,    // 2x2x2 average pooling, requires even spatial dims
  Upsample2,      // 2x2x2 nearest neighbor
  Dense,          // vector -> vector affine
  TanhScale,      // elementwise scale * tanh(x)
  GlobalAvgPool,  // (C,D,H,W) -> (C)
  Sigmoid,        // elementwise logistic
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3d;
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;  // conv3d
  double slope = 0.01;                                         // leaky_relu
  int in_dim = 0, out_dim = 0;                                 // dense
  double scale = 1.0;                                          // tanh_scale
  // Dataflow: input "" means previous layer (network input for layer 0),
  // otherwise the name of an earlier tap. skip_from channel-concatenates the
  // named tap onto this layer's input. tap exposes the output under a name.
  std::string input;
  std::string skip_from;
  std::string tap;
};

struct NetworkSpec {
  std::vector<int> input_shape;  // (C,D,H,W) or a rank-1 shape for dense-only nets
  std::vector<LayerSpec> layers;
  std::vector<std::string> outputs;  // tap names

  // Checks tap uniqueness and that every input/skip/output reference resolves
  // to an earlier tap. Throws std::invalid_argument.
  void validate() const;
  int tap_layer(const std::string& name) const;  // -1 if unknown
};

// Per-layer parameter tensors: conv3d and dense own {weight, bias}, everything
// else is empty. Ordering is parallel to NetworkSpec::layers.
struct ModelParams {
  std::vector<std::vector<Tensor>> layers;
  std::uint64_t init_seed = 0;

  std::size_t total_count() const;
};

// He-uniform weights, zero bias, deterministic in `seed`.
ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardCache {
  const NetworkSpec* spec = nullptr;
  const ModelParams* params = nullptr;
  Tensor input;
  std::vector<Tensor> layer_out;
  // Concatenated effective input, stored only for layers with skip_from.
  std::vector<Tensor> concat_in;
};

struct ForwardResult {
  std::map<std::string, Tensor> outputs;
  std::map<std::string, Tensor> taps;
  ForwardCache cache;
};

// Single-sample forward pass; batches are the caller's loop. Shape mismatches
// throw with the offending layer named.
ForwardResult forward(const NetworkSpec& spec, const ModelParams& params, const Tensor& input);

struct Gradients {
  std::vector<std::vector<Tensor>> layers;  // mirrors ModelParams::layers
  Tensor input;                             // dL/d(network input)

  void accumulate(const Gradients& other);
  void scale(double a);
  bool all_finite() const;
};

// Reverse pass. `output_grads` maps tap names to dL/d(tap); taps without an
// entry contribute nothing.
Gradients backward(const ForwardCache& cache, const std::map<std::string, Tensor>& output_grads);

Gradients zero_gradients(const ModelParams& params, const Tensor& input_like);

// Manifest JSON (spec + shapes + seed) next to one raw little-endian f64 blob;
// round-trip is bit-exact.
void save_params(const std::string& path_prefix, const NetworkSpec& spec,
                 const ModelParams& params);
std::pair<NetworkSpec, ModelParams> load_params(const std::string& path_prefix);

// Reshape helper: (d,h,w) patch -> (1,d,h,w) network input.
Tensor with_channel(const Tensor& t);

}  // namespace oneshot

#endif
