#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "oneshot/network.hpp"

namespace oneshot {

// Scalar loss over the network outputs. When `grads` is non-null the function
// must also fill d(loss)/d(output) for every output it depends on.
using LossFn =
    std::function<double(const std::map<std::string, Tensor>& outputs,
                         std::map<std::string, Tensor>* grads)>;

struct GradCheckReport {
  int checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // "layer L tensor T index I" of the largest deviation
};

// Compares analytic parameter gradients against central finite differences on
// a random sample of parameter entries. Relative error is
// |a - f| / max(1, |a| + |f|), so tiny gradients are compared absolutely.
GradCheckReport finite_diff_check(const NetworkSpec& spec, ModelParams& params,
                                  const Tensor& input, const LossFn& loss, int sample_count,
                                  double h, std::uint64_t seed, bool check_input = false);

// Same, for a loss coupling several forward passes of one network (e.g. a
// pairwise loss over two patches). `grads` is per-pass, aligned with `inputs`.
using MultiLossFn =
    std::function<double(const std::vector<std::map<std::string, Tensor>>& outputs,
                         std::vector<std::map<std::string, Tensor>>* grads)>;

GradCheckReport finite_diff_check_multi(const NetworkSpec& spec, ModelParams& params,
                                        const std::vector<Tensor>& inputs,
                                        const MultiLossFn& loss, int sample_count, double h,
                                        std::uint64_t seed);

}  // namespace oneshot
