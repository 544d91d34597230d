#include "oneshot/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace oneshot {

namespace {

double loss_at(const NetworkSpec& spec, const ModelParams& params, const Tensor& input,
               const LossFn& loss) {
  ForwardResult r = forward(spec, params, input);
  return loss(r.outputs, nullptr);
}

}  // namespace

GradCheckReport finite_diff_check(const NetworkSpec& spec, ModelParams& params,
                                  const Tensor& input, const LossFn& loss, int sample_count,
                                  double h, std::uint64_t seed, bool check_input) {
  ForwardResult fwd = forward(spec, params, input);
  std::map<std::string, Tensor> ograds;
  loss(fwd.outputs, &ograds);
  Gradients analytic = backward(fwd.cache, ograds);
  if (!analytic.all_finite()) throw std::runtime_error("finite_diff_check: non-finite gradient");

  // Flat index space over every parameter entry (plus the input if requested).
  struct Slot {
    int layer, tensor;  // layer < 0 means the network input
    std::size_t base;
    std::size_t count;
  };
  std::vector<Slot> slots;
  std::size_t total = 0;
  for (std::size_t li = 0; li < params.layers.size(); ++li)
    for (std::size_t ti = 0; ti < params.layers[li].size(); ++ti) {
      slots.push_back({int(li), int(ti), total, params.layers[li][ti].numel()});
      total += slots.back().count;
    }
  if (check_input) {
    slots.push_back({-1, 0, total, input.numel()});
    total += slots.back().count;
  }
  if (total == 0) throw std::invalid_argument("finite_diff_check: nothing to check");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  GradCheckReport rep;
  Tensor in_copy = input;
  for (int s = 0; s < sample_count; ++s) {
    const std::size_t flat = pick(rng);
    const Slot& slot = *std::prev(std::upper_bound(
        slots.begin(), slots.end(), flat,
        [](std::size_t v, const Slot& sl) { return v < sl.base; }));
    const std::size_t idx = flat - slot.base;

    double* entry = slot.layer < 0 ? &in_copy.data[idx]
                                   : &params.layers[slot.layer][slot.tensor].data[idx];
    const double saved = *entry;
    *entry = saved + h;
    const double lp = loss_at(spec, params, slot.layer < 0 ? in_copy : input, loss);
    *entry = saved - h;
    const double lm = loss_at(spec, params, slot.layer < 0 ? in_copy : input, loss);
    *entry = saved;

    const double fd = (lp - lm) / (2.0 * h);
    const double an = slot.layer < 0 ? analytic.input.data[idx]
                                     : analytic.layers[slot.layer][slot.tensor].data[idx];
    const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an) + std::abs(fd));
    rep.checked += 1;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = slot.layer < 0
                      ? "input index " + std::to_string(idx)
                      : "layer " + std::to_string(slot.layer) + " tensor " +
                            std::to_string(slot.tensor) + " index " + std::to_string(idx);
    }
  }
  return rep;
}

GradCheckReport finite_diff_check_multi(const NetworkSpec& spec, ModelParams& params,
                                        const std::vector<Tensor>& inputs,
                                        const MultiLossFn& loss, int sample_count, double h,
                                        std::uint64_t seed) {
  if (inputs.empty()) throw std::invalid_argument("finite_diff_check_multi: no inputs");

  auto run_all = [&](std::vector<ForwardResult>* keep) {
    std::vector<std::map<std::string, Tensor>> outs;
    for (const Tensor& in : inputs) {
      ForwardResult r = forward(spec, params, in);
      outs.push_back(r.outputs);
      if (keep) keep->push_back(std::move(r));
    }
    return outs;
  };

  std::vector<ForwardResult> fwds;
  auto outs = run_all(&fwds);
  std::vector<std::map<std::string, Tensor>> ograds;
  loss(outs, &ograds);
  if (ograds.size() != inputs.size())
    throw std::invalid_argument("finite_diff_check_multi: loss returned wrong grad count");
  Gradients analytic = zero_gradients(params, inputs[0]);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    analytic.accumulate(backward(fwds[i].cache, ograds[i]));
  if (!analytic.all_finite())
    throw std::runtime_error("finite_diff_check_multi: non-finite gradient");

  struct Slot {
    int layer, tensor;
    std::size_t base, count;
  };
  std::vector<Slot> slots;
  std::size_t total = 0;
  for (std::size_t li = 0; li < params.layers.size(); ++li)
    for (std::size_t ti = 0; ti < params.layers[li].size(); ++ti) {
      slots.push_back({int(li), int(ti), total, params.layers[li][ti].numel()});
      total += slots.back().count;
    }
  if (total == 0) throw std::invalid_argument("finite_diff_check_multi: no parameters");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  GradCheckReport rep;
  for (int s = 0; s < sample_count; ++s) {
    const std::size_t flat = pick(rng);
    const Slot& slot = *std::prev(std::upper_bound(
        slots.begin(), slots.end(), flat,
        [](std::size_t v, const Slot& sl) { return v < sl.base; }));
    const std::size_t idx = flat - slot.base;
    double* entry = &params.layers[slot.layer][slot.tensor].data[idx];
    const double saved = *entry;
    *entry = saved + h;
    const double lp = loss(run_all(nullptr), nullptr);
    *entry = saved - h;
    const double lm = loss(run_all(nullptr), nullptr);
    *entry = saved;

    const double fd = (lp - lm) / (2.0 * h);
    const double an = analytic.layers[slot.layer][slot.tensor].data[idx];
    const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an) + std::abs(fd));
    rep.checked += 1;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = "layer " + std::to_string(slot.layer) + " tensor " +
                  std::to_string(slot.tensor) + " index " + std::to_string(idx);
    }
  }
  return rep;
}

}  // namespace oneshot
