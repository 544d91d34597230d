#include "oneshot/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace oneshot {

AdamState init_adam(const ModelParams& params) {
  AdamState st;
  for (const auto& lp : params.layers) {
    std::vector<Tensor> zm, zv;
    for (const auto& t : lp) {
      zm.push_back(Tensor::zeros(t.shape));
      zv.push_back(Tensor::zeros(t.shape));
    }
    st.m.push_back(std::move(zm));
    st.v.push_back(std::move(zv));
  }
  return st;
}

double adam_lr_at_epoch(const AdamConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("adam_lr_at_epoch: negative epoch");
  return cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const AdamConfig& cfg, double lr) {
  if (grads.layers.size() != params.layers.size())
    throw std::invalid_argument("adam_step: gradient/parameter layout mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    for (std::size_t ti = 0; ti < params.layers[li].size(); ++ti) {
      Tensor& p = params.layers[li][ti];
      const Tensor& g = grads.layers[li][ti];
      Tensor& m = state.m[li][ti];
      Tensor& v = state.v[li][ti];
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double gi = g.data[i];
        if (!std::isfinite(gi))
          throw std::runtime_error("adam_step: non-finite gradient at layer " +
                                   std::to_string(li));
        m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
        v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    }
  }
}

}  // namespace oneshot
