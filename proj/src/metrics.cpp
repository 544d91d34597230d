#include "oneshot/metrics.hpp"

#include <stdexcept>

namespace oneshot {

double dice_score(const LabelGrid& pred, const LabelGrid& gt, std::uint8_t cls) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("dice_score: prediction/ground-truth shape mismatch");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == cls;
    const bool g = gt.labels[i] == cls;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * double(inter) / double(np + ng);
}

double mean_dice(const LabelGrid& pred, const LabelGrid& gt,
                 const std::vector<std::uint8_t>& classes) {
  if (classes.empty()) throw std::invalid_argument("mean_dice: no classes");
  double sum = 0.0;
  for (std::uint8_t c : classes) sum += dice_score(pred, gt, c);
  return sum / double(classes.size());
}

}  // namespace oneshot
