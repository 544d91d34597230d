#pragma once

#include <cstdint>
#include <vector>

#include "oneshot/volume.hpp"

namespace oneshot {

// Overlap score 2|M n G| / (|M| + |G|) for one class. Two empty sets overlap
// perfectly by convention (score 1): an absent organ correctly predicted
// absent should not count as failure.
double dice_score(const LabelGrid& pred, const LabelGrid& gt, std::uint8_t cls);

double mean_dice(const LabelGrid& pred, const LabelGrid& gt,
                 const std::vector<std::uint8_t>& classes);

}  // namespace oneshot
