#pragma once

#include <cstdint>

#include "tsimp/dataset.hpp"

namespace tsimp {

enum class WeightMode { Uniform, InverseMissingRate, Explicit };

struct MaskPlan {
    double rate = 0.10;
    WeightMode weight_mode = WeightMode::InverseMissingRate;
    Array explicit_weights;  // [D], used when weight_mode == Explicit
    uint64_t seed = 0;
};

// Hides exactly floor(rate * #observed) observed cells: mask -> 0,
// value -> 0 sentinel, eval_mask -> 1, ground_truth keeps the value.
// Selection probability is proportional to the cell's feature weight;
// sampling is weighted-reservoir without replacement.
TimeSeriesBatch apply_nonuniform_mask(const TimeSeriesBatch& batch, const MaskPlan& plan);

}  // namespace tsimp
