#include "tsimp/masking.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tsimp {

TimeSeriesBatch apply_nonuniform_mask(const TimeSeriesBatch& batch, const MaskPlan& plan) {
    if (plan.rate <= 0.0 || plan.rate >= 1.0)
        throw Error("apply_nonuniform_mask: rate must be in (0,1)");
    for (int i = 0; i < batch.eval_mask.size(); ++i)
        if (batch.eval_mask[i] != 0.0f)
            throw Error("apply_nonuniform_mask: batch already carries an eval mask");

    int D = batch.d;
    std::vector<int> observed;
    observed.reserve(batch.mask.size());
    std::vector<int64_t> obs_per_feature(D, 0);
    for (int i = 0; i < batch.mask.size(); ++i)
        if (batch.mask[i] > 0) {
            observed.push_back(i);
            obs_per_feature[i % D] += 1;
        }
    if (observed.empty()) throw Error("apply_nonuniform_mask: no observed cells");
    int64_t k = static_cast<int64_t>(std::floor(plan.rate * static_cast<double>(observed.size())));
    if (k < 1) throw Error("apply_nonuniform_mask: rate * #observed < 1");

    std::vector<double> w(D, 1.0);
    switch (plan.weight_mode) {
        case WeightMode::Uniform:
            break;
        case WeightMode::InverseMissingRate: {
            // w_d proportional to the observed fraction: dense features masked more.
            int64_t cells_per_feature = batch.mask.size() / D;
            for (int d = 0; d < D; ++d)
                w[d] = static_cast<double>(obs_per_feature[d]) / static_cast<double>(cells_per_feature);
            break;
        }
        case WeightMode::Explicit: {
            if (plan.explicit_weights.size() != D)
                throw Error("apply_nonuniform_mask: explicit weights " +
                            plan.explicit_weights.shape_str() + " vs D=" + std::to_string(D));
            for (int d = 0; d < D; ++d) {
                if (plan.explicit_weights[d] < 0)
                    throw Error("apply_nonuniform_mask: negative feature weight");
                w[d] = plan.explicit_weights[d];
            }
            break;
        }
    }
    double wsum = 0.0;
    for (double x : w) wsum += x;
    if (wsum <= 0.0) throw Error("apply_nonuniform_mask: all feature weights zero");

    // Efraimidis-Spirakis: key = log(u)/w, take the k largest keys. Cells
    // whose feature weight is 0 are never selected.
    Rng rng = Rng(plan.seed).derive("nonuniform-mask");
    std::vector<std::pair<double, int>> keyed;
    keyed.reserve(observed.size());
    for (int idx : observed) {
        double wd = w[idx % D];
        if (wd <= 0.0) continue;
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        keyed.emplace_back(std::log(u) / wd, idx);
    }
    if (static_cast<int64_t>(keyed.size()) < k)
        throw Error("apply_nonuniform_mask: fewer weighted cells than the mask budget");
    std::partial_sort(keyed.begin(), keyed.begin() + k, keyed.end(),
                      [](const auto& a, const auto& b) {
                          return a.first > b.first || (a.first == b.first && a.second < b.second);
                      });

    TimeSeriesBatch out = batch;
    for (int64_t i = 0; i < k; ++i) {
        int idx = keyed[static_cast<size_t>(i)].second;
        out.ground_truth[idx] = out.values[idx];
        out.values[idx] = 0.0f;
        out.mask[idx] = 0.0f;
        out.eval_mask[idx] = 1.0f;
    }
    out.delta = compute_delta(out.mask);
    return out;
}

}  // namespace tsimp
