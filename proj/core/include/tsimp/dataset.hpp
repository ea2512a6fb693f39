#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsimp/array.hpp"
#include "tsimp/rng.hpp"

namespace tsimp {

inline constexpr int kHours = 48;  // fixed grid length, hourly bins

struct EventRecord {
    std::string record_id;
    double t_hours = 0.0;  // since admission
    std::string feature;
    double value = 0.0;
};

// One cohort on the hourly grid, before any normalization.
struct RawGrid {
    std::vector<std::string> record_ids;    // row order of values/mask
    std::vector<std::string> feature_names; // column order
    Array values;  // [N, 48, D], unobserved cells 0
    Array mask;    // [N, 48, D], 1 = observed
    Array labels;  // [N], {0,1}
    int n() const { return static_cast<int>(record_ids.size()); }
    int d() const { return static_cast<int>(feature_names.size()); }
};

// Training view of a (sub)cohort after normalization and masking.
struct TimeSeriesBatch {
    Array values;        // [N, 48, D] normalized, 0 sentinel at missing
    Array mask;          // [N, 48, D]
    Array delta;         // [N, 48, D] hours since last observation
    Array eval_mask;     // [N, 48, D] artificially hidden cells
    Array ground_truth;  // [N, 48, D] normalized pre-masking values
    Array labels;        // [N]
    int n = 0, t = 0, d = 0;
};

struct NormStats {
    Array mean;  // [D]
    Array std;   // [D], population form; 0 allowed (degenerate feature)
};

struct FoldSplit {
    int fold_index = 0;
    std::vector<int> train_ids, val_ids, test_ids;  // row indices into RawGrid
};

// Events/labels ingestion. Malformed rows abort with the line number.
std::vector<EventRecord> parse_events_csv(std::istream& in, const std::string& path);
std::vector<std::pair<std::string, int>> parse_labels_csv(std::istream& in,
                                                          const std::string& path);

// Hourly binning: cell = mean of the record's values for that feature
// within [h, h+1); events at t >= 48h are dropped. Records present in
// labels but with no events in the window stay as all-missing rows.
RawGrid bin_hourly(const std::vector<EventRecord>& events,
                   const std::vector<std::pair<std::string, int>>& labels,
                   std::vector<std::string> feature_vocab = {});

// Per-feature mean and population std over observed cells of the given rows.
NormStats normalize_fit(const RawGrid& grid, const std::vector<int>& rows);
// Observed cells z-scored (value - mean when std == 0); missing cells 0.
Array normalize_apply(const Array& values, const Array& mask, const NormStats& stats);

// delta[.,0,.] = 0; delta[t] = 1 if mask[t-1] else 1 + delta[t-1].
Array compute_delta(const Array& mask);

std::vector<FoldSplit> kfold_split(int n, int k, uint64_t seed);

struct SynthResult {
    std::vector<EventRecord> events;
    std::vector<std::pair<std::string, int>> labels;
    // Clean (pre-dropout) trajectories, kept for oracle checks.
    Array clean;  // [N, 48, D]
};

// Desk-scale generator: latent AR(1) trajectories; the label is a logistic
// function of a fixed linear functional of the clean series; observations
// dropped per-feature at heterogeneous rates averaging missing_rate.
SynthResult synth_generate(int n, int d, double missing_rate, uint64_t seed);

// Assembles the normalized training view for a row subset (no eval mask yet).
TimeSeriesBatch make_batch(const RawGrid& grid, const std::vector<int>& rows,
                           const NormStats& stats);

// Time-reversed view; delta is recomputed on the reversed mask.
TimeSeriesBatch reverse_time(const TimeSeriesBatch& b);

}  // namespace tsimp
