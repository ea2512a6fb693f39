#pragma once

#include <string>
#include <vector>

#include "tsimp/classifiers.hpp"
#include "tsimp/evaluation.hpp"
#include "tsimp/masking.hpp"
#include "tsimp/training.hpp"

namespace tsimp {

struct SynthConfig {
    int n = 500;
    int d = 8;
    double missing_rate = 0.4;
};

// Whole-run configuration; single JSON document, unknown keys rejected.
struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";
    int parallelism = 1;
    int folds = 5;

    std::string events_path;
    std::string labels_path;
    std::vector<std::string> feature_vocab;  // empty = inferred from events

    SynthConfig synth;
    ImputerConfig imputer;  // d_features resolved from the dataset
    MaskPlan mask_plan;     // seed derived from the global seed
    TrainerConfig trainer;
    SearchSpec search;
    int pretrain_epochs = 30;
    double pretrain_lr = 1e-3;

    std::vector<FinetunePlan> plans;       // default: frozen MLP2 on hidden states
    std::vector<LrStrategy> strategies;    // default: plateau
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<inline>");
// Effective config with defaults applied; re-parses to an equal RunConfig.
std::string config_to_json(const RunConfig& cfg);

// MetricsReport serialization for the evaluate -> report stage boundary.
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

}  // namespace tsimp
