#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsimp/classifiers.hpp"
#include "tsimp/training.hpp"

namespace tsimp {

// Mann-Whitney rank statistic with average ranks for ties; 64-bit
// accumulation. Requires both classes present.
double auroc(const Array& scores, const Array& labels);

struct ImputationMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mre;  // absent when sum|x| == 0
};

// Over eval_mask positions only.
ImputationMetrics imputation_metrics(const Array& imputed, const Array& ground_truth,
                                     const Array& eval_mask);

struct RunKey {
    std::string model;        // head kind + input strategy
    std::string lr_strategy;  // cyclic | plateau | searched
    std::string weight_policy;
    bool operator<(const RunKey& o) const {
        return std::tie(model, weight_policy, lr_strategy) <
               std::tie(o.model, o.weight_policy, o.lr_strategy);
    }
};

struct RunResult {
    std::vector<double> val_auroc_per_fold;
    std::vector<double> test_auroc_per_fold;
    int64_t trainable_params = 0;
    double mean_val_auroc() const;
    double mean_test_auroc() const;
};

struct MetricsReport {
    std::string dataset_name;
    int folds = 0;
    std::map<RunKey, RunResult> runs;
    // Imputer quality per fold (test-split eval mask).
    std::vector<ImputationMetrics> imputation_per_fold;
    std::vector<double> searched_lr_per_fold;
};

struct CvConfig {
    int folds = 5;
    int pretrain_epochs = 30;
    double pretrain_lr = 1e-3;
    MaskPlan mask_plan;
    ImputerConfig imputer;
    TrainerConfig trainer;
    SearchSpec search;
    uint64_t seed = 0;
    int parallelism = 1;
    std::string checkpoint_dir;  // per-fold imputer checkpoints; reused when present
    std::string history_dir;     // per-run epoch histories (JSON lines)
    // When set, a missing fold checkpoint is an error instead of a
    // pretraining trigger (stage separation).
    bool require_checkpoints = false;
};

struct FoldData {
    NormStats stats;
    TimeSeriesBatch train, val, test;           // normalized, unmasked
    TimeSeriesBatch train_m, val_m, test_m;     // with artificial eval masks
};

// Normalizes on the fold's training split and applies the mask plan with
// fold-derived seeds.
FoldData prepare_fold(const RawGrid& grid, const FoldSplit& fold, const CvConfig& cfg);

// Loads the fold's imputer checkpoint, or pretrains and saves it.
Imputer pretrain_fold(const RawGrid& grid, const FoldSplit& fold, const FoldData& data,
                      const CvConfig& cfg);

// 5-fold driver: per fold, pretrain the imputer on that fold's training
// split, then fine-tune every plan under every lr strategy; select on val,
// score on test.
MetricsReport run_cv(const RawGrid& grid, const std::vector<FinetunePlan>& plans,
                     const std::vector<LrStrategy>& strategies, const CvConfig& cfg,
                     const std::string& dataset_name);

// Writes report.md, report.csv, params_vs_auc.csv and a side-by-side
// reference table of externally reported results.
void emit_report(const MetricsReport& report, const std::string& out_dir);

std::string lr_strategy_name(LrStrategy s);

}  // namespace tsimp
