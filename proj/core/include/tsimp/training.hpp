#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tsimp/checkpoint.hpp"
#include "tsimp/dataset.hpp"
#include "tsimp/imputer.hpp"
#include "tsimp/masking.hpp"

namespace tsimp {

struct PipelineModel;  // classifiers.hpp

enum class LrStrategy { Cyclic, Plateau, Searched };

struct PlateauConfig {
    double factor = 0.2;
    int patience = 15;
    double min_lr = 1e-5;
    double initial_lr = 1e-3;
    double threshold = 1e-4;  // absolute val-loss improvement that resets patience
};

struct TrainerConfig {
    int max_epochs = 200;
    int batch_size = 64;
    LrStrategy lr_strategy = LrStrategy::Plateau;
    double base_lr = 1e-5;
    double max_lr = 1e-3;
    double gamma = 0.9999;
    int cyclic_step_size = 0;  // 0 = 4 * iterations-per-epoch
    PlateauConfig plateau;
    double searched_lr = 1e-3;  // constant lr used under Searched
    int early_stop_patience = 25;
    uint64_t seed = 0;
};

struct SearchSpec {
    int n_trials = 20;
    double lr_lo = 1e-5, lr_hi = 1e-3;  // sampled log-uniform
    std::vector<int> rungs = {5, 15, 45};  // epoch checkpoints
    int eta = 3;                           // keep best 1/eta per rung
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0, train_auroc = 0.0;
    double val_loss = 0.0, val_auroc = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;  // argmax of val AUROC
    double best_val_auroc = 0.0;
    bool stopped_early = false;
};

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One bias-corrected Adam update over every slot with a matching gradient.
// `step` counts from 1. Throws on non-finite gradients.
void adam_step(ParamStore& params,
               const std::vector<std::pair<std::string, const Array*>>& grads, int step,
               double lr, const AdamConfig& cfg = {});

// Triangular wave between base and max, peak decayed by gamma^iteration.
double cyclic_lr(int64_t iteration, double base_lr, double max_lr, int step_size, double gamma);

class PlateauScheduler {
public:
    explicit PlateauScheduler(const PlateauConfig& cfg) : cfg_(cfg), lr_(cfg.initial_lr) {}
    // Feed the epoch's validation loss; returns the lr for the next epoch.
    double observe(double val_loss);
    double lr() const { return lr_; }

private:
    PlateauConfig cfg_;
    double lr_;
    double best_ = 0.0;
    bool seen_ = false;
    int bad_epochs_ = 0;
};

struct EarlyStopDecision {
    bool stop = false;
    int best_epoch = -1;
};

// Stops when val AUROC has not strictly improved for `patience` epochs.
EarlyStopDecision early_stop(const std::vector<double>& val_aurocs, int patience);

struct PretrainResult {
    Imputer best;  // parameters at the best-validation epoch
    std::vector<double> train_losses;
    std::vector<double> val_maes;
    int best_epoch = -1;
    double best_val_mae = 0.0;
};

// Minimizes reconstruction + consistency + eval-mask loss with Adam at a
// constant lr; keeps the checkpoint of the best eval-mask MAE on the
// validation view.
PretrainResult pretrain_imputer(Imputer imputer, const TimeSeriesBatch& train_masked,
                                const TimeSeriesBatch& val_masked, int epochs,
                                const TrainerConfig& tc, double lr = 1e-3);

// Fine-tunes a classifier pipeline with BCE; applies the configured lr
// strategy (Plateau per epoch, Cyclic per iteration, Searched constant)
// and early stopping; the model is left at its best-val-AUROC state.
TrainHistory train_pipeline(PipelineModel& model, const TimeSeriesBatch& train,
                            const TimeSeriesBatch& val, const TrainerConfig& tc);

struct TrialRecord {
    int trial = 0;
    double lr = 0.0;
    std::vector<double> rung_losses;
    int pruned_at_rung = -1;  // -1 = completed
};

struct SearchResult {
    double best_lr = 0.0;
    double best_loss = 0.0;
    std::vector<TrialRecord> trials;
};

// Log-uniform sampling + single-bracket successive halving. The objective
// maps (lr, rungs) -> per-rung validation losses, evaluated lazily rung by
// rung via the `budget` argument (number of rungs to run).
SearchResult lr_search(
    const std::function<std::vector<double>(double lr, int n_rungs)>& objective,
    const SearchSpec& spec, uint64_t seed);

}  // namespace tsimp
