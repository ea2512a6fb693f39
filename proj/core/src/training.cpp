#include "tsimp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsimp/classifiers.hpp"
#include "tsimp/evaluation.hpp"

namespace tsimp {

void adam_step(ParamStore& params,
               const std::vector<std::pair<std::string, const Array*>>& grads, int step,
               double lr, const AdamConfig& cfg) {
    if (step < 1) throw Error("adam_step: step counts from 1");
    double bc1 = 1.0 - std::pow(cfg.beta1, step);
    double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (const auto& [name, grad] : grads) {
        if (!grad->all_finite()) throw Error("adam_step: non-finite gradient for '" + name + "'");
        auto& slot = params.slot(name);
        require_same_shape(slot.value, *grad, "adam_step");
        for (int i = 0; i < slot.value.size(); ++i) {
            double g = (*grad)[i];
            double m = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            double v = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            slot.m[i] = static_cast<float>(m);
            slot.v[i] = static_cast<float>(v);
            slot.value[i] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
        }
    }
}

double cyclic_lr(int64_t iteration, double base_lr, double max_lr, int step_size, double gamma) {
    if (step_size < 1) throw Error("cyclic_lr: step_size must be >= 1");
    double it = static_cast<double>(iteration);
    double x = std::fabs(it / step_size - 2.0 * std::floor(1.0 + it / (2.0 * step_size)) + 1.0);
    return base_lr + (max_lr - base_lr) * std::max(0.0, 1.0 - x) * std::pow(gamma, it);
}

double PlateauScheduler::observe(double val_loss) {
    if (!seen_ || val_loss < best_ - cfg_.threshold) {
        best_ = val_loss;
        seen_ = true;
        bad_epochs_ = 0;
    } else if (++bad_epochs_ >= cfg_.patience) {
        lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        bad_epochs_ = 0;
    }
    return lr_;
}

EarlyStopDecision early_stop(const std::vector<double>& val_aurocs, int patience) {
    if (val_aurocs.empty()) throw Error("early_stop: no epochs recorded");
    EarlyStopDecision d;
    double best = val_aurocs[0];
    d.best_epoch = 0;
    int since_best = 0;
    for (size_t i = 1; i < val_aurocs.size(); ++i) {
        if (val_aurocs[i] > best) {  // ties are not improvements
            best = val_aurocs[i];
            d.best_epoch = static_cast<int>(i);
            since_best = 0;
        } else if (++since_best >= patience) {
            d.stop = true;
            return d;
        }
    }
    return d;
}

namespace {

std::vector<std::vector<int>> minibatches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)))]);
    std::vector<std::vector<int>> out;
    for (int s = 0; s < n; s += batch_size) {
        out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch_size));
    }
    return out;
}

// A feature never regresses on itself; keep the constraint exact by
// zeroing the diagonal of feature-regression gradients.
void zero_feat_diag(std::map<std::string, Array>& grads) {
    for (auto& [name, g] : grads) {
        if (name == "fwd.feat.W" || name == "bwd.feat.W") {
            int d = g.shape()[0];
            for (int i = 0; i < d; ++i) g.at2(i, i) = 0.0f;
        }
    }
}

double eval_mask_mae(const ImputerOutput& out, const TimeSeriesBatch& b) {
    double s = 0.0, c = 0.0;
    for (int i = 0; i < b.eval_mask.size(); ++i)
        if (b.eval_mask[i] > 0) {
            s += std::fabs(out.imputed[i] - b.ground_truth[i]);
            c += 1.0;
        }
    return c > 0 ? s / c : 0.0;
}

}  // namespace

PretrainResult pretrain_imputer(Imputer imputer, const TimeSeriesBatch& train_masked,
                                const TimeSeriesBatch& val_masked, int epochs,
                                const TrainerConfig& tc, double lr) {
    PretrainResult res;
    res.best = imputer;
    res.best_val_mae = eval_mask_mae(imputer.forward(val_masked), val_masked);
    res.best_epoch = 0;

    Rng rng = Rng(tc.seed).derive("pretrain");
    int adam_t = 0;
    double last_finite_loss = 0.0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        double loss_sum = 0.0;
        int seen = 0;
        for (const auto& rows : minibatches(train_masked.n, tc.batch_size, rng)) {
            TimeSeriesBatch mb = subset_batch(train_masked, rows);
            Tape tape;
            auto pvars = imputer.leaf_params(tape, true);
            ImputerGraph g = imputer.build_graph(tape, mb, pvars);
            float loss = tape.value(g.loss_total)[0];
            if (!std::isfinite(loss))
                throw Error("pretrain: loss diverged at epoch " + std::to_string(epoch) +
                            " (last finite loss " + std::to_string(last_finite_loss) + ")");
            last_finite_loss = loss;
            tape.backward(g.loss_total);
            std::map<std::string, Array> grads;
            for (const auto& [name, v] : pvars) grads[name] = tape.grad(v);
            zero_feat_diag(grads);
            std::vector<std::pair<std::string, const Array*>> glist;
            for (const auto& [name, g2] : grads) glist.emplace_back(name, &g2);
            adam_step(imputer.params, glist, ++adam_t, lr);
            loss_sum += loss * static_cast<double>(rows.size());
            seen += static_cast<int>(rows.size());
        }
        res.train_losses.push_back(loss_sum / std::max(1, seen));
        double val_mae = eval_mask_mae(imputer.forward(val_masked), val_masked);
        res.val_maes.push_back(val_mae);
        if (val_mae < res.best_val_mae) {
            res.best_val_mae = val_mae;
            res.best_epoch = epoch;
            res.best = imputer;
        }
    }
    return res;
}

namespace {

Array labels_col(const TimeSeriesBatch& b) {
    Array l({b.n, 1});
    for (int i = 0; i < b.n; ++i) l.at2(i, 0) = b.labels[i];
    return l;
}

// Loss + probabilities without touching parameters.
std::pair<double, Array> evaluate_split(const PipelineModel& model, const TimeSeriesBatch& b,
                                        const ImputerOutput* frozen) {
    Tape tape;
    PipelineForward pf = pipeline_forward(tape, model, b, frozen);
    Var loss = tape.bce_with_logits(pf.logits, labels_col(b));
    const Array& logits = tape.value(pf.logits);
    Array probs({b.n});
    for (int i = 0; i < b.n; ++i) {
        float z = logits.at2(i, 0);
        probs[i] = z >= 0 ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
    }
    return {tape.value(loss)[0], std::move(probs)};
}

struct Snapshot {
    ParamStore head;
    ParamStore imputer;
};

}  // namespace

TrainHistory train_pipeline(PipelineModel& model, const TimeSeriesBatch& train,
                            const TimeSeriesBatch& val, const TrainerConfig& tc) {
    TrainHistory hist;
    Rng rng = Rng(tc.seed).derive("finetune");

    std::optional<ImputerOutput> train_frozen, val_frozen;
    if (!model.unfrozen()) {
        train_frozen = model.imputer.forward(train);
        val_frozen = model.imputer.forward(val);
    }

    int iters_per_epoch = (train.n + tc.batch_size - 1) / tc.batch_size;
    int step_size = tc.cyclic_step_size > 0 ? tc.cyclic_step_size : 4 * iters_per_epoch;
    PlateauScheduler plateau(tc.plateau);
    double epoch_lr = tc.lr_strategy == LrStrategy::Plateau  ? tc.plateau.initial_lr
                      : tc.lr_strategy == LrStrategy::Searched ? tc.searched_lr
                                                               : tc.base_lr;

    Snapshot best;
    std::vector<double> val_aurocs;
    int64_t iteration = 0;
    int adam_t = 0;
    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        int seen = 0;
        for (const auto& rows : minibatches(train.n, tc.batch_size, rng)) {
            double lr = tc.lr_strategy == LrStrategy::Cyclic
                            ? cyclic_lr(iteration, tc.base_lr, tc.max_lr, step_size, tc.gamma)
                            : epoch_lr;
            TimeSeriesBatch mb = subset_batch(train, rows);
            std::optional<ImputerOutput> mb_frozen;
            if (train_frozen) mb_frozen = subset_output(*train_frozen, rows);

            Tape tape;
            PipelineForward pf =
                pipeline_forward(tape, model, mb, mb_frozen ? &*mb_frozen : nullptr);
            Var loss = tape.bce_with_logits(pf.logits, labels_col(mb));
            float lv = tape.value(loss)[0];
            if (!std::isfinite(lv))
                throw Error("train: loss is not finite at epoch " + std::to_string(epoch) +
                            ", iteration " + std::to_string(iteration));
            tape.backward(loss);

            std::map<std::string, Array> grads;
            for (const auto& [name, v] : pf.head_vars) grads[name] = tape.grad(v);
            std::vector<std::pair<std::string, const Array*>> head_glist;
            for (const auto& [name, g] : grads)
                head_glist.emplace_back(name, &g);
            adam_step(model.head, head_glist, adam_t + 1, lr);

            if (model.unfrozen()) {
                std::map<std::string, Array> igrads;
                for (const auto& [name, v] : pf.imputer_vars) igrads[name] = tape.grad(v);
                zero_feat_diag(igrads);
                std::vector<std::pair<std::string, const Array*>> iglist;
                for (const auto& [name, g] : igrads) iglist.emplace_back(name, &g);
                adam_step(model.imputer.params, iglist, adam_t + 1, lr);
            }
            ++adam_t;
            ++iteration;
            loss_sum += lv * static_cast<double>(rows.size());
            seen += static_cast<int>(rows.size());
        }
        if (model.unfrozen()) {
            // Imputer moved this epoch; nothing cached to refresh (frozen
            // caches are only built under Frozen).
        }
        auto [train_loss_eval, train_probs] =
            evaluate_split(model, train, train_frozen ? &*train_frozen : nullptr);
        auto [val_loss, val_probs] = evaluate_split(model, val, val_frozen ? &*val_frozen : nullptr);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / std::max(1, seen);
        rec.train_auroc = auroc(train_probs, train.labels);
        rec.val_loss = val_loss;
        rec.val_auroc = auroc(val_probs, val.labels);
        rec.lr = tc.lr_strategy == LrStrategy::Cyclic
                     ? cyclic_lr(iteration - 1, tc.base_lr, tc.max_lr, step_size, tc.gamma)
                     : epoch_lr;
        hist.epochs.push_back(rec);
        val_aurocs.push_back(rec.val_auroc);

        if (rec.val_auroc > hist.best_val_auroc || hist.best_epoch < 0) {
            hist.best_val_auroc = rec.val_auroc;
            hist.best_epoch = epoch;
            best.head = model.head;
            best.imputer = model.imputer.params;
        }
        if (tc.lr_strategy == LrStrategy::Plateau) epoch_lr = plateau.observe(val_loss);

        EarlyStopDecision d = early_stop(val_aurocs, tc.early_stop_patience);
        if (d.stop) {
            hist.stopped_early = true;
            break;
        }
    }
    if (hist.best_epoch >= 0) {
        model.head = std::move(best.head);
        model.imputer.params = std::move(best.imputer);
    }
    return hist;
}

SearchResult lr_search(
    const std::function<std::vector<double>(double lr, int n_rungs)>& objective,
    const SearchSpec& spec, uint64_t seed) {
    if (spec.n_trials < 1) throw Error("lr_search: n_trials must be >= 1");
    if (spec.lr_lo <= 0 || spec.lr_hi < spec.lr_lo)
        throw Error("lr_search: lr range must be positive and ordered");
    Rng rng = Rng(seed).derive("lr-search");
    SearchResult res;
    for (int i = 0; i < spec.n_trials; ++i) {
        TrialRecord t;
        t.trial = i;
        double u = rng.uniform();
        t.lr = std::exp(std::log(spec.lr_lo) + u * (std::log(spec.lr_hi) - std::log(spec.lr_lo)));
        res.trials.push_back(t);
    }
    std::vector<int> survivors(spec.n_trials);
    std::iota(survivors.begin(), survivors.end(), 0);
    int n_rungs = static_cast<int>(spec.rungs.size());
    for (int rung = 0; rung < n_rungs; ++rung) {
        for (int idx : survivors)
            res.trials[idx].rung_losses = objective(res.trials[idx].lr, rung + 1);
        if (rung + 1 == n_rungs) break;
        // Keep the best ceil(1/eta) fraction; the leader always survives.
        std::stable_sort(survivors.begin(), survivors.end(), [&](int a, int b) {
            return res.trials[a].rung_losses[rung] < res.trials[b].rung_losses[rung];
        });
        size_t keep = std::max<size_t>(1, (survivors.size() + spec.eta - 1) / spec.eta);
        for (size_t i = keep; i < survivors.size(); ++i)
            res.trials[survivors[i]].pruned_at_rung = rung;
        survivors.resize(keep);
        std::sort(survivors.begin(), survivors.end());
    }
    double best_loss = 0.0;
    bool first = true;
    for (int idx : survivors) {
        double fl = res.trials[idx].rung_losses.back();
        if (first || fl < best_loss) {
            best_loss = fl;
            res.best_lr = res.trials[idx].lr;
            first = false;
        }
    }
    res.best_loss = best_loss;
    return res;
}

}  // namespace tsimp
