#include "tsimp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace tsimp {

namespace fs = std::filesystem;

double auroc(const Array& scores, const Array& labels) {
    require_same_shape(scores, labels, "auroc");
    int n = scores.size();
    int64_t n_pos = 0;
    for (int i = 0; i < n; ++i) n_pos += labels[i] > 0.5f ? 1 : 0;
    int64_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error("auroc: both classes must be present (got " + std::to_string(n_pos) +
                    " positives of " + std::to_string(n) + ")");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups; ties contribute 1/2 per pair.
    double rank_sum_pos = 0.0;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (i + 1 + j);  // 1-based
        for (int k = i; k < j; ++k)
            if (labels[order[k]] > 0.5f) rank_sum_pos += avg_rank;
        i = j;
    }
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ImputationMetrics imputation_metrics(const Array& imputed, const Array& ground_truth,
                                     const Array& eval_mask) {
    require_same_shape(imputed, ground_truth, "imputation_metrics");
    require_same_shape(imputed, eval_mask, "imputation_metrics");
    double abs_sum = 0.0, sq_sum = 0.0, truth_abs = 0.0, cnt = 0.0;
    for (int i = 0; i < imputed.size(); ++i)
        if (eval_mask[i] > 0) {
            double d = static_cast<double>(imputed[i]) - ground_truth[i];
            abs_sum += std::fabs(d);
            sq_sum += d * d;
            truth_abs += std::fabs(ground_truth[i]);
            cnt += 1.0;
        }
    if (cnt == 0) throw Error("imputation_metrics: empty eval mask");
    ImputationMetrics m;
    m.mae = abs_sum / cnt;
    m.rmse = std::sqrt(sq_sum / cnt);
    if (truth_abs > 0) m.mre = abs_sum / truth_abs;
    return m;
}

double RunResult::mean_val_auroc() const {
    double s = 0.0;
    for (double v : val_auroc_per_fold) s += v;
    return val_auroc_per_fold.empty() ? 0.0 : s / val_auroc_per_fold.size();
}

double RunResult::mean_test_auroc() const {
    double s = 0.0;
    for (double v : test_auroc_per_fold) s += v;
    return test_auroc_per_fold.empty() ? 0.0 : s / test_auroc_per_fold.size();
}

std::string lr_strategy_name(LrStrategy s) {
    switch (s) {
        case LrStrategy::Cyclic: return "cyclic";
        case LrStrategy::Plateau: return "plateau";
        case LrStrategy::Searched: return "searched";
    }
    throw Error("unknown lr strategy");
}

namespace {

std::string model_name(const FinetunePlan& plan) {
    std::string n = head_kind_name(plan.head.kind);
    if (plan.head.kind == HeadKind::LSTM1 || plan.head.kind == HeadKind::GRU1)
        n += "+" + strategy_name(plan.input_strategy);
    return n;
}

void write_history_jsonl(const std::string& path, const TrainHistory& hist) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write history file " + path);
    char buf[256];
    for (const auto& e : hist.epochs) {
        std::snprintf(buf, sizeof(buf),
                      "{\"epoch\":%d,\"train_loss\":%.9g,\"train_auroc\":%.9g,"
                      "\"val_loss\":%.9g,\"val_auroc\":%.9g,\"lr\":%.9g}\n",
                      e.epoch, e.train_loss, e.train_auroc, e.val_loss, e.val_auroc, e.lr);
        os << buf;
    }
}

}  // namespace

FoldData prepare_fold(const RawGrid& grid, const FoldSplit& fold, const CvConfig& cfg) {
    Rng fold_rng = Rng(cfg.seed).derive("fold", static_cast<uint64_t>(fold.fold_index));
    FoldData d;
    d.stats = normalize_fit(grid, fold.train_ids);
    d.train = make_batch(grid, fold.train_ids, d.stats);
    d.val = make_batch(grid, fold.val_ids, d.stats);
    d.test = make_batch(grid, fold.test_ids, d.stats);
    auto masked = [&](const TimeSeriesBatch& b, const char* tag) {
        MaskPlan p = cfg.mask_plan;
        p.seed = fold_rng.derive(tag).next_u64();
        return apply_nonuniform_mask(b, p);
    };
    d.train_m = masked(d.train, "mask-train");
    d.val_m = masked(d.val, "mask-val");
    d.test_m = masked(d.test, "mask-test");
    return d;
}

Imputer pretrain_fold(const RawGrid& grid, const FoldSplit& fold, const FoldData& data,
                      const CvConfig& cfg) {
    Rng fold_rng = Rng(cfg.seed).derive("fold", static_cast<uint64_t>(fold.fold_index));
    fs::path ckpt;
    if (!cfg.checkpoint_dir.empty()) {
        ckpt = fs::path(cfg.checkpoint_dir) /
               ("fold" + std::to_string(fold.fold_index) + "_imputer.ckpt");
        if (fs::exists(ckpt)) return Imputer::from_checkpoint(ckpt.string());
        if (cfg.require_checkpoints)
            throw Error("missing imputer checkpoint (run pretrain first): " + ckpt.string());
    } else if (cfg.require_checkpoints) {
        throw Error("checkpoint directory not configured but checkpoints are required");
    }
    ImputerConfig ic = cfg.imputer;
    ic.d_features = grid.d();
    ic.seed = fold_rng.derive("imputer-seed").next_u64();
    TrainerConfig tc = cfg.trainer;
    tc.seed = fold_rng.derive("pretrain-seed").next_u64();
    PretrainResult pr = pretrain_imputer(Imputer::init(ic), data.train_m, data.val_m,
                                         cfg.pretrain_epochs, tc, cfg.pretrain_lr);
    if (!ckpt.empty()) {
        fs::create_directories(ckpt.parent_path());
        pr.best.save(ckpt.string(), "{\"fold\":" + std::to_string(fold.fold_index) + "}");
    }
    return pr.best;
}

namespace {

struct FoldOutcome {
    std::map<RunKey, std::pair<double, double>> aurocs;  // key -> (val, test)
    std::map<RunKey, int64_t> params;
    ImputationMetrics imputation;
    double searched_lr = 0.0;
};

FoldOutcome run_fold(const RawGrid& grid, const FoldSplit& fold,
                     const std::vector<FinetunePlan>& plans,
                     const std::vector<LrStrategy>& strategies, const CvConfig& cfg) {
    Rng fold_rng = Rng(cfg.seed).derive("fold", static_cast<uint64_t>(fold.fold_index));

    FoldData data = prepare_fold(grid, fold, cfg);
    const TimeSeriesBatch& train_b = data.train;
    const TimeSeriesBatch& val_b = data.val;
    const TimeSeriesBatch& test_b = data.test;

    Imputer best_imputer = pretrain_fold(grid, fold, data, cfg);

    FoldOutcome out;
    out.imputation =
        imputation_metrics(best_imputer.forward(data.test_m).imputed, data.test_m.ground_truth,
                           data.test_m.eval_mask);

    for (const auto& plan : plans) {
        for (LrStrategy strat : strategies) {
            TrainerConfig tc = cfg.trainer;
            tc.lr_strategy = strat;
            std::string tag = model_name(plan) + "/" + policy_name(plan.weight_policy) + "/" +
                              lr_strategy_name(strat);
            tc.seed = fold_rng.derive(tag).next_u64();
            uint64_t head_seed = fold_rng.derive(tag + "/head").next_u64();

            if (strat == LrStrategy::Searched) {
                // Short constant-lr runs, pruned by successive halving.
                SearchSpec spec = cfg.search;
                auto objective = [&](double lr, int n_rungs) {
                    PipelineModel m = assemble(best_imputer, plan, head_seed);
                    TrainerConfig stc = tc;
                    stc.lr_strategy = LrStrategy::Searched;
                    stc.searched_lr = lr;
                    stc.max_epochs = spec.rungs[n_rungs - 1];
                    stc.early_stop_patience = stc.max_epochs + 1;
                    TrainHistory h = train_pipeline(m, train_b, val_b, stc);
                    std::vector<double> losses;
                    for (int r = 0; r < n_rungs; ++r)
                        losses.push_back(h.epochs[spec.rungs[r] - 1].val_loss);
                    return losses;
                };
                SearchResult sr = lr_search(objective, spec, tc.seed);
                tc.searched_lr = sr.best_lr;
                out.searched_lr = sr.best_lr;
            }

            PipelineModel model = assemble(best_imputer, plan, head_seed);
            TrainHistory hist = train_pipeline(model, train_b, val_b, tc);
            double test_auc = auroc(forward_classify(model, test_b), test_b.labels);

            RunKey key{model_name(plan), lr_strategy_name(strat),
                       policy_name(plan.weight_policy)};
            out.aurocs[key] = {hist.best_val_auroc, test_auc};
            out.params[key] = param_count(resolve_head(plan.head, best_imputer.config),
                                          plan.weight_policy,
                                          best_imputer.params.total_parameters());
            if (!cfg.history_dir.empty()) {
                fs::create_directories(cfg.history_dir);
                std::string fn = key.model + "_" + key.weight_policy + "_" + key.lr_strategy +
                                 "_fold" + std::to_string(fold.fold_index) + ".jsonl";
                write_history_jsonl((fs::path(cfg.history_dir) / fn).string(), hist);
            }
        }
    }
    return out;
}

}  // namespace

MetricsReport run_cv(const RawGrid& grid, const std::vector<FinetunePlan>& plans,
                     const std::vector<LrStrategy>& strategies, const CvConfig& cfg,
                     const std::string& dataset_name) {
    Rng root(cfg.seed);
    auto folds = kfold_split(grid.n(), cfg.folds, root.derive("folds").next_u64());

    std::vector<FoldOutcome> outcomes(folds.size());
    int par = std::max(1, cfg.parallelism);
    std::vector<std::exception_ptr> errors(folds.size());
    for (size_t start = 0; start < folds.size(); start += par) {
        std::vector<std::thread> threads;
        for (size_t f = start; f < std::min(folds.size(), start + par); ++f) {
            threads.emplace_back([&, f] {
                try {
                    outcomes[f] = run_fold(grid, folds[f], plans, strategies, cfg);
                } catch (...) {
                    errors[f] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    MetricsReport report;
    report.dataset_name = dataset_name;
    report.folds = static_cast<int>(folds.size());
    for (const auto& o : outcomes) {
        report.imputation_per_fold.push_back(o.imputation);
        if (o.searched_lr > 0) report.searched_lr_per_fold.push_back(o.searched_lr);
        for (const auto& [key, vt] : o.aurocs) {
            RunResult& r = report.runs[key];
            r.val_auroc_per_fold.push_back(vt.first);
            r.test_auroc_per_fold.push_back(vt.second);
            r.trainable_params = o.params.at(key);
        }
    }
    return report;
}

namespace {

// AUC values reported externally for the full credentialed datasets.
// Shipped for side-by-side display only; never produced by this code.
constexpr const char* kReferenceResults =
    "policy,model,dataset,searched_val,searched_test,cyclic_val,cyclic_test,plateau_val,plateau_test,avg_val,avg_test\n"
    "frozen,mlp2,physionet2012,0.783,0.777,0.786,0.782,0.783,0.778,0.784,0.779\n"
    "frozen,mlp5,physionet2012,0.780,0.768,0.789,0.763,0.786,0.764,0.785,0.765\n"
    "frozen,lstm1,physionet2012,0.785,0.780,0.803,0.777,0.802,0.786,0.797,0.781\n"
    "frozen,gru1,physionet2012,0.783,0.758,0.800,0.786,0.798,0.792,0.794,0.779\n"
    "frozen,mlp2,mimic3_89,0.766,0.755,0.765,0.754,0.766,0.756,0.766,0.755\n"
    "frozen,mlp5,mimic3_89,0.739,0.720,0.755,0.694,0.751,0.705,0.748,0.706\n"
    "frozen,lstm1,mimic3_89,0.818,0.787,0.834,0.791,0.830,0.806,0.827,0.795\n"
    "frozen,gru1,mimic3_89,0.810,0.782,0.834,0.775,0.832,0.792,0.825,0.783\n"
    "unfrozen,mlp2,physionet2012,0.811,0.797,0.823,0.786,0.821,0.810,0.818,0.798\n"
    "unfrozen,mlp5,physionet2012,0.812,0.805,0.828,0.769,0.823,0.804,0.821,0.793\n"
    "unfrozen,lstm1,physionet2012,0.803,0.805,0.820,0.779,0.817,0.778,0.813,0.787\n"
    "unfrozen,gru1,physionet2012,0.813,0.778,0.821,0.774,0.817,0.780,0.817,0.777\n"
    "unfrozen,mlp2,mimic3_89,0.832,0.815,0.844,0.822,0.841,0.820,0.839,0.819\n"
    "unfrozen,mlp5,mimic3_89,0.825,0.759,0.837,0.793,0.833,0.793,0.832,0.782\n"
    "unfrozen,lstm1,mimic3_89,0.824,0.816,0.835,0.787,0.839,0.788,0.833,0.797\n"
    "unfrozen,gru1,mimic3_89,0.826,0.809,0.841,0.809,0.847,0.773,0.838,0.797\n";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void emit_report(const MetricsReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    // Per-fold CSV.
    {
        std::ofstream os(dir / "report.csv");
        if (!os) throw Error("emit_report: cannot write " + (dir / "report.csv").string());
        os << "dataset,model,policy,lr_strategy,fold,val_auroc,test_auroc,trainable_params\n";
        for (const auto& [key, r] : report.runs) {
            for (size_t f = 0; f < r.val_auroc_per_fold.size(); ++f)
                os << report.dataset_name << ',' << key.model << ',' << key.weight_policy << ','
                   << key.lr_strategy << ',' << f << ',' << fmt(r.val_auroc_per_fold[f]) << ','
                   << fmt(r.test_auroc_per_fold[f]) << ',' << r.trainable_params << '\n';
            os << report.dataset_name << ',' << key.model << ',' << key.weight_policy << ','
               << key.lr_strategy << ",mean," << fmt(r.mean_val_auroc()) << ','
               << fmt(r.mean_test_auroc()) << ',' << r.trainable_params << '\n';
        }
    }

    // Params-vs-AUC CSV, strategies averaged per (model, policy).
    {
        std::ofstream os(dir / "params_vs_auc.csv");
        os << "model,policy,trainable_params,avg_val_auroc,avg_test_auroc\n";
        std::map<std::pair<std::string, std::string>,
                 std::tuple<int64_t, std::vector<double>, std::vector<double>>>
            grouped;
        for (const auto& [key, r] : report.runs) {
            auto& g = grouped[{key.model, key.weight_policy}];
            std::get<0>(g) = r.trainable_params;
            std::get<1>(g).push_back(r.mean_val_auroc());
            std::get<2>(g).push_back(r.mean_test_auroc());
        }
        auto avg = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double x : v) s += x;
            return v.empty() ? 0.0 : s / v.size();
        };
        for (const auto& [mk, g] : grouped)
            os << mk.first << ',' << mk.second << ',' << std::get<0>(g) << ','
               << fmt(avg(std::get<1>(g))) << ',' << fmt(avg(std::get<2>(g))) << '\n';
    }

    // Markdown summary shaped like the strategy-per-column AUC tables.
    {
        std::ofstream os(dir / "report.md");
        os << "# Results: " << report.dataset_name << "\n\n";
        os << "Mean over " << report.folds << " folds.\n\n";
        os << "| Model | Policy | Searched Val/Test | Cyclic Val/Test | Plateau Val/Test | "
              "Average Val/Test | Params |\n";
        os << "|---|---|---|---|---|---|---|\n";
        std::map<std::pair<std::string, std::string>, std::map<std::string, const RunResult*>>
            grouped;
        for (const auto& [key, r] : report.runs)
            grouped[{key.model, key.weight_policy}][key.lr_strategy] = &r;
        for (const auto& [mk, by_strat] : grouped) {
            os << "| " << mk.first << " | " << mk.second << " |";
            double val_sum = 0.0, test_sum = 0.0;
            int cnt = 0;
            int64_t params = 0;
            for (const char* strat : {"searched", "cyclic", "plateau"}) {
                auto it = by_strat.find(strat);
                if (it == by_strat.end()) {
                    os << " - |";
                } else {
                    os << ' ' << fmt(it->second->mean_val_auroc()) << " / "
                       << fmt(it->second->mean_test_auroc()) << " |";
                    val_sum += it->second->mean_val_auroc();
                    test_sum += it->second->mean_test_auroc();
                    params = it->second->trainable_params;
                    ++cnt;
                }
            }
            os << ' ' << fmt(cnt ? val_sum / cnt : 0.0) << " / " << fmt(cnt ? test_sum / cnt : 0.0)
               << " | " << params << " |\n";
        }
        os << "\n## Imputation quality (test eval mask, per fold)\n\n";
        os << "| Fold | MAE | RMSE | MRE |\n|---|---|---|---|\n";
        for (size_t f = 0; f < report.imputation_per_fold.size(); ++f) {
            const auto& m = report.imputation_per_fold[f];
            os << "| " << f << " | " << fmt(m.mae) << " | " << fmt(m.rmse) << " | "
               << (m.mre ? fmt(*m.mre) : std::string("undefined")) << " |\n";
        }
        os << "\nExternally reported results for the full credentialed datasets are in "
              "`reference_results.csv` (for comparison only; not produced by this pipeline).\n";
    }

    {
        std::ofstream os(dir / "reference_results.csv");
        os << kReferenceResults;
    }
}

}  // namespace tsimp
