// Command-line front end: ingest | synth | pretrain | finetune | search |
// export-features | evaluate | report. Each stage reads the artifacts of
// the previous one from the configured output directory, so stages can run
// in separate processes with identical results.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsimp/config.hpp"

namespace fs = std::filesystem;
using namespace tsimp;

namespace {

RunConfig load_config(const std::string& path) {
    RunConfig cfg = parse_config(path);
    if (const char* out = std::getenv("TSIMP_OUT_DIR")) cfg.out_dir = out;
    if (const char* par = std::getenv("TSIMP_PARALLELISM")) cfg.parallelism = std::atoi(par);
    if (cfg.parallelism < 1) throw Error("TSIMP_PARALLELISM must be >= 1");
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream os(fs::path(cfg.out_dir) / "config_effective.json");
    os << config_to_json(cfg);
}

fs::path dataset_path(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "dataset.bin"; }
fs::path metrics_path(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "metrics.json"; }

void save_dataset(const RawGrid& grid, const fs::path& path) {
    ParamStore ps;
    ps.add("labels", grid.labels);
    ps.add("mask", grid.mask);
    ps.add("values", grid.values);
    nlohmann::json manifest = {{"model", "dataset"},
                               {"record_ids", grid.record_ids},
                               {"features", grid.feature_names}};
    save_checkpoint(path.string(), ps, manifest.dump());
}

RawGrid load_dataset(const RunConfig& cfg) {
    fs::path p = dataset_path(cfg);
    if (!fs::exists(p))
        throw Error("missing dataset artifact (run ingest or synth first): " + p.string());
    Checkpoint ck = load_checkpoint(p.string());
    nlohmann::json manifest = nlohmann::json::parse(ck.manifest_json);
    if (manifest.value("model", "") != "dataset")
        throw Error("not a dataset artifact: " + p.string());
    RawGrid g;
    g.record_ids = manifest.at("record_ids").get<std::vector<std::string>>();
    g.feature_names = manifest.at("features").get<std::vector<std::string>>();
    g.labels = ck.params.at("labels");
    g.mask = ck.params.at("mask");
    g.values = ck.params.at("values");
    return g;
}

CvConfig cv_config(const RunConfig& cfg) {
    CvConfig c;
    c.folds = cfg.folds;
    c.pretrain_epochs = cfg.pretrain_epochs;
    c.pretrain_lr = cfg.pretrain_lr;
    c.mask_plan = cfg.mask_plan;
    c.imputer = cfg.imputer;
    c.trainer = cfg.trainer;
    c.search = cfg.search;
    c.seed = cfg.seed;
    c.parallelism = cfg.parallelism;
    c.checkpoint_dir = (fs::path(cfg.out_dir) / "checkpoints").string();
    c.history_dir = (fs::path(cfg.out_dir) / "histories").string();
    return c;
}

void write_events_csv(const std::vector<EventRecord>& events, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << "record_id,t_hours,feature,value\n";
    char buf[64];
    for (const auto& e : events) {
        std::snprintf(buf, sizeof(buf), "%.9g,%s,%.9g", e.t_hours, e.feature.c_str(), e.value);
        os << e.record_id << ',' << buf << '\n';
    }
}

void write_labels_csv(const std::vector<std::pair<std::string, int>>& labels,
                      const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << "record_id,label\n";
    for (const auto& [id, lab] : labels) os << id << ',' << lab << '\n';
}

int cmd_ingest(const RunConfig& cfg) {
    if (cfg.events_path.empty() || cfg.labels_path.empty())
        throw Error("config: dataset.events and dataset.labels are required for ingest");
    std::ifstream ev(cfg.events_path);
    if (!ev) throw Error("cannot open events file: " + cfg.events_path);
    std::ifstream lb(cfg.labels_path);
    if (!lb) throw Error("cannot open labels file: " + cfg.labels_path);
    auto labels = parse_labels_csv(lb, cfg.labels_path);
    auto events = parse_events_csv(ev, cfg.events_path);
    RawGrid grid = bin_hourly(events, labels, cfg.feature_vocab);
    save_dataset(grid, dataset_path(cfg));
    std::cout << "ingested " << grid.n() << " records, " << grid.d() << " features -> "
              << dataset_path(cfg).string() << "\n";
    return 0;
}

int cmd_synth(const RunConfig& cfg) {
    SynthResult s = synth_generate(cfg.synth.n, cfg.synth.d, cfg.synth.missing_rate, cfg.seed);
    fs::path data_dir = fs::path(cfg.out_dir) / "data";
    fs::create_directories(data_dir);
    write_events_csv(s.events, data_dir / "events.csv");
    write_labels_csv(s.labels, data_dir / "labels.csv");
    RawGrid grid = bin_hourly(s.events, s.labels, {});
    save_dataset(grid, dataset_path(cfg));
    std::cout << "generated " << cfg.synth.n << " records (" << cfg.synth.d << " features, "
              << cfg.synth.missing_rate << " missing) -> " << data_dir.string() << " and "
              << dataset_path(cfg).string() << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    RawGrid grid = load_dataset(cfg);
    CvConfig cv = cv_config(cfg);
    auto folds = kfold_split(grid.n(), cv.folds, Rng(cv.seed).derive("folds").next_u64());
    for (const auto& fold : folds) {
        FoldData data = prepare_fold(grid, fold, cv);
        Imputer imp = pretrain_fold(grid, fold, data, cv);
        ImputationMetrics m = imputation_metrics(imp.forward(data.val_m).imputed,
                                                 data.val_m.ground_truth, data.val_m.eval_mask);
        std::cout << "fold " << fold.fold_index << ": val eval-mask MAE " << m.mae << "\n";
    }
    return 0;
}

std::vector<FinetunePlan> filter_plans(const RunConfig& cfg, const std::string& policy) {
    if (policy.empty()) return cfg.plans;
    WeightPolicy want = policy == "frozen" ? WeightPolicy::Frozen : WeightPolicy::Unfrozen;
    std::vector<FinetunePlan> out;
    for (const auto& p : cfg.plans)
        if (p.weight_policy == want) out.push_back(p);
    if (out.empty()) throw Error("no configured plan matches --policy " + policy);
    return out;
}

int run_evaluation(const RunConfig& cfg, const std::vector<FinetunePlan>& plans,
                   bool require_checkpoints) {
    RawGrid grid = load_dataset(cfg);
    CvConfig cv = cv_config(cfg);
    cv.require_checkpoints = require_checkpoints;
    MetricsReport report = run_cv(grid, plans, cfg.strategies, cv, "dataset");
    std::ofstream os(metrics_path(cfg));
    os << report_to_json(report);
    std::cout << "wrote " << metrics_path(cfg).string() << "\n";
    for (const auto& [key, r] : report.runs)
        std::cout << key.model << " " << key.weight_policy << " " << key.lr_strategy
                  << ": val " << r.mean_val_auroc() << " test " << r.mean_test_auroc() << "\n";
    return 0;
}

int cmd_search(const RunConfig& cfg, int plan_index, int fold_index) {
    if (plan_index < 0 || plan_index >= static_cast<int>(cfg.plans.size()))
        throw Error("--plan index out of range (have " + std::to_string(cfg.plans.size()) +
                    " plans)");
    RawGrid grid = load_dataset(cfg);
    CvConfig cv = cv_config(cfg);
    auto folds = kfold_split(grid.n(), cv.folds, Rng(cv.seed).derive("folds").next_u64());
    if (fold_index < 0 || fold_index >= static_cast<int>(folds.size()))
        throw Error("--fold index out of range");
    const FoldSplit& fold = folds[fold_index];
    FoldData data = prepare_fold(grid, fold, cv);
    Imputer imp = pretrain_fold(grid, fold, data, cv);
    const FinetunePlan& plan = cfg.plans[plan_index];

    Rng fold_rng = Rng(cv.seed).derive("fold", static_cast<uint64_t>(fold.fold_index));
    uint64_t seed = fold_rng.derive("search-cli").next_u64();
    auto objective = [&](double lr, int n_rungs) {
        PipelineModel m = assemble(imp, plan, seed);
        TrainerConfig tc = cfg.trainer;
        tc.lr_strategy = LrStrategy::Searched;
        tc.searched_lr = lr;
        tc.seed = seed;
        tc.max_epochs = cfg.search.rungs[n_rungs - 1];
        tc.early_stop_patience = tc.max_epochs + 1;
        TrainHistory h = train_pipeline(m, data.train, data.val, tc);
        std::vector<double> losses;
        for (int r = 0; r < n_rungs; ++r) losses.push_back(h.epochs[cfg.search.rungs[r] - 1].val_loss);
        return losses;
    };
    SearchResult sr = lr_search(objective, cfg.search, seed);

    fs::path log = fs::path(cfg.out_dir) / ("search_fold" + std::to_string(fold_index) + "_plan" +
                                            std::to_string(plan_index) + ".jsonl");
    std::ofstream os(log);
    for (const auto& t : sr.trials) {
        nlohmann::json j = {{"trial", t.trial},
                            {"lr", t.lr},
                            {"rung_losses", t.rung_losses},
                            {"pruned_at_rung", t.pruned_at_rung}};
        os << j.dump() << "\n";
    }
    std::cout << "best lr " << sr.best_lr << " (val loss " << sr.best_loss << "), trial log "
              << log.string() << "\n";
    return 0;
}

int cmd_export(const RunConfig& cfg, const std::string& kind, int fold_index) {
    RawGrid grid = load_dataset(cfg);
    CvConfig cv = cv_config(cfg);
    cv.require_checkpoints = true;
    auto folds = kfold_split(grid.n(), cv.folds, Rng(cv.seed).derive("folds").next_u64());
    if (fold_index < 0 || fold_index >= static_cast<int>(folds.size()))
        throw Error("--fold index out of range");
    const FoldSplit& fold = folds[fold_index];
    FoldData data = prepare_fold(grid, fold, cv);
    Imputer imp = pretrain_fold(grid, fold, data, cv);

    // Whole cohort, normalized with the fold's training statistics.
    std::vector<int> all_rows(grid.n());
    for (int i = 0; i < grid.n(); ++i) all_rows[i] = i;
    TimeSeriesBatch full = make_batch(grid, all_rows, data.stats);
    FeatureKind fk = kind == "imputed" ? FeatureKind::Imputed : FeatureKind::Hidden;
    fs::path out = fs::path(cfg.out_dir) /
                   ("features_" + kind + "_fold" + std::to_string(fold_index) + ".csv");
    export_features(imp, full, grid.record_ids, fk, out.string());
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_report(const RunConfig& cfg) {
    fs::path p = metrics_path(cfg);
    if (!fs::exists(p))
        throw Error("missing metrics artifact (run evaluate or finetune first): " + p.string());
    std::ifstream is(p);
    std::ostringstream ss;
    ss << is.rdbuf();
    MetricsReport report = report_from_json(ss.str());
    emit_report(report, cfg.out_dir);
    std::cout << "wrote report.md, report.csv, params_vs_auc.csv under " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinical time-series imputation pretraining and transfer pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string policy, kind = "hidden";
    int plan_index = 0, fold_index = 0;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
    };
    CLI::App* ingest = app.add_subcommand("ingest", "Parse events/labels CSVs into a grid");
    add_config(ingest);
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    add_config(synth);
    CLI::App* pretrain = app.add_subcommand("pretrain", "Pretrain the imputer per fold");
    add_config(pretrain);
    CLI::App* finetune = app.add_subcommand("finetune", "Fine-tune classifiers on checkpoints");
    add_config(finetune);
    finetune->add_option("--policy", policy, "frozen|unfrozen")
        ->check(CLI::IsMember({"frozen", "unfrozen"}));
    CLI::App* search = app.add_subcommand("search", "Learning-rate search for one plan/fold");
    add_config(search);
    search->add_option("--plan", plan_index, "Plan index in the config");
    search->add_option("--fold", fold_index, "Fold index");
    CLI::App* exportf = app.add_subcommand("export-features", "Write a static feature table");
    add_config(exportf);
    exportf->add_option("--kind", kind, "imputed|hidden")
        ->check(CLI::IsMember({"imputed", "hidden"}));
    exportf->add_option("--fold", fold_index, "Fold index");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Full cross-validated evaluation");
    add_config(evaluate);
    CLI::App* report = app.add_subcommand("report", "Emit tables from metrics.json");
    add_config(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = load_config(config_path);
        echo_config(cfg);
        if (app.got_subcommand(ingest)) return cmd_ingest(cfg);
        if (app.got_subcommand(synth)) return cmd_synth(cfg);
        if (app.got_subcommand(pretrain)) return cmd_pretrain(cfg);
        if (app.got_subcommand(finetune))
            return run_evaluation(cfg, filter_plans(cfg, policy), true);
        if (app.got_subcommand(search)) return cmd_search(cfg, plan_index, fold_index);
        if (app.got_subcommand(exportf)) return cmd_export(cfg, kind, fold_index);
        if (app.got_subcommand(evaluate)) return run_evaluation(cfg, cfg.plans, false);
        if (app.got_subcommand(report)) return cmd_report(cfg);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
