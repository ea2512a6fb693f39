#include "tsimp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tsimp {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw Error("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get_or(const json& obj, const char* key, T def) {
    auto it = obj.find(key);
    return it == obj.end() ? def : it->get<T>();
}

HeadKind parse_head_kind(const std::string& s) {
    if (s == "mlp2") return HeadKind::MLP2;
    if (s == "mlp5") return HeadKind::MLP5;
    if (s == "lstm1") return HeadKind::LSTM1;
    if (s == "gru1") return HeadKind::GRU1;
    if (s == "linear") return HeadKind::LINEAR;
    throw Error("config: unknown head kind '" + s + "' (mlp2|mlp5|lstm1|gru1|linear)");
}

InputStrategy parse_strategy(const std::string& s) {
    if (s == "hidden_states") return InputStrategy::HiddenStates;
    if (s == "imputed_hidden_init") return InputStrategy::ImputedWithHiddenInit;
    if (s == "raw_hidden_init") return InputStrategy::RawWithHiddenInit;
    throw Error("config: unknown input strategy '" + s + "'");
}

LrStrategy parse_lr_strategy(const std::string& s) {
    if (s == "cyclic") return LrStrategy::Cyclic;
    if (s == "plateau") return LrStrategy::Plateau;
    if (s == "searched") return LrStrategy::Searched;
    throw Error("config: unknown lr strategy '" + s + "' (cyclic|plateau|searched)");
}

WeightMode parse_weight_mode(const std::string& s) {
    if (s == "uniform") return WeightMode::Uniform;
    if (s == "inverse_missing_rate") return WeightMode::InverseMissingRate;
    if (s == "explicit") return WeightMode::Explicit;
    throw Error("config: unknown mask weight mode '" + s + "'");
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw Error("config: " + msg);
    };
    require(c.folds >= 2, "folds must be >= 2");
    require(c.parallelism >= 1, "parallelism must be >= 1");
    require(c.mask_plan.rate > 0 && c.mask_plan.rate < 1, "mask.rate must be in (0,1)");
    require(c.imputer.hidden > 0, "imputer.hidden must be positive");
    require(c.imputer.embed_dim > 0 && c.imputer.embed_dim % 2 == 0,
            "imputer.embed_dim must be a positive even number");
    require(c.trainer.max_epochs >= 1, "trainer.max_epochs must be >= 1");
    require(c.trainer.batch_size >= 1, "trainer.batch_size must be >= 1");
    require(c.trainer.base_lr > 0 && c.trainer.base_lr <= c.trainer.max_lr,
            "trainer.base_lr must be positive and <= max_lr");
    require(c.trainer.early_stop_patience >= 1, "trainer.early_stop_patience must be >= 1");
    require(c.trainer.plateau.factor > 0 && c.trainer.plateau.factor < 1,
            "plateau.factor must be in (0,1)");
    require(c.trainer.plateau.patience >= 1, "plateau.patience must be >= 1");
    require(c.search.n_trials >= 1, "search.n_trials must be >= 1");
    require(c.search.lr_lo > 0 && c.search.lr_lo <= c.search.lr_hi,
            "search lr range must be positive and ordered");
    require(!c.search.rungs.empty(), "search.rungs must be non-empty");
    for (size_t i = 1; i < c.search.rungs.size(); ++i)
        require(c.search.rungs[i] > c.search.rungs[i - 1], "search.rungs must be increasing");
    require(c.search.eta >= 2, "search.eta must be >= 2");
    require(c.pretrain_epochs >= 0, "pretrain.epochs must be >= 0");
    require(c.pretrain_lr > 0, "pretrain.lr must be positive");
    require(c.synth.d >= 2, "synth.d must be >= 2");
    require(c.synth.missing_rate >= 0 && c.synth.missing_rate < 1,
            "synth.missing_rate must be in [0,1)");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error("config: " + origin + " is not valid JSON: " + e.what());
    }
    check_keys(j, {"seed", "out_dir", "parallelism", "folds", "dataset", "synth", "imputer",
                   "mask", "trainer", "search", "pretrain", "plans", "strategies"},
               origin);

    RunConfig c;
    c.seed = get_or<uint64_t>(j, "seed", 0);
    c.out_dir = get_or<std::string>(j, "out_dir", "out");
    c.parallelism = get_or<int>(j, "parallelism", 1);
    c.folds = get_or<int>(j, "folds", 5);

    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        check_keys(d, {"events", "labels", "features"}, "dataset");
        c.events_path = get_or<std::string>(d, "events", "");
        c.labels_path = get_or<std::string>(d, "labels", "");
        c.feature_vocab = get_or<std::vector<std::string>>(d, "features", {});
    }
    if (j.contains("synth")) {
        const json& s = j["synth"];
        check_keys(s, {"n", "d", "missing_rate"}, "synth");
        c.synth.n = get_or<int>(s, "n", 500);
        c.synth.d = get_or<int>(s, "d", 8);
        c.synth.missing_rate = get_or<double>(s, "missing_rate", 0.4);
    }
    if (j.contains("imputer")) {
        const json& i = j["imputer"];
        check_keys(i, {"hidden", "embed_dim", "attention_heads", "conditional_init",
                       "consistency_weight"},
                   "imputer");
        c.imputer.hidden = get_or<int>(i, "hidden", 108);
        c.imputer.embed_dim = get_or<int>(i, "embed_dim", 64);
        c.imputer.attention_heads = get_or<int>(i, "attention_heads", 1);
        c.imputer.conditional_init = get_or<bool>(i, "conditional_init", true);
        c.imputer.consistency_weight = get_or<float>(i, "consistency_weight", 0.1f);
    }
    if (j.contains("mask")) {
        const json& m = j["mask"];
        check_keys(m, {"rate", "weight_mode", "weights"}, "mask");
        c.mask_plan.rate = get_or<double>(m, "rate", 0.10);
        c.mask_plan.weight_mode =
            parse_weight_mode(get_or<std::string>(m, "weight_mode", "inverse_missing_rate"));
        if (m.contains("weights")) {
            auto w = m["weights"].get<std::vector<float>>();
            c.mask_plan.explicit_weights = Array::from({static_cast<int>(w.size())}, w);
        }
    }
    if (j.contains("trainer")) {
        const json& t = j["trainer"];
        check_keys(t, {"max_epochs", "batch_size", "lr_strategy", "base_lr", "max_lr", "gamma",
                       "cyclic_step_size", "plateau", "searched_lr", "early_stop_patience"},
                   "trainer");
        c.trainer.max_epochs = get_or<int>(t, "max_epochs", 200);
        c.trainer.batch_size = get_or<int>(t, "batch_size", 64);
        c.trainer.lr_strategy = parse_lr_strategy(get_or<std::string>(t, "lr_strategy", "plateau"));
        c.trainer.base_lr = get_or<double>(t, "base_lr", 1e-5);
        c.trainer.max_lr = get_or<double>(t, "max_lr", 1e-3);
        c.trainer.gamma = get_or<double>(t, "gamma", 0.9999);
        c.trainer.cyclic_step_size = get_or<int>(t, "cyclic_step_size", 0);
        c.trainer.searched_lr = get_or<double>(t, "searched_lr", 1e-3);
        c.trainer.early_stop_patience = get_or<int>(t, "early_stop_patience", 25);
        if (t.contains("plateau")) {
            const json& p = t["plateau"];
            check_keys(p, {"factor", "patience", "min_lr", "initial_lr", "threshold"},
                       "trainer.plateau");
            c.trainer.plateau.factor = get_or<double>(p, "factor", 0.2);
            c.trainer.plateau.patience = get_or<int>(p, "patience", 15);
            c.trainer.plateau.min_lr = get_or<double>(p, "min_lr", 1e-5);
            c.trainer.plateau.initial_lr = get_or<double>(p, "initial_lr", 1e-3);
            c.trainer.plateau.threshold = get_or<double>(p, "threshold", 1e-4);
        }
    }
    if (j.contains("search")) {
        const json& s = j["search"];
        check_keys(s, {"n_trials", "lr_lo", "lr_hi", "rungs", "eta"}, "search");
        c.search.n_trials = get_or<int>(s, "n_trials", 20);
        c.search.lr_lo = get_or<double>(s, "lr_lo", 1e-5);
        c.search.lr_hi = get_or<double>(s, "lr_hi", 1e-3);
        c.search.rungs = get_or<std::vector<int>>(s, "rungs", {5, 15, 45});
        c.search.eta = get_or<int>(s, "eta", 3);
    }
    if (j.contains("pretrain")) {
        const json& p = j["pretrain"];
        check_keys(p, {"epochs", "lr"}, "pretrain");
        c.pretrain_epochs = get_or<int>(p, "epochs", 30);
        c.pretrain_lr = get_or<double>(p, "lr", 1e-3);
    }
    if (j.contains("plans")) {
        for (const json& p : j["plans"]) {
            check_keys(p, {"head", "policy", "strategy", "hidden_width", "rnn_hidden"}, "plans[]");
            FinetunePlan plan;
            plan.head.kind = parse_head_kind(p.at("head").get<std::string>());
            plan.head.hidden_width = get_or<int>(p, "hidden_width", 128);
            plan.head.rnn_hidden = get_or<int>(p, "rnn_hidden", 0);  // 0 = imputer hidden
            std::string pol = get_or<std::string>(p, "policy", "frozen");
            if (pol != "frozen" && pol != "unfrozen")
                throw Error("config: policy must be frozen|unfrozen, got '" + pol + "'");
            plan.weight_policy = pol == "frozen" ? WeightPolicy::Frozen : WeightPolicy::Unfrozen;
            bool rnn = plan.head.kind == HeadKind::LSTM1 || plan.head.kind == HeadKind::GRU1;
            plan.input_strategy = parse_strategy(get_or<std::string>(
                p, "strategy", rnn ? "imputed_hidden_init" : "hidden_states"));
            c.plans.push_back(plan);
        }
    }
    if (c.plans.empty()) {
        FinetunePlan plan;
        plan.head.kind = HeadKind::MLP2;
        plan.weight_policy = WeightPolicy::Frozen;
        plan.input_strategy = InputStrategy::HiddenStates;
        c.plans.push_back(plan);
    }
    if (j.contains("strategies"))
        for (const json& s : j["strategies"])
            c.strategies.push_back(parse_lr_strategy(s.get<std::string>()));
    if (c.strategies.empty()) c.strategies.push_back(LrStrategy::Plateau);

    validate(c);
    return c;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["parallelism"] = c.parallelism;
    j["folds"] = c.folds;
    j["dataset"] = {{"events", c.events_path}, {"labels", c.labels_path},
                    {"features", c.feature_vocab}};
    j["synth"] = {{"n", c.synth.n}, {"d", c.synth.d}, {"missing_rate", c.synth.missing_rate}};
    j["imputer"] = {{"hidden", c.imputer.hidden},
                    {"embed_dim", c.imputer.embed_dim},
                    {"attention_heads", c.imputer.attention_heads},
                    {"conditional_init", c.imputer.conditional_init},
                    {"consistency_weight", c.imputer.consistency_weight}};
    json mask = {{"rate", c.mask_plan.rate}};
    switch (c.mask_plan.weight_mode) {
        case WeightMode::Uniform: mask["weight_mode"] = "uniform"; break;
        case WeightMode::InverseMissingRate: mask["weight_mode"] = "inverse_missing_rate"; break;
        case WeightMode::Explicit: mask["weight_mode"] = "explicit"; break;
    }
    if (c.mask_plan.explicit_weights.size() > 0) {
        std::vector<float> w(c.mask_plan.explicit_weights.data(),
                             c.mask_plan.explicit_weights.data() +
                                 c.mask_plan.explicit_weights.size());
        mask["weights"] = w;
    }
    j["mask"] = mask;
    j["trainer"] = {{"max_epochs", c.trainer.max_epochs},
                    {"batch_size", c.trainer.batch_size},
                    {"lr_strategy", lr_strategy_name(c.trainer.lr_strategy)},
                    {"base_lr", c.trainer.base_lr},
                    {"max_lr", c.trainer.max_lr},
                    {"gamma", c.trainer.gamma},
                    {"cyclic_step_size", c.trainer.cyclic_step_size},
                    {"searched_lr", c.trainer.searched_lr},
                    {"early_stop_patience", c.trainer.early_stop_patience},
                    {"plateau",
                     {{"factor", c.trainer.plateau.factor},
                      {"patience", c.trainer.plateau.patience},
                      {"min_lr", c.trainer.plateau.min_lr},
                      {"initial_lr", c.trainer.plateau.initial_lr},
                      {"threshold", c.trainer.plateau.threshold}}}};
    j["search"] = {{"n_trials", c.search.n_trials},
                   {"lr_lo", c.search.lr_lo},
                   {"lr_hi", c.search.lr_hi},
                   {"rungs", c.search.rungs},
                   {"eta", c.search.eta}};
    j["pretrain"] = {{"epochs", c.pretrain_epochs}, {"lr", c.pretrain_lr}};
    json plans = json::array();
    for (const auto& p : c.plans)
        plans.push_back({{"head", head_kind_name(p.head.kind)},
                         {"policy", policy_name(p.weight_policy)},
                         {"strategy", strategy_name(p.input_strategy)},
                         {"hidden_width", p.head.hidden_width},
                         {"rnn_hidden", p.head.rnn_hidden}});
    j["plans"] = plans;
    json strategies = json::array();
    for (LrStrategy s : c.strategies) strategies.push_back(lr_strategy_name(s));
    j["strategies"] = strategies;
    return j.dump(2) + "\n";
}

std::string report_to_json(const MetricsReport& r) {
    json j;
    j["dataset"] = r.dataset_name;
    j["folds"] = r.folds;
    json runs = json::array();
    for (const auto& [key, res] : r.runs)
        runs.push_back({{"model", key.model},
                        {"lr_strategy", key.lr_strategy},
                        {"weight_policy", key.weight_policy},
                        {"val_auroc", res.val_auroc_per_fold},
                        {"test_auroc", res.test_auroc_per_fold},
                        {"trainable_params", res.trainable_params}});
    j["runs"] = runs;
    json imp = json::array();
    for (const auto& m : r.imputation_per_fold) {
        json e = {{"mae", m.mae}, {"rmse", m.rmse}};
        if (m.mre) e["mre"] = *m.mre;
        imp.push_back(e);
    }
    j["imputation_per_fold"] = imp;
    j["searched_lr_per_fold"] = r.searched_lr_per_fold;
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    json j = json::parse(text);
    MetricsReport r;
    r.dataset_name = j.at("dataset").get<std::string>();
    r.folds = j.at("folds").get<int>();
    for (const json& run : j.at("runs")) {
        RunKey key{run.at("model").get<std::string>(), run.at("lr_strategy").get<std::string>(),
                   run.at("weight_policy").get<std::string>()};
        RunResult res;
        res.val_auroc_per_fold = run.at("val_auroc").get<std::vector<double>>();
        res.test_auroc_per_fold = run.at("test_auroc").get<std::vector<double>>();
        res.trainable_params = run.at("trainable_params").get<int64_t>();
        r.runs[key] = std::move(res);
    }
    for (const json& e : j.at("imputation_per_fold")) {
        ImputationMetrics m;
        m.mae = e.at("mae").get<double>();
        m.rmse = e.at("rmse").get<double>();
        if (e.contains("mre")) m.mre = e.at("mre").get<double>();
        r.imputation_per_fold.push_back(m);
    }
    r.searched_lr_per_fold = j.at("searched_lr_per_fold").get<std::vector<double>>();
    return r;
}

}  // namespace tsimp
