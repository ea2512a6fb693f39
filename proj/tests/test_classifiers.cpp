#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tsimp/classifiers.hpp"
#include "test_util.hpp"

using namespace tsimp;
using tsimp::test::random_batch;

namespace {

Imputer toy_imputer(int d, uint64_t seed) {
    ImputerConfig c;
    c.d_features = d;
    c.hidden = 6;
    c.embed_dim = 4;
    c.seed = seed;
    return Imputer::init(c);
}

}  // namespace

TEST_CASE("parameter counts match the published totals under default dims") {
    // 35 clinical features + hour channel = input 36; recurrent hidden 108;
    // the MLP2 head reads the 108-dim final hidden state through width 128.
    HeadSpec mlp2{HeadKind::MLP2, 108, 128, 108};
    CHECK(param_count(mlp2) == 14081);
    HeadSpec lstm{HeadKind::LSTM1, 36, 128, 108};
    CHECK(param_count(lstm) == 76721);
    HeadSpec gru{HeadKind::GRU1, 36, 128, 108};
    CHECK(param_count(gru) == 61061);
}

TEST_CASE("build_head allocates exactly param_count parameters") {
    for (HeadKind k : {HeadKind::MLP2, HeadKind::MLP5, HeadKind::LSTM1, HeadKind::GRU1,
                       HeadKind::LINEAR}) {
        HeadSpec s{k, 20, 32, 12};
        ParamStore ps = build_head(s, 1);
        INFO("kind: " << head_kind_name(k));
        CHECK(ps.total_parameters() == param_count(s));
    }
}

TEST_CASE("unfrozen counts add the imputer parameters") {
    HeadSpec s{HeadKind::MLP2, 12, 16, 12};
    CHECK(param_count(s, WeightPolicy::Frozen, 999) == param_count(s));
    CHECK(param_count(s, WeightPolicy::Unfrozen, 999) == param_count(s) + 999);
}

TEST_CASE("resolve_head fills dimensions from the imputer") {
    ImputerConfig ic;
    ic.d_features = 5;
    ic.hidden = 6;
    HeadSpec mlp{HeadKind::MLP2, 0, 128, 0};
    HeadSpec r = resolve_head(mlp, ic);
    CHECK(r.input_dim == 12);  // 2 * hidden
    HeadSpec rnn{HeadKind::GRU1, 0, 128, 0};
    HeadSpec r2 = resolve_head(rnn, ic);
    CHECK(r2.input_dim == 6);  // d_features + 1 (hour channel)
    CHECK(r2.rnn_hidden == 6);
}

TEST_CASE("assemble rejects head/strategy mismatches") {
    Imputer imp = toy_imputer(4, 1);
    FinetunePlan bad1;
    bad1.head.kind = HeadKind::GRU1;
    bad1.head.input_dim = 0;
    bad1.head.rnn_hidden = 0;
    bad1.input_strategy = InputStrategy::HiddenStates;
    CHECK_THROWS_AS(assemble(imp, bad1, 1), Error);

    FinetunePlan bad2;
    bad2.head.kind = HeadKind::MLP2;
    bad2.head.input_dim = 0;
    bad2.input_strategy = InputStrategy::ImputedWithHiddenInit;
    CHECK_THROWS_AS(assemble(imp, bad2, 1), Error);

    FinetunePlan bad3;
    bad3.head.kind = HeadKind::LSTM1;
    bad3.head.input_dim = 7;  // d_features + 1 would be 5
    bad3.head.rnn_hidden = 0;
    bad3.input_strategy = InputStrategy::ImputedWithHiddenInit;
    CHECK_THROWS_AS(assemble(imp, bad3, 1), Error);
}

TEST_CASE("every head/strategy combination produces finite probabilities") {
    Imputer imp = toy_imputer(4, 3);
    Rng rng(4);
    TimeSeriesBatch b = random_batch(5, 6, 4, 0.3, rng);
    struct Combo {
        HeadKind kind;
        InputStrategy strategy;
    };
    std::vector<Combo> combos = {
        {HeadKind::MLP2, InputStrategy::HiddenStates},
        {HeadKind::MLP5, InputStrategy::HiddenStates},
        {HeadKind::LINEAR, InputStrategy::HiddenStates},
        {HeadKind::LSTM1, InputStrategy::ImputedWithHiddenInit},
        {HeadKind::GRU1, InputStrategy::ImputedWithHiddenInit},
        {HeadKind::GRU1, InputStrategy::RawWithHiddenInit},
    };
    for (WeightPolicy pol : {WeightPolicy::Frozen, WeightPolicy::Unfrozen}) {
        for (const Combo& c : combos) {
            FinetunePlan plan;
            plan.head.kind = c.kind;
            plan.head.input_dim = 0;
            plan.head.rnn_hidden = 0;
            plan.head.hidden_width = 8;
            plan.weight_policy = pol;
            plan.input_strategy = c.strategy;
            PipelineModel m = assemble(imp, plan, 7);
            Array probs = forward_classify(m, b);
            INFO(head_kind_name(c.kind) << " " << strategy_name(c.strategy) << " "
                                        << policy_name(pol));
            REQUIRE(probs.size() == 5);
            for (int i = 0; i < probs.size(); ++i) {
                CHECK(probs[i] > 0.0f);
                CHECK(probs[i] < 1.0f);
            }
        }
    }
}

TEST_CASE("frozen forward uses precomputed outputs identically") {
    Imputer imp = toy_imputer(3, 9);
    Rng rng(10);
    TimeSeriesBatch b = random_batch(4, 5, 3, 0.25, rng);
    FinetunePlan plan;
    plan.head.kind = HeadKind::MLP2;
    plan.head.input_dim = 0;
    plan.head.hidden_width = 8;
    PipelineModel m = assemble(imp, plan, 2);

    ImputerOutput cached = m.imputer.forward(b);
    Tape t1, t2;
    PipelineForward a = pipeline_forward(t1, m, b, &cached);
    PipelineForward c = pipeline_forward(t2, m, b, nullptr);
    for (int i = 0; i < t1.value(a.logits).size(); ++i)
        CHECK(t1.value(a.logits)[i] == t2.value(c.logits)[i]);
    CHECK(a.imputer_vars.empty());  // frozen: imputer exposes no trainable leaves
}

TEST_CASE("MLP head gradients pass finite differences") {
    HeadSpec spec{HeadKind::MLP2, 6, 5, 6};
    ParamStore head = build_head(spec, 3);
    Array feats({4, 6});
    Rng frng(2);
    for (int i = 0; i < feats.size(); ++i) feats[i] = frng.uniform(-1.0f, 1.0f);
    Array labels({4, 1});
    labels[1] = 1;
    labels[3] = 1;
    for (const std::string& pname : head.names()) {
        auto f = [&](Tape& t, Var x) {
            std::map<std::string, Var> pv;
            for (const auto& [n, slot] : head)
                pv[n] = (n == pname) ? x : t.constant(slot.value);
            return t.bce_with_logits(head_forward(t, spec, pv, t.constant(feats)), labels);
        };
        INFO("param: " << pname);
        CHECK(grad_check(f, head.at(pname), 1e-2f) < 1e-3f);
    }
}

TEST_CASE("export_features writes the expected table shape") {
    Imputer imp = toy_imputer(3, 12);
    Rng rng(13);
    TimeSeriesBatch b = random_batch(3, 4, 3, 0.3, rng);
    auto dir = std::filesystem::temp_directory_path();
    auto hidden_path = dir / "tsimp_feats_hidden.csv";
    auto imputed_path = dir / "tsimp_feats_imputed.csv";
    export_features(imp, b, {"r0", "r1", "r2"}, FeatureKind::Hidden, hidden_path.string());
    export_features(imp, b, {"r0", "r1", "r2"}, FeatureKind::Imputed, imputed_path.string());

    auto count_cols = [](const std::filesystem::path& p) {
        std::ifstream is(p);
        std::string header;
        std::getline(is, header);
        int commas = 0;
        for (char ch : header) commas += ch == ',';
        int rows = 0;
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) ++rows;
        return std::pair<int, int>(commas + 1, rows);
    };
    auto [hc, hr] = count_cols(hidden_path);
    CHECK(hc == 2 * 6 + 2);  // record_id + 2*hidden + label
    CHECK(hr == 3);
    auto [ic, ir] = count_cols(imputed_path);
    CHECK(ic == 4 * 3 + 2);  // record_id + T*D + label
    CHECK(ir == 3);
    std::filesystem::remove(hidden_path);
    std::filesystem::remove(imputed_path);
}

TEST_CASE("subset_batch and subset_output pick matching rows") {
    Imputer imp = toy_imputer(3, 14);
    Rng rng(15);
    TimeSeriesBatch b = random_batch(5, 4, 3, 0.3, rng);
    ImputerOutput full = imp.forward(b);
    std::vector<int> rows = {4, 1};
    TimeSeriesBatch sb = subset_batch(b, rows);
    ImputerOutput so = subset_output(full, rows);
    ImputerOutput direct = imp.forward(sb);
    CHECK(sb.labels[0] == b.labels[4]);
    CHECK(sb.labels[1] == b.labels[1]);
    // Hidden state of a row does not depend on the other rows in the batch.
    for (int i = 0; i < so.hidden_last_fwd.size(); ++i)
        CHECK(so.hidden_last_fwd[i] == doctest::Approx(direct.hidden_last_fwd[i]).epsilon(1e-5));
}
