#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tsimp/evaluation.hpp"
#include "tsimp/config.hpp"

using namespace tsimp;
namespace fs = std::filesystem;

namespace {

// O(N^2) pair-counting oracle: ties contribute half a pair.
double auroc_oracle(const Array& scores, const Array& labels) {
    double wins = 0.0, pairs = 0.0;
    for (int i = 0; i < scores.size(); ++i)
        for (int j = 0; j < scores.size(); ++j) {
            if (labels[i] > 0.5f && labels[j] <= 0.5f) {
                pairs += 1.0;
                if (scores[i] > scores[j]) wins += 1.0;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        }
    return wins / pairs;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

}  // namespace

TEST_CASE("auroc hand examples") {
    Array s = Array::from({4}, {0.9f, 0.8f, 0.2f, 0.1f});
    CHECK(auroc(s, Array::from({4}, {1, 1, 0, 0})) == doctest::Approx(1.0));
    CHECK(auroc(s, Array::from({4}, {1, 0, 1, 0})) == doctest::Approx(0.75));
    Array flat = Array::from({4}, {0.5f, 0.5f, 0.5f, 0.5f});
    CHECK(auroc(flat, Array::from({4}, {1, 0, 1, 0})) == doctest::Approx(0.5));
    CHECK_THROWS_AS(auroc(s, Array::from({4}, {1, 1, 1, 1})), Error);
}

TEST_CASE("auroc matches the pair-counting oracle on 100 random instances with ties") {
    Rng rng(2024);
    for (int inst = 0; inst < 100; ++inst) {
        int n = 2 + static_cast<int>(rng.below(199));
        Array scores({n}), labels({n});
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            // Coarse quantization forces frequent ties.
            scores[i] = static_cast<float>(rng.below(10)) / 10.0f;
            labels[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
            has0 = has0 || labels[i] < 0.5f;
            has1 = has1 || labels[i] > 0.5f;
        }
        if (!has0) labels[0] = 0.0f;
        if (!has1) labels[n - 1] = 1.0f;
        CHECK(auroc(scores, labels) == doctest::Approx(auroc_oracle(scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("auroc is invariant under monotone transforms and complements under negation") {
    Rng rng(5);
    int n = 50;
    Array scores({n}), labels({n}), mono({n}), neg({n});
    for (int i = 0; i < n; ++i) {
        scores[i] = static_cast<float>(rng.normal());
        labels[i] = i % 3 == 0 ? 1.0f : 0.0f;
        mono[i] = std::exp(scores[i]) + 3.0f;  // strictly increasing
        neg[i] = -scores[i];
    }
    double a = auroc(scores, labels);
    CHECK(auroc(mono, labels) == doctest::Approx(a).epsilon(1e-12));
    CHECK(auroc(neg, labels) == doctest::Approx(1.0 - a).epsilon(1e-12));
}

TEST_CASE("imputation metrics hand values and the undefined MRE marker") {
    Array imputed = Array::from({1, 1, 1}, {2.0f});
    Array truth = Array::from({1, 1, 1}, {4.0f});
    Array em = Array::from({1, 1, 1}, {1.0f});
    ImputationMetrics m = imputation_metrics(imputed, truth, em);
    CHECK(m.mae == doctest::Approx(2.0));
    CHECK(m.rmse == doctest::Approx(2.0));
    REQUIRE(m.mre.has_value());
    CHECK(*m.mre == doctest::Approx(0.5));

    // Perfect imputation.
    ImputationMetrics p = imputation_metrics(truth, truth, em);
    CHECK(p.mae == doctest::Approx(0.0));
    CHECK(p.rmse == doctest::Approx(0.0));

    // Sum|x| = 0: MRE is absent, not a division artifact.
    Array zt = Array::from({1, 1, 1}, {0.0f});
    ImputationMetrics z = imputation_metrics(imputed, zt, em);
    CHECK(!z.mre.has_value());

    Array none = Array::from({1, 1, 1}, {0.0f});
    CHECK_THROWS_AS(imputation_metrics(imputed, truth, none), Error);

    // RMSE >= MAE on a multi-cell example.
    Array i2 = Array::from({1, 1, 3}, {1.0f, 5.0f, 2.0f});
    Array t2 = Array::from({1, 1, 3}, {0.0f, 0.0f, 0.0f});
    Array e2 = Array::from({1, 1, 3}, {1.0f, 1.0f, 1.0f});
    ImputationMetrics m2 = imputation_metrics(i2, t2, e2);
    CHECK(m2.rmse >= m2.mae);
}

TEST_CASE("emit_report writes deterministic tables with expected shapes") {
    MetricsReport rep;
    rep.dataset_name = "toy";
    rep.folds = 2;
    for (const char* strat : {"searched", "cyclic", "plateau"}) {
        RunResult r;
        r.val_auroc_per_fold = {0.8, 0.82};
        r.test_auroc_per_fold = {0.78, 0.8};
        r.trainable_params = 14081;
        rep.runs[RunKey{"mlp2", strat, "frozen"}] = r;
    }
    ImputationMetrics im;
    im.mae = 0.3;
    im.rmse = 0.4;
    im.mre = 0.5;
    rep.imputation_per_fold = {im, im};

    fs::path dir = fs::temp_directory_path() / "tsimp_report_test";
    fs::remove_all(dir);
    emit_report(rep, dir.string());
    for (const char* f : {"report.md", "report.csv", "params_vs_auc.csv",
                          "reference_results.csv"})
        CHECK(fs::exists(dir / f));

    // report.csv: header + (2 folds + mean) per run.
    std::ifstream is(dir / "report.csv");
    int lines = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 1 + 3 * 3);

    // "Average" column in report.md equals the mean over the three strategies.
    std::string md = slurp(dir / "report.md");
    CHECK(md.find("0.810000 / 0.790000 |") != std::string::npos);

    // Re-emitting is byte-identical.
    std::string before_md = slurp(dir / "report.md");
    std::string before_csv = slurp(dir / "report.csv");
    emit_report(rep, dir.string());
    CHECK(slurp(dir / "report.md") == before_md);
    CHECK(slurp(dir / "report.csv") == before_csv);

    // The reference table is the static externally-reported sheet: 16 rows.
    std::ifstream rs(dir / "reference_results.csv");
    int ref_lines = 0;
    while (std::getline(rs, line))
        if (!line.empty()) ++ref_lines;
    CHECK(ref_lines == 17);
    fs::remove_all(dir);
}

TEST_CASE("metrics report survives the JSON stage boundary") {
    MetricsReport rep;
    rep.dataset_name = "toy";
    rep.folds = 2;
    RunResult r;
    r.val_auroc_per_fold = {0.8, 0.9};
    r.test_auroc_per_fold = {0.7, 0.6};
    r.trainable_params = 123;
    rep.runs[RunKey{"gru1+imputed_hidden_init", "plateau", "unfrozen"}] = r;
    ImputationMetrics im;
    im.mae = 0.1;
    im.rmse = 0.2;
    rep.imputation_per_fold = {im};
    rep.searched_lr_per_fold = {3e-4};

    MetricsReport back = report_from_json(report_to_json(rep));
    CHECK(report_to_json(back) == report_to_json(rep));
    CHECK(!back.imputation_per_fold[0].mre.has_value());
}
