#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "tsimp/dataset.hpp"

using namespace tsimp;

TEST_CASE("events parser reads rows and reports malformed lines by number") {
    std::istringstream good(
        "record_id,t_hours,feature,value\n"
        "a,0.5,hr,80\n"
        "b,47.9,sbp,120.5\n");
    auto events = parse_events_csv(good, "good.csv");
    REQUIRE(events.size() == 2);
    CHECK(events[0].record_id == "a");
    CHECK(events[0].t_hours == doctest::Approx(0.5));
    CHECK(events[1].value == doctest::Approx(120.5));

    std::istringstream bad(
        "record_id,t_hours,feature,value\n"
        "a,0.5,hr,80\n"
        "b,oops,sbp,120\n");
    try {
        parse_events_csv(bad, "bad.csv");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
    }
}

TEST_CASE("labels parser validates values and duplicates") {
    std::istringstream good("record_id,label\na,1\nb,0\n");
    auto labels = parse_labels_csv(good, "good.csv");
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].second == 1);

    std::istringstream dup("record_id,label\na,1\na,0\n");
    CHECK_THROWS_AS(parse_labels_csv(dup, "dup.csv"), Error);

    std::istringstream range("record_id,label\na,2\n");
    CHECK_THROWS_AS(parse_labels_csv(range, "range.csv"), Error);
}

TEST_CASE("hourly binning averages within the hour and drops t >= 48") {
    std::vector<EventRecord> events = {
        {"a", 0.1, "hr", 10.0}, {"a", 0.9, "hr", 20.0},  // hour 0: mean 15
        {"a", 3.5, "hr", 50.0},                          // hour 3
        {"a", 48.0, "hr", 999.0},                        // dropped
    };
    std::vector<std::pair<std::string, int>> labels = {{"a", 1}};
    RawGrid g = bin_hourly(events, labels);
    REQUIRE(g.n() == 1);
    REQUIRE(g.d() == 1);
    CHECK(g.values[0] == doctest::Approx(15.0f));
    CHECK(g.mask[0] == doctest::Approx(1.0f));
    CHECK(g.values[3] == doctest::Approx(50.0f));
    CHECK(g.mask[1] == doctest::Approx(0.0f));
    CHECK(g.mask[47] == doctest::Approx(0.0f));
}

TEST_CASE("normalization uses population std; degenerate features subtract the mean") {
    std::vector<EventRecord> events = {
        {"a", 0.5, "f", 1.0}, {"a", 1.5, "f", 2.0}, {"a", 2.5, "f", 3.0},
        {"a", 0.5, "g", 7.0}, {"a", 1.5, "g", 7.0},
    };
    std::vector<std::pair<std::string, int>> labels = {{"a", 0}};
    RawGrid g = bin_hourly(events, labels);
    NormStats st = normalize_fit(g, {0});
    int fi = g.feature_names[0] == "f" ? 0 : 1;
    int gi = 1 - fi;
    CHECK(st.mean[fi] == doctest::Approx(2.0f));
    CHECK(st.std[fi] == doctest::Approx(std::sqrt(2.0f / 3.0f)));  // population form
    CHECK(st.std[gi] == doctest::Approx(0.0f));

    Array z = normalize_apply(g.values, g.mask, st);
    int d = g.d();
    CHECK(z[0 * d + fi] == doctest::Approx((1.0f - 2.0f) / std::sqrt(2.0f / 3.0f)));
    CHECK(z[0 * d + gi] == doctest::Approx(0.0f));  // 7 - 7: std 0 subtracts the mean
    CHECK(z[5 * d + fi] == doctest::Approx(0.0f));  // missing cell sentinel
}

TEST_CASE("delta recursion matches the hand trace") {
    // mask over time: 1,0,0,1 -> delta 0,1,2,3 (unit column)
    Array mask = Array::from({1, 4, 1}, {1, 0, 0, 1});
    Array delta = compute_delta(mask);
    CHECK(delta[0] == doctest::Approx(0.0f));
    CHECK(delta[1] == doctest::Approx(1.0f));
    CHECK(delta[2] == doctest::Approx(2.0f));
    CHECK(delta[3] == doctest::Approx(3.0f));
}

TEST_CASE("kfold split partitions rows with adjacent val blocks") {
    int n = 23, k = 5;
    auto folds = kfold_split(n, k, 42);
    REQUIRE(static_cast<int>(folds.size()) == k);
    for (const auto& f : folds) {
        std::set<int> seen;
        for (int i : f.train_ids) seen.insert(i);
        for (int i : f.val_ids) CHECK(seen.insert(i).second);
        for (int i : f.test_ids) CHECK(seen.insert(i).second);
        CHECK(static_cast<int>(seen.size()) == n);
        CHECK(!f.test_ids.empty());
        CHECK(!f.val_ids.empty());
    }
    // Every row serves as a test row exactly once across folds.
    std::multiset<int> all_test;
    for (const auto& f : folds) all_test.insert(f.test_ids.begin(), f.test_ids.end());
    CHECK(static_cast<int>(all_test.size()) == n);
    CHECK(std::set<int>(all_test.begin(), all_test.end()).size() == static_cast<size_t>(n));
    // Deterministic per seed.
    auto again = kfold_split(n, k, 42);
    CHECK(again[0].test_ids == folds[0].test_ids);
    auto other = kfold_split(n, k, 43);
    CHECK(other[0].test_ids != folds[0].test_ids);
}

TEST_CASE("synthetic generator is deterministic and hits the requested shape") {
    SynthResult a = synth_generate(40, 6, 0.4, 7);
    SynthResult b = synth_generate(40, 6, 0.4, 7);
    CHECK(a.events.size() == b.events.size());
    CHECK(a.labels == b.labels);
    REQUIRE(a.labels.size() == 40);
    RawGrid g = bin_hourly(a.events, a.labels);
    CHECK(g.n() == 40);
    CHECK(g.d() == 6);
    double observed = 0;
    for (int i = 0; i < g.mask.size(); ++i) observed += g.mask[i];
    double rate = 1.0 - observed / g.mask.size();
    CHECK(rate > 0.25);
    CHECK(rate < 0.55);
    // Both classes present for downstream AUROC.
    int pos = 0;
    for (const auto& [id, lab] : a.labels) pos += lab;
    CHECK(pos > 0);
    CHECK(pos < 40);
}

TEST_CASE("reverse_time is an involution with recomputed delta") {
    SynthResult s = synth_generate(5, 3, 0.3, 11);
    RawGrid g = bin_hourly(s.events, s.labels);
    NormStats st = normalize_fit(g, {0, 1, 2, 3, 4});
    TimeSeriesBatch b = make_batch(g, {0, 1, 2, 3, 4}, st);
    TimeSeriesBatch rr = reverse_time(reverse_time(b));
    for (int i = 0; i < b.values.size(); ++i) {
        CHECK(rr.values[i] == b.values[i]);
        CHECK(rr.mask[i] == b.mask[i]);
        CHECK(rr.delta[i] == b.delta[i]);
    }
}
