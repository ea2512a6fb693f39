#include "tsimp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace tsimp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void bad_row(const std::string& path, int line_no, const std::string& why) {
    throw Error(path + ":" + std::to_string(line_no) + ": " + why);
}

double parse_real(const std::string& s, const std::string& path, int line_no,
                  const char* what) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        if (!std::isfinite(v)) throw std::invalid_argument("nonfinite");
        return v;
    } catch (const std::exception&) {
        bad_row(path, line_no, std::string("invalid ") + what + " '" + s + "'");
    }
}

}  // namespace

std::vector<EventRecord> parse_events_csv(std::istream& in, const std::string& path) {
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw Error(path + ": empty file");
    ++line_no;
    if (split_csv_line(line) != std::vector<std::string>{"record_id", "t_hours", "feature", "value"})
        bad_row(path, line_no, "expected header record_id,t_hours,feature,value");
    std::vector<EventRecord> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 4) bad_row(path, line_no, "expected 4 fields, got " + std::to_string(f.size()));
        EventRecord e;
        e.record_id = f[0];
        e.t_hours = parse_real(f[1], path, line_no, "t_hours");
        if (e.t_hours < 0) bad_row(path, line_no, "negative t_hours");
        e.feature = f[2];
        if (e.feature.empty()) bad_row(path, line_no, "empty feature name");
        e.value = parse_real(f[3], path, line_no, "value");
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<std::pair<std::string, int>> parse_labels_csv(std::istream& in,
                                                          const std::string& path) {
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw Error(path + ": empty file");
    ++line_no;
    if (split_csv_line(line) != std::vector<std::string>{"record_id", "label"})
        bad_row(path, line_no, "expected header record_id,label");
    std::vector<std::pair<std::string, int>> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 2) bad_row(path, line_no, "expected 2 fields, got " + std::to_string(f.size()));
        if (f[1] != "0" && f[1] != "1") bad_row(path, line_no, "label must be 0 or 1, got '" + f[1] + "'");
        if (!seen.insert(f[0]).second) bad_row(path, line_no, "duplicate record_id '" + f[0] + "'");
        out.emplace_back(f[0], f[1] == "1" ? 1 : 0);
    }
    return out;
}

RawGrid bin_hourly(const std::vector<EventRecord>& events,
                   const std::vector<std::pair<std::string, int>>& labels,
                   std::vector<std::string> feature_vocab) {
    RawGrid g;
    std::map<std::string, int> row_of;
    for (const auto& [id, lab] : labels) {
        row_of[id] = static_cast<int>(g.record_ids.size());
        g.record_ids.push_back(id);
    }
    if (feature_vocab.empty()) {
        std::set<std::string> feats;
        for (const auto& e : events) feats.insert(e.feature);
        feature_vocab.assign(feats.begin(), feats.end());  // sorted lexicographic
    }
    std::map<std::string, int> col_of;
    for (size_t i = 0; i < feature_vocab.size(); ++i) col_of[feature_vocab[i]] = static_cast<int>(i);
    g.feature_names = std::move(feature_vocab);

    int N = g.n(), D = g.d();
    g.values = Array({N, kHours, D});
    g.mask = Array({N, kHours, D});
    g.labels = Array({N});
    for (const auto& [id, lab] : labels) g.labels[row_of[id]] = static_cast<float>(lab);

    // sum + count per cell, then mean
    std::vector<double> sum(static_cast<size_t>(N) * kHours * D, 0.0);
    std::vector<int> cnt(static_cast<size_t>(N) * kHours * D, 0);
    for (const auto& e : events) {
        auto it = row_of.find(e.record_id);
        if (it == row_of.end())
            throw Error("event for unknown record_id '" + e.record_id + "' (not in labels file)");
        if (e.t_hours >= kHours) continue;  // outside the 48h window
        auto jt = col_of.find(e.feature);
        if (jt == col_of.end())
            throw Error("event feature '" + e.feature + "' not in the configured vocabulary");
        int h = static_cast<int>(std::floor(e.t_hours));
        size_t idx = (static_cast<size_t>(it->second) * kHours + h) * D + jt->second;
        sum[idx] += e.value;
        cnt[idx] += 1;
    }
    std::vector<bool> any_obs(N, false);
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < kHours; ++t)
            for (int d = 0; d < D; ++d) {
                size_t idx = (static_cast<size_t>(i) * kHours + t) * D + d;
                if (cnt[idx] > 0) {
                    g.values[static_cast<int>(idx)] = static_cast<float>(sum[idx] / cnt[idx]);
                    g.mask[static_cast<int>(idx)] = 1.0f;
                    any_obs[i] = true;
                }
            }
    for (int i = 0; i < N; ++i)
        if (!any_obs[i])
            std::cerr << "warning: record '" << g.record_ids[i]
                      << "' has no events in the first " << kHours << "h; kept as all-missing\n";
    return g;
}

NormStats normalize_fit(const RawGrid& grid, const std::vector<int>& rows) {
    int D = grid.d();
    NormStats s{Array({D}), Array({D})};
    for (int d = 0; d < D; ++d) {
        double sum = 0.0, cnt = 0.0;
        for (int i : rows)
            for (int t = 0; t < kHours; ++t) {
                size_t idx = (static_cast<size_t>(i) * kHours + t) * D + d;
                if (grid.mask[static_cast<int>(idx)] > 0) {
                    sum += grid.values[static_cast<int>(idx)];
                    cnt += 1.0;
                }
            }
        if (cnt == 0) continue;  // mean 0, std 0 for never-observed features
        double mean = sum / cnt;
        double var = 0.0;
        for (int i : rows)
            for (int t = 0; t < kHours; ++t) {
                size_t idx = (static_cast<size_t>(i) * kHours + t) * D + d;
                if (grid.mask[static_cast<int>(idx)] > 0) {
                    double dv = grid.values[static_cast<int>(idx)] - mean;
                    var += dv * dv;
                }
            }
        s.mean[d] = static_cast<float>(mean);
        s.std[d] = static_cast<float>(std::sqrt(var / cnt));
    }
    return s;
}

Array normalize_apply(const Array& values, const Array& mask, const NormStats& stats) {
    require_same_shape(values, mask, "normalize_apply");
    int D = values.shape().back();
    if (stats.mean.size() != D)
        throw Error("normalize_apply: stats dim " + stats.mean.shape_str() +
                    " does not match feature dim " + std::to_string(D));
    Array out(values.shape());
    int cells = values.size() / D;
    for (int c = 0; c < cells; ++c)
        for (int d = 0; d < D; ++d) {
            int idx = c * D + d;
            if (mask[idx] > 0) {
                float v = values[idx] - stats.mean[d];
                if (stats.std[d] > 0) v /= stats.std[d];
                out[idx] = v;
            }  // missing cells stay at the 0 sentinel
        }
    return out;
}

Array compute_delta(const Array& mask) {
    const auto& sh = mask.shape();
    if (sh.size() != 3) throw Error("compute_delta: expected [N,T,D], got " + mask.shape_str());
    int N = sh[0], T = sh[1], D = sh[2];
    Array delta(mask.shape());
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d)
            for (int t = 1; t < T; ++t) {
                int idx = (i * T + t) * D + d;
                int prev = (i * T + (t - 1)) * D + d;
                delta[idx] = mask[prev] > 0 ? 1.0f : 1.0f + delta[prev];
            }
    return delta;
}

std::vector<FoldSplit> kfold_split(int n, int k, uint64_t seed) {
    if (n < k) throw Error("kfold_split: need at least " + std::to_string(k) + " records, got " +
                           std::to_string(n));
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i)
        std::swap(ids[i], ids[static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)))]);
    // k blocks of near-equal size
    std::vector<std::vector<int>> blocks(k);
    for (int i = 0; i < n; ++i) blocks[i % k].push_back(ids[i]);
    std::vector<FoldSplit> folds;
    for (int f = 0; f < k; ++f) {
        FoldSplit fs;
        fs.fold_index = f;
        fs.test_ids = blocks[f];
        fs.val_ids = blocks[(f + 1) % k];
        for (int b = 0; b < k; ++b)
            if (b != f && b != (f + 1) % k)
                fs.train_ids.insert(fs.train_ids.end(), blocks[b].begin(), blocks[b].end());
        std::sort(fs.train_ids.begin(), fs.train_ids.end());
        std::sort(fs.val_ids.begin(), fs.val_ids.end());
        std::sort(fs.test_ids.begin(), fs.test_ids.end());
        folds.push_back(std::move(fs));
    }
    return folds;
}

SynthResult synth_generate(int n, int d, double missing_rate, uint64_t seed) {
    if (d < 2) throw Error("synth_generate: d must be >= 2");
    if (missing_rate < 0.0 || missing_rate >= 1.0)
        throw Error("synth_generate: missing_rate must be in [0,1)");
    Rng root(seed);
    SynthResult out;
    out.clean = Array({n, kHours, d});

    // Fixed label functional: weights from a dedicated stream so the task
    // is identical for a given seed regardless of n.
    Rng wrng = root.derive("label-weights");
    std::vector<double> w(d);
    for (int j = 0; j < d; ++j) w[j] = wrng.normal();

    // Per-feature drop rates spread around missing_rate.
    std::vector<double> rate(d);
    for (int j = 0; j < d; ++j) {
        double f = d > 1 ? static_cast<double>(j) / (d - 1) : 0.5;
        rate[j] = std::min(0.99, missing_rate * (0.5 + f));
    }

    for (int i = 0; i < n; ++i) {
        Rng r = root.derive("record", static_cast<uint64_t>(i));
        std::string id = "rec" + std::to_string(i);
        // Latent AR(1) with a per-record drift so records separate.
        std::vector<double> z(d), drift(d);
        for (int j = 0; j < d; ++j) {
            z[j] = r.normal();
            drift[j] = 0.1 * r.normal();
        }
        double functional = 0.0;
        for (int t = 0; t < kHours; ++t) {
            for (int j = 0; j < d; ++j) {
                if (t > 0) z[j] = 0.9 * z[j] + drift[j] + 0.2 * r.normal();
                out.clean[(i * kHours + t) * d + j] = static_cast<float>(z[j]);
                functional += w[j] * z[j];
            }
        }
        functional /= kHours;
        double p = 1.0 / (1.0 + std::exp(-4.0 * functional));
        int label = r.uniform() < p ? 1 : 0;
        out.labels.emplace_back(id, label);
        for (int t = 0; t < kHours; ++t)
            for (int j = 0; j < d; ++j) {
                if (r.uniform() < rate[j]) continue;  // dropped observation
                EventRecord e;
                e.record_id = id;
                e.t_hours = t + 0.5;
                e.feature = "f" + std::to_string(j);
                e.value = out.clean[(i * kHours + t) * d + j];
                out.events.push_back(std::move(e));
            }
    }
    return out;
}

TimeSeriesBatch make_batch(const RawGrid& grid, const std::vector<int>& rows,
                           const NormStats& stats) {
    int N = static_cast<int>(rows.size()), D = grid.d();
    TimeSeriesBatch b;
    b.n = N;
    b.t = kHours;
    b.d = D;
    b.values = Array({N, kHours, D});
    b.mask = Array({N, kHours, D});
    b.labels = Array({N});
    for (int r = 0; r < N; ++r) {
        int src = rows[r];
        b.labels[r] = grid.labels[src];
        for (int t = 0; t < kHours; ++t)
            for (int d = 0; d < D; ++d) {
                int dst = (r * kHours + t) * D + d;
                int s = (src * kHours + t) * D + d;
                b.values[dst] = grid.values[s];
                b.mask[dst] = grid.mask[s];
            }
    }
    b.values = normalize_apply(b.values, b.mask, stats);
    b.delta = compute_delta(b.mask);
    b.eval_mask = Array({N, kHours, D});
    b.ground_truth = Array({N, kHours, D});
    return b;
}

TimeSeriesBatch reverse_time(const TimeSeriesBatch& b) {
    TimeSeriesBatch r = b;
    int N = b.n, T = b.t, D = b.d;
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) {
                int dst = (i * T + t) * D + d;
                int src = (i * T + (T - 1 - t)) * D + d;
                r.values[dst] = b.values[src];
                r.mask[dst] = b.mask[src];
                r.eval_mask[dst] = b.eval_mask[src];
                r.ground_truth[dst] = b.ground_truth[src];
            }
    r.delta = compute_delta(r.mask);
    return r;
}

}  // namespace tsimp
