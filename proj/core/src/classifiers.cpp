#include "tsimp/classifiers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace tsimp {

std::string head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::MLP2: return "mlp2";
        case HeadKind::MLP5: return "mlp5";
        case HeadKind::LSTM1: return "lstm1";
        case HeadKind::GRU1: return "gru1";
        case HeadKind::LINEAR: return "linear";
    }
    throw Error("unknown head kind");
}

std::string policy_name(WeightPolicy p) {
    return p == WeightPolicy::Frozen ? "frozen" : "unfrozen";
}

std::string strategy_name(InputStrategy s) {
    switch (s) {
        case InputStrategy::HiddenStates: return "hidden_states";
        case InputStrategy::ImputedWithHiddenInit: return "imputed_hidden_init";
        case InputStrategy::RawWithHiddenInit: return "raw_hidden_init";
    }
    throw Error("unknown input strategy");
}

namespace {

std::vector<int> mlp_widths(const HeadSpec& spec) {
    switch (spec.kind) {
        case HeadKind::MLP2: return {spec.input_dim, spec.hidden_width, 1};
        case HeadKind::MLP5: return {spec.input_dim, spec.hidden_width, 64, 32, 16, 1};
        case HeadKind::LINEAR: return {spec.input_dim, 1};
        case HeadKind::LSTM1:
        case HeadKind::GRU1:
            // MLP2 head on the final recurrent hidden state.
            return {spec.rnn_hidden, spec.hidden_width, 1};
    }
    throw Error("unknown head kind");
}

void add_mlp(ParamStore& ps, const std::vector<int>& widths, Rng& rng) {
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        std::string base = "head.l" + std::to_string(l + 1);
        ps.add(base + ".W", ParamStore::uniform_init({widths[l], widths[l + 1]}, widths[l], rng));
        ps.add(base + ".b", ParamStore::uniform_init({widths[l + 1]}, widths[l], rng));
    }
}

const char* lstm_gates[] = {"i", "f", "g", "o"};
const char* gru_gates[] = {"r", "z", "n"};

}  // namespace

ParamStore build_head(const HeadSpec& spec, uint64_t seed) {
    if (spec.input_dim <= 0 || spec.hidden_width <= 0 || spec.rnn_hidden <= 0)
        throw Error("build_head: dimensions must be positive");
    ParamStore ps;
    Rng rng = Rng(seed).derive("head-init");
    if (spec.kind == HeadKind::LSTM1 || spec.kind == HeadKind::GRU1) {
        int in = spec.input_dim, H = spec.rnn_hidden;
        auto gates = spec.kind == HeadKind::LSTM1
                         ? std::vector<std::string>{lstm_gates, lstm_gates + 4}
                         : std::vector<std::string>{gru_gates, gru_gates + 3};
        for (const auto& g : gates) {
            ps.add("rnn.W" + g, ParamStore::uniform_init({in, H}, in, rng));
            ps.add("rnn.U" + g, ParamStore::uniform_init({H, H}, H, rng));
            ps.add("rnn.b" + g, ParamStore::uniform_init({H}, H, rng));
        }
    }
    add_mlp(ps, mlp_widths(spec), rng);
    return ps;
}

int64_t param_count(const HeadSpec& spec) {
    auto widths = mlp_widths(spec);
    int64_t n = 0;
    for (size_t l = 0; l + 1 < widths.size(); ++l)
        n += static_cast<int64_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    if (spec.kind == HeadKind::LSTM1 || spec.kind == HeadKind::GRU1) {
        int64_t per_gate = static_cast<int64_t>(spec.input_dim) * spec.rnn_hidden +
                           static_cast<int64_t>(spec.rnn_hidden) * spec.rnn_hidden +
                           spec.rnn_hidden;
        n += per_gate * (spec.kind == HeadKind::LSTM1 ? 4 : 3);
    }
    return n;
}

int64_t param_count(const HeadSpec& spec, WeightPolicy policy, int64_t imputer_params) {
    return param_count(spec) + (policy == WeightPolicy::Unfrozen ? imputer_params : 0);
}

HeadSpec resolve_head(const HeadSpec& spec, const ImputerConfig& imputer) {
    HeadSpec h = spec;
    bool rnn = h.kind == HeadKind::LSTM1 || h.kind == HeadKind::GRU1;
    if (h.rnn_hidden == 0) h.rnn_hidden = imputer.hidden;
    if (h.input_dim == 0)
        h.input_dim = rnn ? imputer.d_features + 1 : 2 * imputer.hidden;
    return h;
}

PipelineModel assemble(Imputer imputer, const FinetunePlan& plan, uint64_t seed) {
    HeadSpec h = resolve_head(plan.head, imputer.config);
    bool rnn = h.kind == HeadKind::LSTM1 || h.kind == HeadKind::GRU1;
    if (rnn) {
        if (plan.input_strategy == InputStrategy::HiddenStates)
            throw Error("assemble: RNN heads require an imputed/raw hidden-init strategy");
        if (h.input_dim != imputer.config.d_features + 1)
            throw Error("assemble: RNN head input_dim must be d_features+1 (" +
                        std::to_string(imputer.config.d_features + 1) + "), got " +
                        std::to_string(h.input_dim));
        if (h.rnn_hidden != imputer.config.hidden)
            throw Error("assemble: rnn_hidden must match the imputer hidden size for h0 init");
    } else {
        if (plan.input_strategy != InputStrategy::HiddenStates)
            throw Error("assemble: MLP/linear heads use the hidden-states strategy only");
        if (h.input_dim != 2 * imputer.config.hidden)
            throw Error("assemble: hidden-states head input_dim must be 2*hidden (" +
                        std::to_string(2 * imputer.config.hidden) + "), got " +
                        std::to_string(h.input_dim));
    }
    PipelineModel m;
    m.imputer = std::move(imputer);
    m.plan = plan;
    m.plan.head = h;
    m.head = build_head(h, seed);
    return m;
}

Var head_forward(Tape& tape, const HeadSpec& spec, const std::map<std::string, Var>& pvars,
                 Var features) {
    if (spec.kind == HeadKind::LSTM1 || spec.kind == HeadKind::GRU1)
        throw Error("head_forward: recurrent heads take a sequence, not flat features");
    auto widths = mlp_widths(spec);
    Var x = features;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        std::string base = "head.l" + std::to_string(l + 1);
        x = tape.add_rowvec(tape.matmul(x, pvars.at(base + ".W")), pvars.at(base + ".b"));
        if (l + 2 < widths.size()) x = tape.relu(x);
    }
    return x;  // logits [N,1]
}

namespace {

Var rnn_forward(Tape& tape, const HeadSpec& spec, const std::map<std::string, Var>& p,
                const std::vector<Var>& inputs, Var h0) {
    Var h = h0;
    if (spec.kind == HeadKind::GRU1) {
        for (const Var& x : inputs) {
            Var r = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, p.at("rnn.Wr")), tape.matmul(h, p.at("rnn.Ur"))),
                p.at("rnn.br")));
            Var z = tape.sigmoid(tape.add_rowvec(
                tape.add(tape.matmul(x, p.at("rnn.Wz")), tape.matmul(h, p.at("rnn.Uz"))),
                p.at("rnn.bz")));
            Var n = tape.tanh(tape.add_rowvec(
                tape.add(tape.matmul(x, p.at("rnn.Wn")),
                         tape.matmul(tape.mul(r, h), p.at("rnn.Un"))),
                p.at("rnn.bn")));
            Var omz = tape.add_scalar(tape.neg(z), 1.0f);
            h = tape.add(tape.mul(omz, h), tape.mul(z, n));
        }
    } else {
        int N = tape.value(h0).rows();
        Var c = tape.constant(Array({N, spec.rnn_hidden}));
        for (const Var& x : inputs) {
            auto gate = [&](const char* g) {
                return tape.add_rowvec(tape.add(tape.matmul(x, p.at(std::string("rnn.W") + g)),
                                                tape.matmul(h, p.at(std::string("rnn.U") + g))),
                                       p.at(std::string("rnn.b") + g));
            };
            Var i = tape.sigmoid(gate("i"));
            Var f = tape.sigmoid(gate("f"));
            Var g = tape.tanh(gate("g"));
            Var o = tape.sigmoid(gate("o"));
            c = tape.add(tape.mul(f, c), tape.mul(i, g));
            h = tape.mul(o, tape.tanh(c));
        }
    }
    // MLP2 head on the final hidden state.
    Var x = tape.relu(tape.add_rowvec(tape.matmul(h, p.at("head.l1.W")), p.at("head.l1.b")));
    return tape.add_rowvec(tape.matmul(x, p.at("head.l2.W")), p.at("head.l2.b"));
}

Array hour_channel(int n, int t, int total) {
    Array a({n, 1});
    a.fill(static_cast<float>(t) / static_cast<float>(total - 1));
    return a;
}

Array slice_step3(const Array& field, int t) {
    const auto& sh = field.shape();
    int N = sh[0], T = sh[1], D = sh[2];
    Array out({N, D});
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d) out.at2(i, d) = field[(i * T + t) * D + d];
    return out;
}

}  // namespace

PipelineForward pipeline_forward(Tape& tape, const PipelineModel& model,
                                 const TimeSeriesBatch& batch,
                                 const ImputerOutput* frozen_outputs) {
    PipelineForward pf;
    for (const auto& [name, slot] : model.head) pf.head_vars[name] = tape.leaf(slot.value, true);

    int T = batch.t;
    std::optional<ImputerOutput> local;
    std::optional<ImputerGraph> graph;
    if (model.unfrozen()) {
        pf.imputer_vars = model.imputer.leaf_params(tape, true);
        graph = model.imputer.build_graph(tape, batch, pf.imputer_vars);
    } else if (frozen_outputs == nullptr) {
        local = model.imputer.forward(batch);
        frozen_outputs = &*local;
    }

    const HeadSpec& spec = model.plan.head;
    switch (model.plan.input_strategy) {
        case InputStrategy::HiddenStates: {
            Var feats;
            if (graph)
                feats = tape.concat_cols(graph->hidden_fwd[T - 1], graph->hidden_bwd[0]);
            else {
                Array f({batch.n, 2 * model.imputer.config.hidden});
                for (int i = 0; i < batch.n; ++i) {
                    int H = model.imputer.config.hidden;
                    for (int h = 0; h < H; ++h) {
                        f.at2(i, h) = frozen_outputs->hidden_last_fwd.at2(i, h);
                        f.at2(i, H + h) = frozen_outputs->hidden_last_bwd.at2(i, h);
                    }
                }
                feats = tape.constant(std::move(f));
            }
            pf.logits = head_forward(tape, spec, pf.head_vars, feats);
            break;
        }
        case InputStrategy::ImputedWithHiddenInit:
        case InputStrategy::RawWithHiddenInit: {
            bool raw = model.plan.input_strategy == InputStrategy::RawWithHiddenInit;
            std::vector<Var> inputs;
            for (int t = 0; t < T; ++t) {
                Var step;
                if (raw)
                    step = tape.constant(slice_step3(batch.values, t));
                else if (graph)
                    step = graph->imputed_steps[t];
                else
                    step = tape.constant(slice_step3(frozen_outputs->imputed, t));
                inputs.push_back(
                    tape.concat_cols(step, tape.constant(hour_channel(batch.n, t, T))));
            }
            Var h0 = graph ? graph->hidden_fwd[T - 1]
                           : tape.constant(frozen_outputs->hidden_last_fwd);
            pf.logits = rnn_forward(tape, spec, pf.head_vars, inputs, h0);
            break;
        }
    }
    return pf;
}

Array forward_classify(const PipelineModel& model, const TimeSeriesBatch& batch) {
    Tape tape;
    PipelineForward pf = pipeline_forward(tape, model, batch);
    const Array& logits = tape.value(pf.logits);
    if (!logits.all_finite()) throw Error("forward_classify: non-finite logits");
    Array probs({batch.n});
    for (int i = 0; i < batch.n; ++i) {
        float z = logits.at2(i, 0);
        probs[i] = z >= 0 ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
    }
    return probs;
}

void export_features(const Imputer& imputer, const TimeSeriesBatch& batch,
                     const std::vector<std::string>& record_ids, FeatureKind kind,
                     const std::string& path) {
    if (static_cast<int>(record_ids.size()) != batch.n)
        throw Error("export_features: record_ids size does not match batch");
    ImputerOutput out = imputer.forward(batch);
    std::ofstream os(path);
    if (!os) throw Error("export_features: cannot write " + path);
    int K = kind == FeatureKind::Imputed ? batch.t * batch.d : 2 * imputer.config.hidden;
    os << "record_id";
    for (int k = 0; k < K; ++k) os << ",f" << k;
    os << ",label\n";
    char buf[32];
    for (int i = 0; i < batch.n; ++i) {
        os << record_ids[i];
        for (int k = 0; k < K; ++k) {
            float v;
            if (kind == FeatureKind::Imputed)
                v = out.imputed[i * batch.t * batch.d + k];
            else {
                int H = imputer.config.hidden;
                v = k < H ? out.hidden_last_fwd.at2(i, k) : out.hidden_last_bwd.at2(i, k - H);
            }
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            os << ',' << buf;
        }
        os << ',' << static_cast<int>(batch.labels[i]) << '\n';
    }
    if (!os) throw Error("export_features: write failure on " + path);
}

TimeSeriesBatch subset_batch(const TimeSeriesBatch& b, const std::vector<int>& rows) {
    TimeSeriesBatch s;
    s.n = static_cast<int>(rows.size());
    s.t = b.t;
    s.d = b.d;
    int stride = b.t * b.d;
    auto pick = [&](const Array& src) {
        Array dst({s.n, b.t, b.d});
        for (int r = 0; r < s.n; ++r)
            for (int j = 0; j < stride; ++j) dst[r * stride + j] = src[rows[r] * stride + j];
        return dst;
    };
    s.values = pick(b.values);
    s.mask = pick(b.mask);
    s.delta = pick(b.delta);
    s.eval_mask = pick(b.eval_mask);
    s.ground_truth = pick(b.ground_truth);
    s.labels = Array({s.n});
    for (int r = 0; r < s.n; ++r) s.labels[r] = b.labels[rows[r]];
    return s;
}

ImputerOutput subset_output(const ImputerOutput& o, const std::vector<int>& rows) {
    ImputerOutput s;
    int n = static_cast<int>(rows.size());
    int T = o.imputed.shape()[1], D = o.imputed.shape()[2];
    int H = o.hidden_last_fwd.shape()[1];
    s.imputed = Array({n, T, D});
    s.hidden_last_fwd = Array({n, H});
    s.hidden_last_bwd = Array({n, H});
    s.hidden_seq_fwd = Array({n, T, H});
    s.hidden_seq_bwd = Array({n, T, H});
    for (int r = 0; r < n; ++r) {
        int src = rows[r];
        for (int j = 0; j < T * D; ++j) s.imputed[r * T * D + j] = o.imputed[src * T * D + j];
        for (int j = 0; j < H; ++j) {
            s.hidden_last_fwd.at2(r, j) = o.hidden_last_fwd.at2(src, j);
            s.hidden_last_bwd.at2(r, j) = o.hidden_last_bwd.at2(src, j);
        }
        for (int j = 0; j < T * H; ++j) {
            s.hidden_seq_fwd[r * T * H + j] = o.hidden_seq_fwd[src * T * H + j];
            s.hidden_seq_bwd[r * T * H + j] = o.hidden_seq_bwd[src * T * H + j];
        }
    }
    s.loss_reconstruction = o.loss_reconstruction;
    s.loss_consistency = o.loss_consistency;
    return s;
}

}  // namespace tsimp
