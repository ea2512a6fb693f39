#include "tsimp/imputer.hpp"

#include <cmath>

#include <json.hpp>

namespace tsimp {

namespace {

Array slice_step(const Array& field, int t) {
    const auto& sh = field.shape();  // [N,T,D]
    int N = sh[0], T = sh[1], D = sh[2];
    Array out({N, D});
    for (int i = 0; i < N; ++i)
        for (int d = 0; d < D; ++d) out.at2(i, d) = field[(i * T + t) * D + d];
    return out;
}

Array ones_minus(const Array& a) {
    Array out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = 1.0f - a[i];
    return out;
}

Array hadamard(const Array& a, const Array& b) {
    Array out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

struct DirectionResult {
    std::vector<Var> est;     // per-step combined estimate x_hat [N,D]
    std::vector<Var> hidden;  // per-step [N,hidden]
    Var recon_loss;           // count-weighted masked MAE over the sequence
};

}  // namespace

Var decay(Tape& tape, Var delta, Var w, Var b) {
    return tape.exp(tape.neg(tape.relu(tape.add_rowvec(tape.matmul(delta, w), b))));
}

Array positional_embedding(int t, int dim) {
    if (dim % 2 != 0) throw Error("positional_embedding: dim must be even");
    Array pe({dim});
    for (int i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dim);
        pe[2 * i] = static_cast<float>(std::sin(t * freq));
        pe[2 * i + 1] = static_cast<float>(std::cos(t * freq));
    }
    return pe;
}

Var attention_condition(Tape& tape, Var hidden_prefix, Var w_attn, Var query) {
    // Copy the dims before emplacing ops: growing the tape may reallocate
    // node storage and invalidate references into it.
    int n = tape.value(hidden_prefix).rows();
    int hid = tape.value(hidden_prefix).cols();
    if (n < 1) throw Error("attention_condition: empty hidden prefix");
    Var q_col = tape.reshape(query, {hid, 1});
    Var scores = tape.matmul(tape.matmul(hidden_prefix, w_attn), q_col);  // [n,1]
    scores = tape.scale(scores, 1.0f / std::sqrt(static_cast<float>(hid)));
    Var w = tape.softmax_rows(tape.reshape(scores, {1, n}));
    return tape.matmul(w, hidden_prefix);  // [1,hidden]
}

Imputer Imputer::init(const ImputerConfig& config) {
    if (config.d_features <= 0) throw Error("ImputerConfig: d_features must be positive");
    if (config.hidden <= 0) throw Error("ImputerConfig: hidden must be positive");
    if (config.embed_dim % 2 != 0) throw Error("ImputerConfig: embed_dim must be even");
    Imputer imp;
    imp.config = config;
    Rng rng = Rng(config.seed).derive("imputer-init");
    int D = config.d_features, H = config.hidden, E = config.embed_dim;
    int I = E + D;  // recurrent cell input: embedded complement + mask

    auto u = [&](std::vector<int> shape, int fan_in) {
        return ParamStore::uniform_init(std::move(shape), fan_in, rng);
    };
    for (const std::string dir : {"fwd", "bwd"}) {
        imp.params.add(dir + ".gamma_h.W", u({D, H}, D));
        imp.params.add(dir + ".gamma_h.b", u({H}, D));
        imp.params.add(dir + ".gamma_x.W", u({D, D}, D));
        imp.params.add(dir + ".gamma_x.b", u({D}, D));
        imp.params.add(dir + ".hist.W", u({H, D}, H));
        imp.params.add(dir + ".hist.b", u({D}, H));
        Array wz = u({D, D}, D);
        for (int d = 0; d < D; ++d) wz.at2(d, d) = 0.0f;  // no self-regression
        imp.params.add(dir + ".feat.W", std::move(wz));
        imp.params.add(dir + ".feat.b", u({D}, D));
        imp.params.add(dir + ".fuse.W", u({2 * D, D}, 2 * D));
        imp.params.add(dir + ".fuse.b", u({D}, 2 * D));
        for (const std::string gate : {"r", "z", "n"}) {
            imp.params.add(dir + ".cell.W" + gate, u({I, H}, I));
            imp.params.add(dir + ".cell.U" + gate, u({H, H}, H));
            imp.params.add(dir + ".cell.b" + gate, u({H}, H));
        }
    }
    imp.params.add("shared.embed.W", u({D, E}, D));
    imp.params.add("shared.embed.b", u({E}, D));
    imp.params.add("shared.attn.W", u({H, H}, H));
    imp.params.add("shared.attn.q", u({H}, H));
    return imp;
}

std::map<std::string, Var> Imputer::leaf_params(Tape& tape, bool requires_grad) const {
    std::map<std::string, Var> out;
    for (const auto& [name, slot] : params) out[name] = tape.leaf(slot.value, requires_grad);
    return out;
}

namespace {

// One direction of the decay-gated recurrence over a (possibly reversed)
// batch view.
DirectionResult run_direction(Tape& tape, const TimeSeriesBatch& b,
                              const std::map<std::string, Var>& p, const std::string& dir,
                              Var h0, const ImputerConfig& cfg) {
    int N = b.n, T = b.t, D = b.d, E = cfg.embed_dim;
    auto P = [&](const std::string& suffix) { return p.at(dir + "." + suffix); };
    Var embed_w = p.at("shared.embed.W");
    Var embed_b = p.at("shared.embed.b");

    DirectionResult res;
    Var h = h0;
    Var loss_sum;  // Sum over steps of masked-MAE * step count
    double total_obs = 0.0;
    for (int t = 0; t < T; ++t) {
        Array x_t = slice_step(b.values, t);
        Array m_t = slice_step(b.mask, t);
        Array d_t = slice_step(b.delta, t);
        double cnt = 0.0;
        for (int i = 0; i < m_t.size(); ++i) cnt += m_t[i];
        total_obs += cnt;

        Var delta_v = tape.constant(d_t);
        Var gamma_h = decay(tape, delta_v, P("gamma_h.W"), P("gamma_h.b"));  // [N,H]
        Var h_decayed = tape.mul(h, gamma_h);
        Var x_hist = tape.add_rowvec(tape.matmul(h_decayed, P("hist.W")), P("hist.b"));

        // Complement: observed values where present, history estimate elsewhere.
        Array mx = hadamard(m_t, x_t);
        Var x_c = tape.add(tape.constant(mx), tape.mul_const(x_hist, ones_minus(m_t)));
        Var x_feat = tape.add_rowvec(tape.matmul(x_c, P("feat.W")), P("feat.b"));

        Var gamma_x = decay(tape, delta_v, P("gamma_x.W"), P("gamma_x.b"));  // [N,D]
        Var fuse_in = tape.concat_cols(gamma_x, tape.constant(m_t));
        Var beta = tape.sigmoid(tape.add_rowvec(tape.matmul(fuse_in, P("fuse.W")), P("fuse.b")));
        Var one_minus_beta = tape.add_scalar(tape.neg(beta), 1.0f);
        Var x_hat = tape.add(tape.mul(beta, x_feat), tape.mul(one_minus_beta, x_hist));

        // Recurrent input: embedded complement-of-x_hat plus positional
        // encoding, concatenated with the mask.
        Var u = tape.add(tape.constant(mx), tape.mul_const(x_hat, ones_minus(m_t)));
        Var e = tape.add_rowvec(tape.matmul(u, embed_w), embed_b);
        e = tape.add_rowvec(e, tape.constant(positional_embedding(t, E)));
        Var cell_in = tape.concat_cols(e, tape.constant(m_t));

        Var r = tape.sigmoid(tape.add_rowvec(
            tape.add(tape.matmul(cell_in, P("cell.Wr")), tape.matmul(h, P("cell.Ur"))),
            P("cell.br")));
        Var z = tape.sigmoid(tape.add_rowvec(
            tape.add(tape.matmul(cell_in, P("cell.Wz")), tape.matmul(h, P("cell.Uz"))),
            P("cell.bz")));
        Var ng = tape.tanh(tape.add_rowvec(
            tape.add(tape.matmul(cell_in, P("cell.Wn")),
                     tape.matmul(tape.mul(r, h), P("cell.Un"))),
            P("cell.bn")));
        Var one_minus_z = tape.add_scalar(tape.neg(z), 1.0f);
        h = tape.add(tape.mul(one_minus_z, h), tape.mul(z, ng));

        if (!tape.value(h).all_finite() || !tape.value(x_hat).all_finite())
            throw Error("imputer: non-finite value at step " + std::to_string(t) +
                        " (direction " + dir + ")");

        Var step_loss = tape.add(
            tape.add(tape.masked_mae(x_hist, x_t, m_t), tape.masked_mae(x_feat, x_t, m_t)),
            tape.masked_mae(x_hat, x_t, m_t));
        // Re-weight per-step means by the step's observed count so the
        // total is the sequence-level mean.
        Var weighted = tape.scale(step_loss, static_cast<float>(std::max(1.0, cnt)));
        loss_sum = loss_sum.valid() ? tape.add(loss_sum, weighted) : weighted;

        res.est.push_back(x_hat);
        res.hidden.push_back(h);
    }
    res.recon_loss = tape.scale(loss_sum, 1.0f / static_cast<float>(std::max(1.0, total_obs)));
    return res;
}

// Attention pooling over per-step hidden states for the whole batch.
Var attention_pool(Tape& tape, const std::vector<Var>& hidden_steps, Var w_attn, Var query) {
    int hid = tape.value(hidden_steps[0]).cols();
    Var q_col = tape.reshape(query, {hid, 1});
    float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hid));
    Var scores;  // [N, T]
    for (const Var& h : hidden_steps) {
        Var s = tape.scale(tape.matmul(tape.matmul(h, w_attn), q_col), inv_sqrt);  // [N,1]
        scores = scores.valid() ? tape.concat_cols(scores, s) : s;
    }
    Var w = tape.softmax_rows(scores);
    Var out;
    for (size_t t = 0; t < hidden_steps.size(); ++t) {
        Var term = tape.scale_rows(hidden_steps[t], tape.col(w, static_cast<int>(t)));
        out = out.valid() ? tape.add(out, term) : term;
    }
    return out;
}

}  // namespace

ImputerGraph Imputer::build_graph(Tape& tape, const TimeSeriesBatch& batch,
                                  const std::map<std::string, Var>& pvars) const {
    int N = batch.n, T = batch.t, D = batch.d, H = config.hidden;
    TimeSeriesBatch rev = reverse_time(batch);

    Var zeros_h = tape.constant(Array({N, H}));
    DirectionResult fwd = run_direction(tape, batch, pvars, "fwd", zeros_h, config);

    Var h0_bwd = zeros_h;
    if (config.conditional_init)
        h0_bwd = attention_pool(tape, fwd.hidden, pvars.at("shared.attn.W"),
                                pvars.at("shared.attn.q"));
    DirectionResult bwd = run_direction(tape, rev, pvars, "bwd", h0_bwd, config);

    ImputerGraph g;
    g.hidden_fwd = fwd.hidden;
    g.hidden_bwd.resize(T);
    for (int t = 0; t < T; ++t) g.hidden_bwd[t] = bwd.hidden[T - 1 - t];

    g.loss_reconstruction = tape.scale(tape.add(fwd.recon_loss, bwd.recon_loss), 0.5f);

    Var cons_sum, eval_sum;
    double eval_cnt = 0.0;
    for (int t = 0; t < T; ++t) {
        Var best = fwd.est[t];
        Var bwd_est = bwd.est[T - 1 - t];
        Var diff = tape.mean(tape.abs(tape.sub(best, bwd_est)));
        cons_sum = cons_sum.valid() ? tape.add(cons_sum, diff) : diff;

        Array m_t = slice_step(batch.mask, t);
        Array x_t = slice_step(batch.values, t);
        Array gt_t = slice_step(batch.ground_truth, t);
        Array ev_t = slice_step(batch.eval_mask, t);
        Var comb = tape.scale(tape.add(best, bwd_est), 0.5f);
        Var out_t = tape.add(tape.constant(hadamard(m_t, x_t)),
                             tape.mul_const(comb, ones_minus(m_t)));
        g.imputed_steps.push_back(out_t);

        double cnt = 0.0;
        for (int i = 0; i < ev_t.size(); ++i) cnt += ev_t[i];
        if (cnt > 0) {
            Var ev = tape.scale(tape.masked_mae(out_t, gt_t, ev_t), static_cast<float>(cnt));
            eval_sum = eval_sum.valid() ? tape.add(eval_sum, ev) : ev;
            eval_cnt += cnt;
        }
    }
    g.loss_consistency = tape.scale(cons_sum, 1.0f / static_cast<float>(T));
    g.loss_eval = eval_cnt > 0 ? tape.scale(eval_sum, 1.0f / static_cast<float>(eval_cnt))
                               : tape.constant(Array::scalar(0.0f));
    g.loss_total = tape.add(
        tape.add(g.loss_reconstruction, tape.scale(g.loss_consistency, config.consistency_weight)),
        g.loss_eval);
    return g;
}

ImputerOutput Imputer::forward(const TimeSeriesBatch& batch) const {
    Tape tape;
    auto pvars = leaf_params(tape, false);
    ImputerGraph g = build_graph(tape, batch, pvars);
    int N = batch.n, T = batch.t, D = batch.d, H = config.hidden;

    ImputerOutput out;
    out.imputed = Array({N, T, D});
    out.hidden_seq_fwd = Array({N, T, H});
    out.hidden_seq_bwd = Array({N, T, H});
    for (int t = 0; t < T; ++t) {
        const Array& step = tape.value(g.imputed_steps[t]);
        const Array& hf = tape.value(g.hidden_fwd[t]);
        const Array& hb = tape.value(g.hidden_bwd[t]);
        for (int i = 0; i < N; ++i) {
            for (int d = 0; d < D; ++d) out.imputed[(i * T + t) * D + d] = step.at2(i, d);
            for (int h = 0; h < H; ++h) {
                out.hidden_seq_fwd[(i * T + t) * H + h] = hf.at2(i, h);
                out.hidden_seq_bwd[(i * T + t) * H + h] = hb.at2(i, h);
            }
        }
    }
    out.hidden_last_fwd = tape.value(g.hidden_fwd[T - 1]);
    out.hidden_last_bwd = tape.value(g.hidden_bwd[0]);  // last in backward time
    out.loss_reconstruction = tape.value(g.loss_reconstruction)[0];
    out.loss_consistency = tape.value(g.loss_consistency)[0];
    return out;
}

void Imputer::save(const std::string& path, const std::string& extra_manifest_json) const {
    nlohmann::json manifest = nlohmann::json::parse(extra_manifest_json);
    manifest["model"] = "imputer";
    manifest["config"] = {{"d_features", config.d_features},
                          {"hidden", config.hidden},
                          {"embed_dim", config.embed_dim},
                          {"attention_heads", config.attention_heads},
                          {"conditional_init", config.conditional_init},
                          {"consistency_weight", config.consistency_weight},
                          {"seed", config.seed}};
    save_checkpoint(path, params, manifest.dump());
}

Imputer Imputer::from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    nlohmann::json manifest = nlohmann::json::parse(ck.manifest_json);
    if (manifest.value("model", "") != "imputer")
        throw Error("checkpoint is not an imputer model: " + path);
    const auto& c = manifest.at("config");
    Imputer imp;
    imp.config.d_features = c.at("d_features").get<int>();
    imp.config.hidden = c.at("hidden").get<int>();
    imp.config.embed_dim = c.at("embed_dim").get<int>();
    imp.config.attention_heads = c.at("attention_heads").get<int>();
    imp.config.conditional_init = c.at("conditional_init").get<bool>();
    imp.config.consistency_weight = c.at("consistency_weight").get<float>();
    imp.config.seed = c.at("seed").get<uint64_t>();
    imp.params = std::move(ck.params);
    return imp;
}

}  // namespace tsimp
