#pragma once

#include <map>
#include <string>
#include <vector>

#include "tsimp/autodiff.hpp"
#include "tsimp/checkpoint.hpp"
#include "tsimp/dataset.hpp"

namespace tsimp {

struct ImputerConfig {
    int d_features = 0;
    int hidden = 108;
    int embed_dim = 64;
    int attention_heads = 1;
    // Conditions the backward direction's initial hidden state on
    // attention-pooled forward hidden states. Off = plain zero init.
    bool conditional_init = true;
    float consistency_weight = 0.1f;
    uint64_t seed = 0;
};

struct ImputerOutput {
    Array imputed;           // [N,T,D]; equals input exactly at observed cells
    Array hidden_last_fwd;   // [N, hidden]
    Array hidden_last_bwd;   // [N, hidden]
    Array hidden_seq_fwd;    // [N, T, hidden]
    Array hidden_seq_bwd;    // [N, T, hidden] (aligned to forward time)
    float loss_reconstruction = 0.0f;
    float loss_consistency = 0.0f;
};

// Graph handles for the bidirectional pass; values live on the tape.
struct ImputerGraph {
    std::vector<Var> imputed_steps;   // T entries of [N,D], complement outputs
    std::vector<Var> hidden_fwd;      // T entries of [N,hidden]
    std::vector<Var> hidden_bwd;      // aligned to forward time
    Var loss_reconstruction;
    Var loss_consistency;
    Var loss_eval;  // masked MAE against ground truth at eval cells
    Var loss_total;
};

// Bidirectional recurrent imputer: decay-gated GRU recurrence with
// history and feature regression, sinusoidal positional embedding, and
// optional attention-conditioned initialization.
class Imputer {
public:
    static Imputer init(const ImputerConfig& config);
    static Imputer from_checkpoint(const std::string& path);

    void save(const std::string& path, const std::string& extra_manifest_json = "{}") const;

    // Inference pass; no gradients retained.
    ImputerOutput forward(const TimeSeriesBatch& batch) const;

    // Builds the differentiable graph; pvars are tape leaves for params.
    ImputerGraph build_graph(Tape& tape, const TimeSeriesBatch& batch,
                             const std::map<std::string, Var>& pvars) const;

    std::map<std::string, Var> leaf_params(Tape& tape, bool requires_grad) const;

    ImputerConfig config;
    ParamStore params;
};

// gamma = exp(-max(0, delta*W + b)), elementwise in (0,1].
Var decay(Tape& tape, Var delta, Var w, Var b);

// Sinusoidal: pe[2i] = sin(t / 10000^(2i/dim)), pe[2i+1] = cos(same).
Array positional_embedding(int t, int dim);

// Scaled dot-product pooling of a hidden prefix [n, hidden] with a
// learned query; n = 1 returns the single vector unchanged.
Var attention_condition(Tape& tape, Var hidden_prefix, Var w_attn, Var query);

// Training loop is in training.hpp (pretrain_imputer).

}  // namespace tsimp
