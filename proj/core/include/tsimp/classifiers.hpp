#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsimp/imputer.hpp"

namespace tsimp {

enum class HeadKind { MLP2, MLP5, LSTM1, GRU1, LINEAR };
enum class WeightPolicy { Frozen, Unfrozen };
enum class InputStrategy { HiddenStates, ImputedWithHiddenInit, RawWithHiddenInit };

struct HeadSpec {
    HeadKind kind = HeadKind::MLP2;
    int input_dim = 0;
    int hidden_width = 128;  // first MLP layer
    int rnn_hidden = 108;
};

struct FinetunePlan {
    HeadSpec head;
    WeightPolicy weight_policy = WeightPolicy::Frozen;
    InputStrategy input_strategy = InputStrategy::HiddenStates;
};

std::string head_kind_name(HeadKind k);
std::string policy_name(WeightPolicy p);
std::string strategy_name(InputStrategy s);

// MLP2: input->width->1. MLP5: input->width->64->32->16->1. LSTM1/GRU1:
// one recurrent layer + MLP2 on the final hidden state. LINEAR: input->1.
ParamStore build_head(const HeadSpec& spec, uint64_t seed);

// Exact trainable-parameter count of the head alone.
int64_t param_count(const HeadSpec& spec);
// Under Unfrozen the imputer's parameters train too.
int64_t param_count(const HeadSpec& spec, WeightPolicy policy, int64_t imputer_params);

// Fills input_dim / rnn_hidden left at 0 from the imputer's dimensions.
HeadSpec resolve_head(const HeadSpec& spec, const ImputerConfig& imputer);

// Pretrained imputer wired to a downstream head per the plan.
struct PipelineModel {
    Imputer imputer;
    FinetunePlan plan;
    ParamStore head;

    bool unfrozen() const { return plan.weight_policy == WeightPolicy::Unfrozen; }
};

struct PipelineForward {
    Var logits;  // [N,1]
    std::map<std::string, Var> head_vars;
    std::map<std::string, Var> imputer_vars;  // empty under Frozen
};

PipelineModel assemble(Imputer imputer, const FinetunePlan& plan, uint64_t seed);

// Full differentiable graph (imputer included when unfrozen; when frozen
// the caller may pass precomputed imputer outputs to skip that pass).
PipelineForward pipeline_forward(Tape& tape, const PipelineModel& model,
                                 const TimeSeriesBatch& batch,
                                 const ImputerOutput* frozen_outputs = nullptr);

// Head-only graph over precomputed features/series (Frozen fast path).
Var head_forward(Tape& tape, const HeadSpec& spec, const std::map<std::string, Var>& pvars,
                 Var features);

// Inference: sigmoid probabilities in (0,1), batch untouched.
Array forward_classify(const PipelineModel& model, const TimeSeriesBatch& batch);

enum class FeatureKind { Imputed, Hidden };

// CSV feature table `record_id,f0..fK,label`. Imputed: flattened series
// [N, T*D]; Hidden: concatenated final bidirectional states [N, 2*hidden].
void export_features(const Imputer& imputer, const TimeSeriesBatch& batch,
                     const std::vector<std::string>& record_ids, FeatureKind kind,
                     const std::string& path);

// Row subsets used for minibatching.
TimeSeriesBatch subset_batch(const TimeSeriesBatch& b, const std::vector<int>& rows);
ImputerOutput subset_output(const ImputerOutput& o, const std::vector<int>& rows);

}  // namespace tsimp
