#pragma once
// Neuron attribution. Integrated gradients along the activation path of one
// FFN layer at the answer position, summed over the three proxy prompts of
// each example, then aggregated across examples into antagonistic neuron
// sets (strong positive = "good", strong negative = "bad").

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neuronlab/aqua.hpp"
#include "neuronlab/common.hpp"
#include "neuronlab/model.hpp"

namespace neuronlab {

// Scalar objective on the final-position logits.
enum class TargetKind {
    contrastive,      // softmax over the four letter logits, prob of correct
    correct_logprob,  // log-softmax over the whole vocabulary, correct letter
    tn_margin,        // full-vocab P(correct) minus mean P(wrong letters)
};

TargetKind target_from_name(const std::string& name);
std::string target_name(TargetKind k);

struct Target {
    TargetKind kind = TargetKind::contrastive;
    std::array<int, 4> letter_ids{};  // token ids of A..D
    int correct_slot = 0;

    double value(const std::vector<double>& logits) const;
    // d(value)/d(logits), same length as logits.
    std::vector<double> dlogits(const std::vector<double>& logits) const;
};

// Dense score per neuron, indexed [layer][ffn index].
struct ScoreMap {
    std::vector<std::vector<double>> s;

    static ScoreMap zeros(const ModelConfig& cfg);
    double& at(NeuronId id) { return s[id.layer][id.index]; }
    double at(NeuronId id) const { return s[id.layer][id.index]; }
    int layers() const { return static_cast<int>(s.size()); }
    int width() const { return s.empty() ? 0 : static_cast<int>(s[0].size()); }
    ScoreMap& operator+=(const ScoreMap& o);
};

struct IgOptions {
    int steps = 16;
    // When true, scales one neuron at a time instead of a whole layer per
    // pass. Slow; exists as a cross-check of the joint path.
    bool per_neuron = false;
};

// Integrated gradients of `target` w.r.t. every FFN activation at the answer
// position. One attribution pass per layer: the layer's activations are
// scaled jointly to k/m of their natural value, gradients are taken at the
// answer position, and the average is weighted by the natural activation.
ScoreMap ig_scores(const Model& model, const std::vector<int>& tokens,
                   const Target& target, const IgOptions& opt = {});

// Per-example score: elementwise sum of ig_scores over the three proxies.
ScoreMap example_score(const Model& model, const Tokenizer& tok,
                       const PromptTemplate& tmpl, const ProxySet& proxies,
                       TargetKind kind, const IgOptions& opt = {});

struct NeuronScore {
    NeuronId id;
    double score = 0.0;
};

struct NeuronSets {
    std::vector<NeuronScore> good;  // descending score
    std::vector<NeuronScore> bad;   // ascending score
    std::vector<std::string> warnings;
};

struct AceOptions {
    int per_example_z = 5000;  // clamped to half the neuron count
    int top_k = 100;
};

// Cross-example aggregation. A neuron contributes its summed score over the
// examples where it clears the per-example top-z (positive side) or
// bottom-z (negative side); neurons that appear on both sides across the
// example set are discarded as ambiguous. The good set keeps only strictly
// positive aggregates, the bad set strictly negative ones.
NeuronSets ace_aggregate(const std::vector<ScoreMap>& per_example,
                         const AceOptions& opt);

// Count-based baseline: ranks neurons by how many examples place them in the
// positive top-z, ties broken by summed score. Good side only.
NeuronSets kn_aggregate(const std::vector<ScoreMap>& per_example,
                        const AceOptions& opt);

// Activation-magnitude baseline: mean |FFN activation| at the answer
// position over a set of prompts. Good side only.
ScoreMap activation_scores(const Model& model,
                           const std::vector<std::vector<int>>& prompts);
NeuronSets top_by_score(const ScoreMap& scores, int top_k);

// Uniform random draw without replacement, good side only.
NeuronSets random_sets(const ModelConfig& cfg, int top_k, std::uint64_t seed);

}  // namespace neuronlab
