#pragma once
// Task corpora, the hand-constructed reference model with known antagonistic
// neurons, and the small trainer used for learned models.

#include <cstdint>
#include <string>
#include <vector>

#include "neuronlab/aqua.hpp"
#include "neuronlab/common.hpp"
#include "neuronlab/model.hpp"
#include "neuronlab/tokenizer.hpp"

namespace neuronlab {

enum class TaskFamily { marker_detect, keyword_sentiment, copy_cue, parity_reason };

TaskFamily family_from_name(const std::string& name);
std::string family_name(TaskFamily f);

struct TaskSpec {
    TaskFamily family = TaskFamily::copy_cue;
    std::string name;  // defaults to the family name
    std::uint64_t seed = 1;
    int n_train = 256;
    int n_pool = 256;  // evaluation candidates
};

struct TaskData {
    TaskSpec spec;
    std::string template_text;
    std::vector<QAExample> train;
    std::vector<QAExample> pool;
    std::vector<ProxySet> train_proxies;
    std::vector<ProxySet> pool_proxies;
    // Raw texts the vocabulary is built from.
    std::vector<std::string> corpus() const;
};

TaskData generate_task(const TaskSpec& spec);

// Canonical vocabulary of the cue-copy task. The constructed model wires
// these exact tokens, so they are shared here instead of duplicated.
const std::vector<std::string>& copy_cue_contents();
const std::string& cue_marker();
const std::string& decoy_marker();

// ---- hand-constructed model ------------------------------------------------

// The cue-copy model answers "which option repeats the cued content" with a
// fixed attention/FFN circuit. Sixteen designated neurons in one FFN layer
// carry the per-letter evidence: eight push the cued letter up ("good"),
// eight push the decoy letter up ("bad"). Every planted neuron moves the
// relevant letter logit by at least `delta` on every solvable question when
// zeroed or doubled, every other neuron stays strictly below `delta`, and
// each planted neuron flips at least one verification answer.
struct PlantedInfo {
    std::vector<NeuronId> good;
    std::vector<NeuronId> bad;
    double delta = 0.0;
    double planted_min_effect = 0.0;  // smallest |logit change| of a planted edit
    double other_max_effect = 0.0;    // largest |logit change| of any other neuron
    int n_verification_questions = 0;
    int flips_by_planted = 0;
    int flips_by_others = 0;
};

struct PlantedModel {
    ModelConfig cfg;
    Weights<double> weights;
    PlantedInfo info;
};

// Builds the circuit on top of the task vocabulary and verifies the
// guarantees above by exhaustive single-neuron ablation over a balanced
// verification set. Throws NumericError with diagnostics if any guarantee
// fails to hold.
PlantedModel build_planted(const TaskData& task, const Tokenizer& tok,
                           bool verify = true);

// ---- trainer ----------------------------------------------------------------

struct TrainConfig {
    ModelConfig arch;
    std::uint64_t seed = 7;
    int steps = 1200;
    int batch = 16;
    double lr = 1e-3;
    double grad_clip = 1.0;
    int eval_every = 50;
    int dev_examples = 40;       // leading slice of the pool
    double stop_at_com = 0.85;   // early stop once dev comprehension reaches this
};

struct TrainResult {
    Weights<double> weights;
    std::vector<std::pair<int, double>> loss_curve;  // (step, mean batch loss)
    std::vector<std::pair<int, double>> dev_curve;   // (step, dev comprehension)
    double final_dev_com = 0.0;
    int steps_run = 0;
};

// Next-token cross-entropy over the full answered prompt (prompt plus the
// correct letter). Deterministic for a fixed seed. Throws NumericError (with
// the step index) on divergence.
TrainResult train_model(const TaskData& task, const Tokenizer& tok,
                        const TrainConfig& cfg);

}  // namespace neuronlab
