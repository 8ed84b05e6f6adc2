#pragma once
// Behavioural measurement. Answers are read as the argmax over the four
// letter logits at the final position. Accuracy counts correct proxies;
// comprehension counts examples with at least two of three proxies correct.
// Relative accuracy/comprehension change compare an edited model against
// the unedited one.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuronlab/aqua.hpp"
#include "neuronlab/attribution.hpp"
#include "neuronlab/intervention.hpp"
#include "neuronlab/model.hpp"

namespace neuronlab {

struct AnswerRecord {
    std::string proxy_id;
    int chosen_slot = 0;   // lowest slot wins exact ties
    int correct_slot = 0;
    std::array<double, 4> letter_probs{};
    bool correct() const { return chosen_slot == correct_slot; }
};

struct ExampleEval {
    std::string parent_id;
    std::array<AnswerRecord, 3> proxies;
    int n_correct = 0;
    bool comprehended = false;  // >= 2 of 3
};

ExampleEval evaluate_example(const Model& model, const Tokenizer& tok,
                             const PromptTemplate& tmpl, const ProxySet& ps,
                             const OverrideMap& ov = {});

std::vector<ExampleEval> evaluate_examples(const Model& model, const Tokenizer& tok,
                                           const PromptTemplate& tmpl,
                                           const std::vector<ProxySet>& sets,
                                           const OverrideMap& ov = {},
                                           int workers = 1);

double accuracy(const std::vector<ExampleEval>& evals);       // over proxies
double comprehension(const std::vector<ExampleEval>& evals);  // over examples

// Percentage change of a metric under an edit, relative to the unedited
// value. Undefined when the unedited value is zero. An edit "fails" when the
// signed change opposes the plan direction.
struct MetricDelta {
    double before = 0.0;
    double after = 0.0;
    double delta = 0.0;                    // after - before
    std::optional<double> relative_pct;    // |delta| / before * 100
    bool failed = false;
};

MetricDelta metric_delta(double before, double after, PlanDirection dir);

struct PlanOutcome {
    InterventionPlan plan;
    MetricDelta acc;  // relative_pct is the accuracy-change headline number
    MetricDelta com;  // same for comprehension
};

// Paired baseline/edited comparison over the same proxies. `flipped` counts
// previously correct answers that changed, `gained` previously wrong ones
// that became correct.
struct FlipStats {
    int prev_correct = 0;
    int flipped = 0;
    int gained = 0;
};

FlipStats count_flips(const std::vector<ExampleEval>& before,
                      const std::vector<ExampleEval>& after);

// Side effects of an edit on the probability table. Of the questions whose
// correct-option probability moved in the intended direction (z), how many
// dragged at least one wrong option the same way (y), and how many dragged
// all three (x). x <= y <= z always holds.
struct CollateralReport {
    int all_wrong_same = 0;   // x
    int any_wrong_same = 0;   // y
    int moved_intended = 0;   // z
    int n_questions = 0;
    double mean_rel_change_correct = 0.0;  // (after-before)/before, averaged
    double mean_rel_change_wrong = 0.0;    // same, wrong options pooled
};

CollateralReport collateral_report(const std::vector<ExampleEval>& before,
                                   const std::vector<ExampleEval>& after,
                                   PlanDirection dir);

struct SweepOutcome {
    std::vector<PlanOutcome> grid;
    int best_by_acc = -1;  // index of the best non-failed relative acc change
    int best_by_com = -1;
};

SweepOutcome pick_best(std::vector<PlanOutcome> grid);

// Half well-understood, half not, deterministic file order within each pool.
struct EvalSplit {
    std::vector<int> chosen;  // indices into the candidate list
    int n_comprehended = 0;
    int n_not = 0;
    std::vector<std::string> warnings;
};

EvalSplit select_balanced(const std::vector<ExampleEval>& candidates, int total);

// Neurons present in the sets of at least two tasks.
struct CommonNeurons {
    std::vector<NeuronId> good;
    std::vector<NeuronId> bad;
};

CommonNeurons common_neurons(const std::vector<NeuronSets>& per_task);

// Good/bad neuron counts per layer.
struct LayerHistogram {
    std::vector<int> good;
    std::vector<int> bad;
};

LayerHistogram layer_histogram(const NeuronSets& sets, int n_layers);

// Drops the shared neurons from a donor task's sets before they are applied
// to a recipient task.
NeuronSets strip_common(const NeuronSets& sets, const CommonNeurons& common);

}  // namespace neuronlab
