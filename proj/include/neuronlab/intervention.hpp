#pragma once
// Turns attributed neuron sets into causal edit plans. An enhancement plan
// doubles good neurons and silences bad ones; a degradation plan does the
// opposite. A ratio sweep trades good-set edits against bad-set edits under
// a fixed total budget.

#include <string>
#include <vector>

#include "neuronlab/attribution.hpp"
#include "neuronlab/common.hpp"
#include "neuronlab/model.hpp"

namespace neuronlab {

enum class PlanDirection { enhance, degrade };

PlanDirection direction_from_name(const std::string& name);
std::string direction_name(PlanDirection d);

struct InterventionPlan {
    PlanDirection direction = PlanDirection::enhance;
    int budget = 100;
    double good_ratio = 0.5;   // requested share of the budget spent on good
    std::vector<NeuronId> good_used;
    std::vector<NeuronId> bad_used;
    bool good_shortfall = false;  // fewer good neurons available than asked
    bool bad_shortfall = false;

    // enhance: double good_used, zero bad_used. degrade: the reverse.
    OverrideMap overrides() const;
};

// Takes round(ratio * budget) neurons from the head of the good set and the
// remainder from the bad set. Throws UsageError when both sets are empty or
// when a neuron would receive two modes.
InterventionPlan build_plan(const NeuronSets& sets, PlanDirection dir,
                            int budget, double good_ratio);

// Ratios 0.0, step, ..., 1.0 inclusive.
std::vector<InterventionPlan> ratio_sweep(const NeuronSets& sets,
                                          PlanDirection dir, int budget,
                                          double step = 0.1);

}  // namespace neuronlab
