#include "neuronlab/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace neuronlab {

PlanDirection direction_from_name(const std::string& name) {
    if (name == "enhance") return PlanDirection::enhance;
    if (name == "degrade") return PlanDirection::degrade;
    throw UsageError("unknown plan direction '" + name + "'");
}

std::string direction_name(PlanDirection d) {
    return d == PlanDirection::enhance ? "enhance" : "degrade";
}

OverrideMap InterventionPlan::overrides() const {
    OverrideMap ov;
    const bool enh = direction == PlanDirection::enhance;
    for (const auto& id : good_used)
        ov.entries.push_back({id, enh ? OverrideEntry::Mode::dbl : OverrideEntry::Mode::zero, 0.0});
    for (const auto& id : bad_used)
        ov.entries.push_back({id, enh ? OverrideEntry::Mode::zero : OverrideEntry::Mode::dbl, 0.0});
    return ov;
}

InterventionPlan build_plan(const NeuronSets& sets, PlanDirection dir, int budget,
                            double good_ratio) {
    if (budget < 1) throw UsageError("edit budget must be positive");
    if (good_ratio < 0.0 || good_ratio > 1.0)
        throw UsageError("good_ratio must lie in [0, 1]");
    if (sets.good.empty() && sets.bad.empty())
        throw UsageError("cannot build a plan from empty neuron sets");

    InterventionPlan plan;
    plan.direction = dir;
    plan.budget = budget;
    plan.good_ratio = good_ratio;

    int want_good = static_cast<int>(std::llround(good_ratio * budget));
    int want_bad = budget - want_good;
    int n_good = std::min<int>(want_good, static_cast<int>(sets.good.size()));
    int n_bad = std::min<int>(want_bad, static_cast<int>(sets.bad.size()));
    plan.good_shortfall = n_good < want_good;
    plan.bad_shortfall = n_bad < want_bad;
    for (int i = 0; i < n_good; ++i) plan.good_used.push_back(sets.good[i].id);
    for (int i = 0; i < n_bad; ++i) plan.bad_used.push_back(sets.bad[i].id);

    std::set<NeuronId> seen(plan.good_used.begin(), plan.good_used.end());
    for (const auto& id : plan.bad_used)
        if (!seen.insert(id).second)
            throw UsageError("neuron (" + std::to_string(id.layer) + "," +
                             std::to_string(id.index) + ") would receive two modes");
    return plan;
}

std::vector<InterventionPlan> ratio_sweep(const NeuronSets& sets, PlanDirection dir,
                                          int budget, double step) {
    if (step <= 0.0 || step > 1.0) throw UsageError("sweep step must lie in (0, 1]");
    std::vector<InterventionPlan> out;
    const int n = static_cast<int>(std::llround(1.0 / step));
    for (int i = 0; i <= n; ++i) {
        // The grid always closes at exactly 1.0, whatever the step is.
        const double ratio = i == n ? 1.0 : std::min(1.0, i * step);
        out.push_back(build_plan(sets, dir, budget, ratio));
    }
    return out;
}

}  // namespace neuronlab
