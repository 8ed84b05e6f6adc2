#include "neuronlab/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace neuronlab {

namespace {

AnswerRecord answer_prompt(const Model& model, const Prompt& p,
                           const std::array<int, 4>& letter_ids, int correct_slot,
                           const std::string& proxy_id, const OverrideMap& ov) {
    auto logits = model.forward(p.tokens, ov);
    AnswerRecord rec;
    rec.proxy_id = proxy_id;
    rec.correct_slot = correct_slot;

    std::array<double, 4> z{};
    for (int i = 0; i < 4; ++i) z[i] = logits[letter_ids[i]];
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    int best = 0;
    for (int i = 0; i < 4; ++i) {
        rec.letter_probs[i] = z[i] / sum;
        // Strict comparison keeps the lowest slot on exact ties.
        if (rec.letter_probs[i] > rec.letter_probs[best]) best = i;
    }
    rec.chosen_slot = best;
    return rec;
}

}  // namespace

ExampleEval evaluate_example(const Model& model, const Tokenizer& tok,
                             const PromptTemplate& tmpl, const ProxySet& ps,
                             const OverrideMap& ov) {
    ExampleEval ev;
    ev.parent_id = ps.parent_id;
    for (int k = 0; k < 3; ++k) {
        const auto& q = ps.proxies[k];
        Prompt p = compose_prompt(q, tmpl, tok);
        ev.proxies[k] =
            answer_prompt(model, p, tok.letter_ids(), q.correct_index, q.id, ov);
        if (ev.proxies[k].correct()) ++ev.n_correct;
    }
    ev.comprehended = ev.n_correct >= 2;
    return ev;
}

std::vector<ExampleEval> evaluate_examples(const Model& model, const Tokenizer& tok,
                                           const PromptTemplate& tmpl,
                                           const std::vector<ProxySet>& sets,
                                           const OverrideMap& ov, int workers) {
    std::vector<ExampleEval> out(sets.size());
    parallel_for(sets.size(), workers, [&](size_t i) {
        out[i] = evaluate_example(model, tok, tmpl, sets[i], ov);
    });
    return out;
}

double accuracy(const std::vector<ExampleEval>& evals) {
    if (evals.empty()) throw UsageError("accuracy over an empty evaluation");
    int correct = 0;
    for (const auto& ev : evals) correct += ev.n_correct;
    return static_cast<double>(correct) / (3.0 * static_cast<double>(evals.size()));
}

double comprehension(const std::vector<ExampleEval>& evals) {
    if (evals.empty()) throw UsageError("comprehension over an empty evaluation");
    int com = 0;
    for (const auto& ev : evals) com += ev.comprehended ? 1 : 0;
    return static_cast<double>(com) / static_cast<double>(evals.size());
}

MetricDelta metric_delta(double before, double after, PlanDirection dir) {
    MetricDelta d;
    d.before = before;
    d.after = after;
    d.delta = after - before;
    if (before > 0.0) d.relative_pct = std::abs(d.delta) / before * 100.0;
    if (d.delta != 0.0) {
        const bool up = d.delta > 0.0;
        d.failed = (dir == PlanDirection::enhance) ? !up : up;
    }
    return d;
}

FlipStats count_flips(const std::vector<ExampleEval>& before,
                      const std::vector<ExampleEval>& after) {
    if (before.size() != after.size())
        throw UsageError("flip counting needs paired evaluations");
    FlipStats f;
    for (size_t i = 0; i < before.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const auto& b = before[i].proxies[k];
            const auto& a = after[i].proxies[k];
            if (b.proxy_id != a.proxy_id)
                throw UsageError("flip counting saw mismatched proxies");
            if (b.correct()) {
                ++f.prev_correct;
                if (!a.correct()) ++f.flipped;
            } else if (a.correct()) {
                ++f.gained;
            }
        }
    }
    return f;
}

CollateralReport collateral_report(const std::vector<ExampleEval>& before,
                                   const std::vector<ExampleEval>& after,
                                   PlanDirection dir) {
    if (before.size() != after.size())
        throw UsageError("collateral analysis needs paired evaluations");
    CollateralReport rep;
    const double sign = (dir == PlanDirection::enhance) ? 1.0 : -1.0;
    double sum_correct = 0.0, sum_wrong = 0.0;
    int n_correct_terms = 0, n_wrong_terms = 0;
    for (size_t i = 0; i < before.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const auto& b = before[i].proxies[k];
            const auto& a = after[i].proxies[k];
            ++rep.n_questions;
            const int c = b.correct_slot;
            const double dc = a.letter_probs[c] - b.letter_probs[c];
            if (b.letter_probs[c] > 0.0) {
                sum_correct += dc / b.letter_probs[c];
                ++n_correct_terms;
            }
            int wrong_same = 0;
            for (int s = 0; s < 4; ++s) {
                if (s == c) continue;
                const double dw = a.letter_probs[s] - b.letter_probs[s];
                if (b.letter_probs[s] > 0.0) {
                    sum_wrong += dw / b.letter_probs[s];
                    ++n_wrong_terms;
                }
                if (sign * dw > 0.0) ++wrong_same;
            }
            if (sign * dc > 0.0) {
                ++rep.moved_intended;
                if (wrong_same >= 1) ++rep.any_wrong_same;
                if (wrong_same == 3) ++rep.all_wrong_same;
            }
        }
    }
    if (n_correct_terms > 0) rep.mean_rel_change_correct = sum_correct / n_correct_terms;
    if (n_wrong_terms > 0) rep.mean_rel_change_wrong = sum_wrong / n_wrong_terms;
    return rep;
}

SweepOutcome pick_best(std::vector<PlanOutcome> grid) {
    SweepOutcome out;
    out.grid = std::move(grid);
    for (int i = 0; i < static_cast<int>(out.grid.size()); ++i) {
        const auto& g = out.grid[i];
        if (!g.acc.failed && g.acc.relative_pct &&
            (out.best_by_acc < 0 ||
             *g.acc.relative_pct > *out.grid[out.best_by_acc].acc.relative_pct))
            out.best_by_acc = i;
        if (!g.com.failed && g.com.relative_pct &&
            (out.best_by_com < 0 ||
             *g.com.relative_pct > *out.grid[out.best_by_com].com.relative_pct))
            out.best_by_com = i;
    }
    return out;
}

EvalSplit select_balanced(const std::vector<ExampleEval>& candidates, int total) {
    if (total < 2) throw UsageError("evaluation split needs at least two examples");
    EvalSplit split;
    const int half = total / 2;
    std::vector<int> comp, rest;
    for (int i = 0; i < static_cast<int>(candidates.size()); ++i)
        (candidates[i].comprehended ? comp : rest).push_back(i);
    split.n_comprehended = std::min<int>(half, static_cast<int>(comp.size()));
    split.n_not = std::min<int>(total - half, static_cast<int>(rest.size()));
    if (split.n_comprehended < half)
        split.warnings.push_back("only " + std::to_string(split.n_comprehended) +
                                 " well-understood examples available");
    if (split.n_not < total - half)
        split.warnings.push_back("only " + std::to_string(split.n_not) +
                                 " not-understood examples available");
    for (int i = 0; i < split.n_comprehended; ++i) split.chosen.push_back(comp[i]);
    for (int i = 0; i < split.n_not; ++i) split.chosen.push_back(rest[i]);
    std::sort(split.chosen.begin(), split.chosen.end());
    return split;
}

CommonNeurons common_neurons(const std::vector<NeuronSets>& per_task) {
    std::map<NeuronId, int> good_count, bad_count;
    for (const auto& sets : per_task) {
        for (const auto& n : sets.good) ++good_count[n.id];
        for (const auto& n : sets.bad) ++bad_count[n.id];
    }
    CommonNeurons out;
    for (const auto& [id, c] : good_count)
        if (c >= 2) out.good.push_back(id);
    for (const auto& [id, c] : bad_count)
        if (c >= 2) out.bad.push_back(id);
    return out;
}

LayerHistogram layer_histogram(const NeuronSets& sets, int n_layers) {
    LayerHistogram h;
    h.good.assign(n_layers, 0);
    h.bad.assign(n_layers, 0);
    for (const auto& n : sets.good) ++h.good.at(n.id.layer);
    for (const auto& n : sets.bad) ++h.bad.at(n.id.layer);
    return h;
}

NeuronSets strip_common(const NeuronSets& sets, const CommonNeurons& common) {
    auto keep = [](const std::vector<NeuronScore>& v, const std::vector<NeuronId>& drop) {
        std::vector<NeuronScore> out;
        for (const auto& n : v)
            if (std::find(drop.begin(), drop.end(), n.id) == drop.end())
                out.push_back(n);
        return out;
    };
    NeuronSets out;
    out.good = keep(sets.good, common.good);
    out.bad = keep(sets.bad, common.bad);
    out.warnings = sets.warnings;
    return out;
}

}  // namespace neuronlab
