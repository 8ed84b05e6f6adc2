#include "neuronlab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neuronlab {

TargetKind target_from_name(const std::string& name) {
    if (name == "contrastive") return TargetKind::contrastive;
    if (name == "correct_logprob") return TargetKind::correct_logprob;
    if (name == "tn_margin") return TargetKind::tn_margin;
    throw UsageError("unknown attribution target '" + name + "'");
}

std::string target_name(TargetKind k) {
    switch (k) {
        case TargetKind::contrastive: return "contrastive";
        case TargetKind::correct_logprob: return "correct_logprob";
        case TargetKind::tn_margin: return "tn_margin";
    }
    return "?";
}

namespace {

// Softmax over the four letter logits, stabilized by max subtraction.
std::array<double, 4> letter_softmax(const std::vector<double>& logits,
                                     const std::array<int, 4>& ids) {
    std::array<double, 4> z{};
    for (int i = 0; i < 4; ++i) z[i] = logits[ids[i]];
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (auto& v : z) v /= sum;
    return z;
}

std::vector<double> full_softmax(const std::vector<double>& logits) {
    double zmax = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

}  // namespace

double Target::value(const std::vector<double>& logits) const {
    switch (kind) {
        case TargetKind::contrastive:
            return letter_softmax(logits, letter_ids)[correct_slot];
        case TargetKind::correct_logprob: {
            double zmax = *std::max_element(logits.begin(), logits.end());
            double lse = 0.0;
            for (double v : logits) lse += std::exp(v - zmax);
            return logits[letter_ids[correct_slot]] - (zmax + std::log(lse));
        }
        case TargetKind::tn_margin: {
            auto p = full_softmax(logits);
            double wrong = 0.0;
            for (int i = 0; i < 4; ++i)
                if (i != correct_slot) wrong += p[letter_ids[i]];
            return p[letter_ids[correct_slot]] - wrong / 3.0;
        }
    }
    throw UsageError("bad target kind");
}

std::vector<double> Target::dlogits(const std::vector<double>& logits) const {
    std::vector<double> d(logits.size(), 0.0);
    switch (kind) {
        case TargetKind::contrastive: {
            auto p = letter_softmax(logits, letter_ids);
            double pc = p[correct_slot];
            for (int j = 0; j < 4; ++j)
                d[letter_ids[j]] += pc * ((j == correct_slot ? 1.0 : 0.0) - p[j]);
            return d;
        }
        case TargetKind::correct_logprob: {
            auto p = full_softmax(logits);
            for (size_t i = 0; i < d.size(); ++i) d[i] = -p[i];
            d[letter_ids[correct_slot]] += 1.0;
            return d;
        }
        case TargetKind::tn_margin: {
            auto p = full_softmax(logits);
            std::vector<double> coef(logits.size(), 0.0);
            for (int i = 0; i < 4; ++i)
                coef[letter_ids[i]] = (i == correct_slot) ? 1.0 : -1.0 / 3.0;
            double f = 0.0;
            for (size_t i = 0; i < p.size(); ++i) f += coef[i] * p[i];
            for (size_t i = 0; i < d.size(); ++i) d[i] = p[i] * (coef[i] - f);
            return d;
        }
    }
    throw UsageError("bad target kind");
}

// ---- score maps ----------------------------------------------------------------

ScoreMap ScoreMap::zeros(const ModelConfig& cfg) {
    ScoreMap m;
    m.s.assign(cfg.n_layers, std::vector<double>(cfg.d_ffn, 0.0));
    return m;
}

ScoreMap& ScoreMap::operator+=(const ScoreMap& o) {
    if (s.size() != o.s.size()) throw UsageError("score map shape mismatch");
    for (size_t l = 0; l < s.size(); ++l) {
        if (s[l].size() != o.s[l].size()) throw UsageError("score map shape mismatch");
        for (size_t i = 0; i < s[l].size(); ++i) s[l][i] += o.s[l][i];
    }
    return *this;
}

// ---- integrated gradients -------------------------------------------------------

ScoreMap ig_scores(const Model& model, const std::vector<int>& tokens,
                   const Target& target, const IgOptions& opt) {
    if (opt.steps < 1) throw UsageError("attribution needs at least one step");
    const auto& cfg = model.config();
    auto natural = model.capture(tokens, {}, -1);
    auto dfn = [&](const std::vector<double>& logits) { return target.dlogits(logits); };

    ScoreMap out = ScoreMap::zeros(cfg);
    const int m = opt.steps;
    for (int l = 0; l < cfg.n_layers; ++l) {
        if (!opt.per_neuron) {
            std::vector<double> grad_sum(cfg.d_ffn, 0.0);
            for (int k = 1; k <= m; ++k) {
                OverrideMap ov;
                ov.path = PathScales{};
                ov.path->position = -1;
                ov.path->layer_scale.assign(cfg.n_layers, 1.0);
                ov.path->layer_scale[l] = static_cast<double>(k) / m;
                TapGradients tg =
                    model.grad_at_taps(tokens, ov, -1, dfn, nullptr);
                for (int i = 0; i < cfg.d_ffn; ++i) grad_sum[i] += tg.grads[l][i];
            }
            for (int i = 0; i < cfg.d_ffn; ++i)
                out.s[l][i] = natural.taps[l][i] * grad_sum[i] / m;
        } else {
            for (int i = 0; i < cfg.d_ffn; ++i) {
                double grad_sum = 0.0;
                for (int k = 1; k <= m; ++k) {
                    OverrideMap ov;
                    ov.path = PathScales{};
                    ov.path->position = -1;
                    ov.path->neuron_scale.push_back(
                        {NeuronId{l, i}, static_cast<double>(k) / m});
                    TapGradients tg =
                        model.grad_at_taps(tokens, ov, -1, dfn, nullptr);
                    grad_sum += tg.grads[l][i];
                }
                out.s[l][i] = natural.taps[l][i] * grad_sum / m;
            }
        }
    }
    return out;
}

ScoreMap example_score(const Model& model, const Tokenizer& tok,
                       const PromptTemplate& tmpl, const ProxySet& proxies,
                       TargetKind kind, const IgOptions& opt) {
    ScoreMap total = ScoreMap::zeros(model.config());
    for (const auto& q : proxies.proxies) {
        Prompt p = compose_prompt(q, tmpl, tok);
        Target t;
        t.kind = kind;
        t.letter_ids = tok.letter_ids();
        t.correct_slot = q.correct_index;
        total += ig_scores(model, p.tokens, t, opt);
    }
    return total;
}

// ---- aggregation ---------------------------------------------------------------

namespace {

struct Flat {
    const ScoreMap* m;
    int width;
    double operator[](int t) const { return m->s[t / width][t % width]; }
};

NeuronId unflatten(int t, int width) { return NeuronId{t / width, t % width}; }

// Indices of the z highest (or lowest) scores; ties prefer the lower flat
// index, i.e. lower layer then lower neuron index.
std::vector<int> extreme_z(const std::vector<double>& score, int z, bool top) {
    std::vector<int> idx(score.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto cmp = [&](int a, int b) {
        if (score[a] != score[b]) return top ? score[a] > score[b] : score[a] < score[b];
        return a < b;
    };
    if (z < static_cast<int>(idx.size())) {
        std::nth_element(idx.begin(), idx.begin() + z, idx.end(), cmp);
        idx.resize(z);
    }
    std::sort(idx.begin(), idx.end(), cmp);
    return idx;
}

void take_ranked(const std::vector<std::pair<double, int>>& ranked, int width, int k,
                 std::vector<NeuronScore>* out) {
    for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
        out->push_back({unflatten(ranked[i].second, width), ranked[i].first});
}

int clamp_z(int z, int total, std::vector<std::string>* warnings) {
    // Disjoint per-example sides need z at most half the population.
    int z_eff = std::min(z, total / 2);
    if (z_eff < 1) throw UsageError("per-example cut must keep at least one neuron");
    if (z_eff != z && warnings)
        warnings->push_back("per_example_z clamped from " + std::to_string(z) + " to " +
                            std::to_string(z_eff));
    return z_eff;
}

std::vector<double> flatten_map(const ScoreMap& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(m.layers()) * m.width());
    for (const auto& row : m.s) flat.insert(flat.end(), row.begin(), row.end());
    return flat;
}

}  // namespace

void check_ace_options(const AceOptions& opt) {
    if (opt.top_k < 1) throw UsageError("set size must be at least one");
    if (opt.top_k > opt.per_example_z)
        throw UsageError("set size cannot exceed the per-example cut");
}

NeuronSets ace_aggregate(const std::vector<ScoreMap>& per_example,
                         const AceOptions& opt) {
    if (per_example.empty()) throw UsageError("aggregation needs at least one example");
    check_ace_options(opt);
    const int width = per_example[0].width();
    const int total = per_example[0].layers() * width;
    NeuronSets sets;
    const int z = clamp_z(opt.per_example_z, total, &sets.warnings);

    std::vector<char> in_top(total, 0), in_bottom(total, 0);
    std::vector<double> gated(total, 0.0);
    for (const auto& m : per_example) {
        if (m.layers() * m.width() != total) throw UsageError("score map shape mismatch");
        auto flat = flatten_map(m);
        for (int t : extreme_z(flat, z, true)) {
            in_top[t] = 1;
            gated[t] += flat[t];
        }
        for (int t : extreme_z(flat, z, false)) {
            in_bottom[t] = 1;
            gated[t] += flat[t];
        }
    }

    int ambiguous = 0;
    std::vector<std::pair<double, int>> pos, neg;
    for (int t = 0; t < total; ++t) {
        if (in_top[t] && in_bottom[t]) {
            ++ambiguous;
            continue;
        }
        if (in_top[t] && gated[t] > 0.0) pos.push_back({gated[t], t});
        if (in_bottom[t] && gated[t] < 0.0) neg.push_back({gated[t], t});
    }
    std::sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::sort(neg.begin(), neg.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
    take_ranked(pos, width, opt.top_k, &sets.good);
    take_ranked(neg, width, opt.top_k, &sets.bad);
    if (static_cast<int>(sets.good.size()) < opt.top_k)
        sets.warnings.push_back("good set short: " + std::to_string(sets.good.size()) +
                                " of " + std::to_string(opt.top_k));
    if (static_cast<int>(sets.bad.size()) < opt.top_k)
        sets.warnings.push_back("bad set short: " + std::to_string(sets.bad.size()) +
                                " of " + std::to_string(opt.top_k));
    if (ambiguous > 0)
        sets.warnings.push_back(std::to_string(ambiguous) +
                                " neurons discarded as ambiguous");
    return sets;
}

NeuronSets kn_aggregate(const std::vector<ScoreMap>& per_example,
                        const AceOptions& opt) {
    if (per_example.empty()) throw UsageError("aggregation needs at least one example");
    check_ace_options(opt);
    const int width = per_example[0].width();
    const int total = per_example[0].layers() * width;
    NeuronSets sets;
    const int z = clamp_z(opt.per_example_z, total, &sets.warnings);

    std::vector<int> count(total, 0);
    std::vector<double> sum(total, 0.0);
    for (const auto& m : per_example) {
        auto flat = flatten_map(m);
        for (int t : extreme_z(flat, z, true)) ++count[t];
        for (int t = 0; t < total; ++t) sum[t] += flat[t];
    }
    std::vector<int> idx;
    for (int t = 0; t < total; ++t)
        if (count[t] > 0) idx.push_back(t);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (count[a] != count[b]) return count[a] > count[b];
        if (sum[a] != sum[b]) return sum[a] > sum[b];
        return a < b;
    });
    for (int i = 0; i < opt.top_k && i < static_cast<int>(idx.size()); ++i)
        sets.good.push_back({unflatten(idx[i], width), static_cast<double>(count[idx[i]])});
    if (static_cast<int>(sets.good.size()) < opt.top_k)
        sets.warnings.push_back("good set short: " + std::to_string(sets.good.size()) +
                                " of " + std::to_string(opt.top_k));
    return sets;
}

ScoreMap activation_scores(const Model& model,
                           const std::vector<std::vector<int>>& prompts) {
    if (prompts.empty()) throw UsageError("activation baseline needs prompts");
    ScoreMap out = ScoreMap::zeros(model.config());
    for (const auto& tokens : prompts) {
        auto snap = model.capture(tokens, {}, -1);
        for (size_t l = 0; l < out.s.size(); ++l)
            for (size_t i = 0; i < out.s[l].size(); ++i)
                out.s[l][i] += std::abs(snap.taps[l][i]);
    }
    for (auto& row : out.s)
        for (auto& v : row) v /= static_cast<double>(prompts.size());
    return out;
}

NeuronSets top_by_score(const ScoreMap& scores, int top_k) {
    NeuronSets sets;
    auto flat = flatten_map(scores);
    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(flat.size());
    for (int t = 0; t < static_cast<int>(flat.size()); ++t)
        ranked.push_back({flat[t], t});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    take_ranked(ranked, scores.width(), top_k, &sets.good);
    return sets;
}

NeuronSets random_sets(const ModelConfig& cfg, int top_k, std::uint64_t seed) {
    const int total = cfg.n_layers * cfg.d_ffn;
    if (top_k > total) throw UsageError("cannot draw more neurons than exist");
    Rng rng(seed);
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    NeuronSets sets;
    for (int i = 0; i < top_k; ++i) {
        int j = i + static_cast<int>(rng.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
        sets.good.push_back({unflatten(idx[i], cfg.d_ffn), 0.0});
    }
    return sets;
}

}  // namespace neuronlab
