#include <cmath>
#include <string>
#include <vector>

#include "neuronlab/evaluation.hpp"
#include "neuronlab/tasks.hpp"

// Small-model trainer: next-token cross-entropy over the answered prompt
// (every position of the prompt with the correct letter appended), with
// bias-corrected adaptive moments and global-norm gradient clipping. Runs
// single-threaded in f64 so a (seed, config) pair always reproduces the
// same checkpoint bit for bit.

namespace neuronlab {

namespace {

Weights<double> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    Weights<double> w = Weights<double>::zeros(cfg);
    Rng rng(seed);
    const double base = 0.02;
    // residual-writing matrices get the depth-scaled init so the residual
    // stream's variance stays flat across layers
    const double resid = base / std::sqrt(2.0 * cfg.n_layers);
    visit_tensors(w, cfg, [&](const std::string& name, std::vector<double>& t, int, int) {
        std::string leaf = name.substr(name.find('.') + 1);
        if (leaf.size() >= 2 && leaf.compare(leaf.size() - 2, 2, "_g") == 0) {
            std::fill(t.begin(), t.end(), 1.0);
        } else if (leaf[0] == 'b' || leaf == "unemb_b" ||
                   (leaf.size() >= 2 && leaf.compare(leaf.size() - 2, 2, "_b") == 0)) {
            std::fill(t.begin(), t.end(), 0.0);
        } else {
            const double sd = (leaf == "wo" || leaf == "w2") ? resid : base;
            for (auto& x : t) x = rng.next_normal() * sd;
        }
    });
    return w;
}

std::vector<std::vector<double>*> tensor_list(Weights<double>& w, const ModelConfig& cfg) {
    std::vector<std::vector<double>*> out;
    visit_tensors(w, cfg,
                  [&](const std::string&, std::vector<double>& t, int, int) { out.push_back(&t); });
    return out;
}

}  // namespace

TrainResult train_model(const TaskData& task, const Tokenizer& tok, const TrainConfig& cfg) {
    if (cfg.steps < 0 || cfg.batch < 1) throw UsageError("bad training schedule");
    if (task.train.empty()) throw UsageError("no training examples");
    cfg.arch.validate();

    PromptTemplate tmpl = PromptTemplate::parse(task.template_text);
    const auto& letters = tok.letter_ids();

    std::vector<std::vector<int>> items;
    items.reserve(task.train.size());
    for (const auto& ex : task.train) {
        std::vector<int> toks = compose_prompt(ex, tmpl, tok).tokens;
        toks.push_back(letters[ex.correct_index]);
        if (static_cast<int>(toks.size()) > cfg.arch.max_seq)
            throw UsageError("training example longer than the model context");
        items.push_back(std::move(toks));
    }

    const int n_dev = std::min<int>(cfg.dev_examples, task.pool_proxies.size());
    std::vector<ProxySet> dev(task.pool_proxies.begin(), task.pool_proxies.begin() + n_dev);

    EngineT<double> eng(cfg.arch, init_weights(cfg.arch, cfg.seed));
    Weights<double> m = Weights<double>::zeros(cfg.arch);
    Weights<double> v = Weights<double>::zeros(cfg.arch);
    Weights<double> grad = Weights<double>::zeros(cfg.arch);
    auto wt = tensor_list(eng.weights(), cfg.arch);
    auto mt = tensor_list(m, cfg.arch);
    auto vt = tensor_list(v, cfg.arch);
    auto gt = tensor_list(grad, cfg.arch);

    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    order_rng.shuffle(order);
    size_t cursor = 0;

    TrainResult res;
    Cache<double> cache;
    const int nv = cfg.arch.vocab_size;
    std::vector<double> dlogits;
    std::vector<double> row(nv);

    auto dev_com = [&]() {
        if (dev.empty()) return 0.0;
        Weights<double> snap = eng.weights();
        std::uint64_t h = weights_content_hash(cfg.arch, snap, {});
        Model model(cfg.arch, std::move(snap), h);
        return comprehension(evaluate_examples(model, tok, tmpl, dev));
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        for (auto* t : gt) std::fill(t->begin(), t->end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const std::vector<int>& toks = items[order[cursor++]];
            eng.forward(toks, {}, cache);
            const int len = cache.len;
            const double inv = 1.0 / (static_cast<double>(len - 1) * cfg.batch);
            dlogits.assign(static_cast<std::size_t>(len) * nv, 0.0);
            const auto& w = eng.weights();
            for (int t = 0; t + 1 < len; ++t) {
                // unembed this position; forward only materializes the last row
                const double* xt =
                    cache.nf.data() + static_cast<std::size_t>(t) * cfg.arch.d_model;
                for (int o = 0; o < nv; ++o) row[o] = w.unemb_b[o];
                for (int i = 0; i < cfg.arch.d_model; ++i) {
                    const double xi = xt[i];
                    const double* wr = w.unemb.data() + static_cast<std::size_t>(i) * nv;
                    for (int o = 0; o < nv; ++o) row[o] += xi * wr[o];
                }
                double mx = row[0];
                for (double z : row) mx = std::max(mx, z);
                double sum = 0.0;
                for (double z : row) sum += std::exp(z - mx);
                const int want = toks[t + 1];
                double* drow = dlogits.data() + static_cast<std::size_t>(t) * nv;
                for (int o = 0; o < nv; ++o) drow[o] = std::exp(row[o] - mx) / sum * inv;
                drow[want] -= inv;
                loss += (mx + std::log(sum) - row[want]) * inv;
            }
            eng.backward(toks, cache, dlogits, len - 1, nullptr, &grad);
        }
        if (!std::isfinite(loss))
            throw NumericError("training loss diverged at step " + std::to_string(step));
        res.loss_curve.emplace_back(step, loss);

        double sq = 0.0;
        for (auto* t : gt)
            for (double g : *t) sq += g * g;
        const double norm = std::sqrt(sq);
        const double scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip)
                                 ? cfg.grad_clip / norm
                                 : 1.0;
        const double c1 = 1.0 - std::pow(beta1, step);
        const double c2 = 1.0 - std::pow(beta2, step);
        for (size_t t = 0; t < wt.size(); ++t) {
            auto& wv = *wt[t];
            auto& mv = *mt[t];
            auto& vv = *vt[t];
            auto& gv = *gt[t];
            for (size_t i = 0; i < wv.size(); ++i) {
                const double g = gv[i] * scale;
                mv[i] = beta1 * mv[i] + (1.0 - beta1) * g;
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g;
                wv[i] -= cfg.lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
            }
        }
        res.steps_run = step;

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            const double com = dev_com();
            res.dev_curve.emplace_back(step, com);
            res.final_dev_com = com;
            if (com >= cfg.stop_at_com) break;
        }
    }

    if (res.dev_curve.empty() || res.dev_curve.back().first != res.steps_run) {
        const double com = dev_com();
        res.dev_curve.emplace_back(res.steps_run, com);
        res.final_dev_com = com;
    }
    res.weights = eng.weights();
    return res;
}

}  // namespace neuronlab
