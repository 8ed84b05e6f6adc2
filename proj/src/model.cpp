#include "neuronlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

namespace neuronlab {

void ModelConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw UsageError(std::string("model config: ") + what);
    };
    need(n_layers > 0, "n_layers must be positive");
    need(d_model > 0, "d_model must be positive");
    need(n_heads > 0, "n_heads must be positive");
    need(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    need(d_ffn > 0, "d_ffn must be positive");
    need(vocab_size > 6, "vocab must hold specials plus the four letters");
    need(max_seq > 0, "max_seq must be positive");
}

void OverrideMap::validate(const ModelConfig& cfg) const {
    std::set<NeuronId> seen;
    auto check_id = [&](const NeuronId& id) {
        if (id.layer < 0 || id.layer >= cfg.n_layers || id.index < 0 || id.index >= cfg.d_ffn)
            throw UsageError("override names a neuron outside the model");
    };
    for (const auto& e : entries) {
        check_id(e.id);
        if (!seen.insert(e.id).second)
            throw UsageError("override map names one neuron twice");
        if (e.mode == OverrideEntry::Mode::scale &&
            (!std::isfinite(e.alpha) || e.alpha < 0.0))
            throw UsageError("scale override requires finite alpha >= 0");
    }
    if (path) {
        if (!path->layer_scale.empty() &&
            static_cast<int>(path->layer_scale.size()) != cfg.n_layers)
            throw UsageError("path layer_scale must list one factor per layer");
        for (double a : path->layer_scale)
            if (!std::isfinite(a) || a < 0.0)
                throw UsageError("path layer scale must be finite and >= 0");
        for (const auto& [id, a] : path->neuron_scale) {
            check_id(id);
            if (!std::isfinite(a)) throw UsageError("path neuron scale must be finite");
        }
        for (const auto& [id, v] : path->neuron_set) {
            check_id(id);
            if (!std::isfinite(v)) throw UsageError("pinned tap value must be finite");
        }
    }
}

template <class T>
Weights<T> Weights<T>::zeros(const ModelConfig& cfg) {
    Weights<T> w;
    w.layers.resize(cfg.n_layers);
    visit_tensors(w, cfg, [](const std::string&, std::vector<T>& v, int r, int c) {
        v.assign(static_cast<std::size_t>(r) * c, T(0));
    });
    return w;
}
template struct Weights<float>;
template struct Weights<double>;

Weights<float> cast_weights(const Weights<double>& w, const ModelConfig& cfg) {
    Weights<float> out = Weights<float>::zeros(cfg);
    visit_tensors(w, cfg, [&](const std::string& name, const std::vector<double>& v, int, int) {
        std::vector<float>* dst = nullptr;
        visit_tensors(out, cfg, [&](const std::string& n2, std::vector<float>& v2, int, int) {
            if (n2 == name) dst = &v2;
        });
        for (std::size_t i = 0; i < v.size(); ++i) (*dst)[i] = static_cast<float>(v[i]);
    });
    return out;
}

Weights<double> widen_weights(const Weights<float>& w, const ModelConfig& cfg) {
    Weights<double> out = Weights<double>::zeros(cfg);
    visit_tensors(w, cfg, [&](const std::string& name, const std::vector<float>& v, int, int) {
        std::vector<double>* dst = nullptr;
        visit_tensors(out, cfg, [&](const std::string& n2, std::vector<double>& v2, int, int) {
            if (n2 == name) dst = &v2;
        });
        for (std::size_t i = 0; i < v.size(); ++i) (*dst)[i] = static_cast<double>(v[i]);
    });
    return out;
}

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }
double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
    return cdf + x * pdf;
}

namespace {

// y[t] = x[t] . W + b for t in [0, len)
template <class T>
void affine(const T* x, const T* wm, const T* b, T* y, int len, int din, int dout) {
    for (int t = 0; t < len; ++t) {
        const T* xt = x + static_cast<std::size_t>(t) * din;
        T* yt = y + static_cast<std::size_t>(t) * dout;
        if (b)
            std::memcpy(yt, b, sizeof(T) * dout);
        else
            std::fill(yt, yt + dout, T(0));
        for (int i = 0; i < din; ++i) {
            T xi = xt[i];
            if (xi == T(0)) continue;
            const T* wr = wm + static_cast<std::size_t>(i) * dout;
            for (int o = 0; o < dout; ++o) yt[o] += xi * wr[o];
        }
    }
}

// dx[t] += dy[t] . W^T ; optional dW += x^T . dy, db += sum dy
template <class T>
void affine_backward(const T* x, const T* wm, const T* dy, T* dx, T* dw, T* db, int len,
                     int din, int dout) {
    for (int t = 0; t < len; ++t) {
        const T* dyt = dy + static_cast<std::size_t>(t) * dout;
        const T* xt = x + static_cast<std::size_t>(t) * din;
        T* dxt = dx ? dx + static_cast<std::size_t>(t) * din : nullptr;
        for (int i = 0; i < din; ++i) {
            const T* wr = wm + static_cast<std::size_t>(i) * dout;
            if (dxt) {
                T acc = T(0);
                for (int o = 0; o < dout; ++o) acc += dyt[o] * wr[o];
                dxt[i] += acc;
            }
            if (dw) {
                T xi = xt[i];
                if (xi != T(0)) {
                    T* dwr = dw + static_cast<std::size_t>(i) * dout;
                    for (int o = 0; o < dout; ++o) dwr[o] += xi * dyt[o];
                }
            }
        }
        if (db)
            for (int o = 0; o < dout; ++o) db[o] += dyt[o];
    }
}

constexpr double kLnEps = 1e-5;

template <class T>
void layernorm(const T* x, const T* g, const T* b, T* y, T* mean, T* rstd, int len, int d) {
    for (int t = 0; t < len; ++t) {
        const T* xt = x + static_cast<std::size_t>(t) * d;
        T* yt = y + static_cast<std::size_t>(t) * d;
        T mu = T(0);
        for (int i = 0; i < d; ++i) mu += xt[i];
        mu /= T(d);
        T var = T(0);
        for (int i = 0; i < d; ++i) {
            T c = xt[i] - mu;
            var += c * c;
        }
        var /= T(d);
        T rs = T(1) / std::sqrt(var + T(kLnEps));
        mean[t] = mu;
        rstd[t] = rs;
        for (int i = 0; i < d; ++i) yt[i] = (xt[i] - mu) * rs * g[i] + b[i];
    }
}

// dx += backward(dy); dg/db accumulate when given.
template <class T>
void layernorm_backward(const T* x, const T* g, const T* mean, const T* rstd, const T* dy,
                        T* dx, T* dg, T* db, int len, int d) {
    for (int t = 0; t < len; ++t) {
        const T* xt = x + static_cast<std::size_t>(t) * d;
        const T* dyt = dy + static_cast<std::size_t>(t) * d;
        T* dxt = dx + static_cast<std::size_t>(t) * d;
        T mu = mean[t], rs = rstd[t];
        T s1 = T(0), s2 = T(0);
        for (int i = 0; i < d; ++i) {
            T xhat = (xt[i] - mu) * rs;
            T dyg = dyt[i] * g[i];
            s1 += dyg;
            s2 += dyg * xhat;
            if (dg) dg[i] += dyt[i] * xhat;
            if (db) db[i] += dyt[i];
        }
        s1 /= T(d);
        s2 /= T(d);
        for (int i = 0; i < d; ++i) {
            T xhat = (xt[i] - mu) * rs;
            dxt[i] += (dyt[i] * g[i] - s1 - xhat * s2) * rs;
        }
    }
}

// Override multiplier for neuron i of layer l at position p, plus pinning.
template <class T>
struct TapPlan {
    std::vector<T> persist;                      // n_layers * d_ffn multipliers
    int path_pos = -1;
    std::vector<T> path_mult;                    // n_layers * d_ffn at path_pos
    std::vector<std::pair<NeuronId, T>> pins;    // absolute values at path_pos
    bool has_path = false;
};

template <class T>
TapPlan<T> make_plan(const ModelConfig& cfg, const OverrideMap& ov, int len) {
    TapPlan<T> plan;
    std::size_t n = static_cast<std::size_t>(cfg.n_layers) * cfg.d_ffn;
    plan.persist.assign(n, T(1));
    for (const auto& e : ov.entries) {
        T f = e.mode == OverrideEntry::Mode::zero   ? T(0)
              : e.mode == OverrideEntry::Mode::dbl ? T(2)
                                                   : static_cast<T>(e.alpha);
        plan.persist[static_cast<std::size_t>(e.id.layer) * cfg.d_ffn + e.id.index] = f;
    }
    if (ov.path) {
        plan.has_path = true;
        plan.path_pos = ov.path->position < 0 ? len - 1 : ov.path->position;
        plan.path_mult.assign(n, T(1));
        if (!ov.path->layer_scale.empty()) {
            for (int l = 0; l < cfg.n_layers; ++l) {
                T a = static_cast<T>(ov.path->layer_scale[l]);
                std::fill(plan.path_mult.begin() + static_cast<std::size_t>(l) * cfg.d_ffn,
                          plan.path_mult.begin() + static_cast<std::size_t>(l + 1) * cfg.d_ffn,
                          a);
            }
        }
        for (const auto& [id, a] : ov.path->neuron_scale)
            plan.path_mult[static_cast<std::size_t>(id.layer) * cfg.d_ffn + id.index] =
                static_cast<T>(a);
        for (const auto& [id, v] : ov.path->neuron_set)
            plan.pins.emplace_back(id, static_cast<T>(v));
    }
    return plan;
}

}  // namespace

template <class T>
void EngineT<T>::forward(const std::vector<int>& tokens, const OverrideMap& ov, Cache<T>& c,
                         int start_layer, const Cache<T>* base) const {
    const int len = static_cast<int>(tokens.size());
    const int d = cfg_.d_model, f = cfg_.d_ffn, nh = cfg_.n_heads, dh = cfg_.head_dim();
    if (len == 0) throw UsageError("forward needs at least one token");
    if (len > cfg_.max_seq) throw UsageError("sequence longer than max_seq");
    for (int id : tokens)
        if (id < 0 || id >= cfg_.vocab_size) throw UsageError("token id outside vocabulary");
    ov.validate(cfg_);
    if (start_layer > 0 && (!base || base->len != len))
        throw UsageError("resumed forward needs a base cache of the same length");

    auto plan = make_plan<T>(cfg_, ov, len);
    const bool ln = cfg_.norm == NormKind::layernorm;

    c.len = len;
    c.layers.resize(cfg_.n_layers);
    auto seq = [&](std::vector<T>& v, int cols) {
        v.assign(static_cast<std::size_t>(len) * cols, T(0));
    };

    seq(c.x0, d);
    for (int t = 0; t < len; ++t) {
        const T* te = w_.tok_emb.data() + static_cast<std::size_t>(tokens[t]) * d;
        const T* pe = w_.pos_emb.data() + static_cast<std::size_t>(t) * d;
        T* x = c.x0.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];
    }

    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> x = start_layer == 0 ? c.x0 : base->layers[start_layer].x_in;

    for (int l = start_layer; l < cfg_.n_layers; ++l) {
        auto& L = c.layers[l];
        const auto& W = w_.layers[l];
        L.x_in = x;

        // attention
        if (ln) {
            seq(L.n1, d);
            L.n1_mean.assign(len, T(0));
            L.n1_rstd.assign(len, T(0));
            layernorm(L.x_in.data(), W.ln1_g.data(), W.ln1_b.data(), L.n1.data(),
                      L.n1_mean.data(), L.n1_rstd.data(), len, d);
        } else {
            L.n1 = L.x_in;
        }
        seq(L.q, d);
        seq(L.k, d);
        seq(L.v, d);
        affine(L.n1.data(), W.wq.data(), W.bq.data(), L.q.data(), len, d, d);
        affine(L.n1.data(), W.wk.data(), W.bk.data(), L.k.data(), len, d, d);
        affine(L.n1.data(), W.wv.data(), W.bv.data(), L.v.data(), len, d, d);

        L.att.assign(static_cast<std::size_t>(nh) * len * len, T(0));
        seq(L.ctx, d);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int t = 0; t < len; ++t) {
                T* row = L.att.data() + (static_cast<std::size_t>(h) * len + t) * len;
                const T* qt = L.q.data() + static_cast<std::size_t>(t) * d + off;
                T mx = -std::numeric_limits<T>::infinity();
                for (int u = 0; u <= t; ++u) {
                    const T* ku = L.k.data() + static_cast<std::size_t>(u) * d + off;
                    T s = T(0);
                    for (int i = 0; i < dh; ++i) s += qt[i] * ku[i];
                    s *= scale;
                    row[u] = s;
                    mx = std::max(mx, s);
                }
                T denom = T(0);
                for (int u = 0; u <= t; ++u) {
                    row[u] = std::exp(row[u] - mx);
                    denom += row[u];
                }
                T inv = T(1) / denom;
                T* ct = L.ctx.data() + static_cast<std::size_t>(t) * d + off;
                for (int u = 0; u <= t; ++u) {
                    row[u] *= inv;
                    const T* vu = L.v.data() + static_cast<std::size_t>(u) * d + off;
                    T p = row[u];
                    for (int i = 0; i < dh; ++i) ct[i] += p * vu[i];
                }
            }
        }
        seq(L.x_mid, d);
        affine(L.ctx.data(), W.wo.data(), W.bo.data(), L.x_mid.data(), len, d, d);
        for (std::size_t i = 0; i < L.x_mid.size(); ++i) L.x_mid[i] += L.x_in[i];

        // feed-forward
        if (ln) {
            seq(L.n2, d);
            L.n2_mean.assign(len, T(0));
            L.n2_rstd.assign(len, T(0));
            layernorm(L.x_mid.data(), W.ln2_g.data(), W.ln2_b.data(), L.n2.data(),
                      L.n2_mean.data(), L.n2_rstd.data(), len, d);
        } else {
            L.n2 = L.x_mid;
        }
        seq(L.pre, f);
        affine(L.n2.data(), W.w1.data(), W.b1.data(), L.pre.data(), len, d, f);
        seq(L.raw, f);
        for (std::size_t i = 0; i < L.raw.size(); ++i)
            L.raw[i] = static_cast<T>(gelu_exact(static_cast<double>(L.pre[i])));

        L.mult.assign(static_cast<std::size_t>(len) * f, T(1));
        L.pinned.assign(static_cast<std::size_t>(len) * f, 0);
        const T* pf = plan.persist.data() + static_cast<std::size_t>(l) * f;
        for (int t = 0; t < len; ++t) {
            T* mrow = L.mult.data() + static_cast<std::size_t>(t) * f;
            for (int i = 0; i < f; ++i) mrow[i] = pf[i];
        }
        if (plan.has_path && plan.path_pos < len) {
            T* mrow = L.mult.data() + static_cast<std::size_t>(plan.path_pos) * f;
            const T* aw = plan.path_mult.data() + static_cast<std::size_t>(l) * f;
            for (int i = 0; i < f; ++i) mrow[i] *= aw[i];
        }
        L.tap = L.raw;
        for (std::size_t i = 0; i < L.tap.size(); ++i) L.tap[i] *= L.mult[i];
        if (plan.has_path && plan.path_pos < len) {
            for (const auto& [id, val] : plan.pins) {
                if (id.layer != l) continue;
                std::size_t at = static_cast<std::size_t>(plan.path_pos) * f + id.index;
                L.tap[at] = val;
                L.pinned[at] = 1;
            }
        }

        std::vector<T> mlp(static_cast<std::size_t>(len) * d, T(0));
        affine(L.tap.data(), W.w2.data(), W.b2.data(), mlp.data(), len, f, d);
        x = L.x_mid;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];
    }

    c.x_out = x;
    if (ln) {
        seq(c.nf, d);
        c.nf_mean.assign(len, T(0));
        c.nf_rstd.assign(len, T(0));
        layernorm(c.x_out.data(), w_.lnf_g.data(), w_.lnf_b.data(), c.nf.data(),
                  c.nf_mean.data(), c.nf_rstd.data(), len, d);
    } else {
        c.nf = c.x_out;
    }
    c.logits.assign(cfg_.vocab_size, T(0));
    affine(c.nf.data() + static_cast<std::size_t>(len - 1) * d, w_.unemb.data(),
           w_.unemb_b.data(), c.logits.data(), 1, d, cfg_.vocab_size);
    for (T z : c.logits)
        if (!std::isfinite(static_cast<double>(z)))
            throw NumericError("non-finite logit produced by forward pass");
}

template <class T>
void EngineT<T>::backward(const std::vector<int>& tokens, const Cache<T>& c,
                          const std::vector<T>& dlogits, int position, TapGradients* taps,
                          Weights<T>* pg) const {
    const int len = c.len, d = cfg_.d_model, f = cfg_.d_ffn, nh = cfg_.n_heads,
              dh = cfg_.head_dim();
    const bool ln = cfg_.norm == NormKind::layernorm;
    const bool full_seq =
        static_cast<int>(dlogits.size()) == len * cfg_.vocab_size && len > 1;
    if (!full_seq && static_cast<int>(dlogits.size()) != cfg_.vocab_size)
        throw UsageError("dlogits must cover the vocabulary once or once per position");
    if (position < 0 || position >= len) throw UsageError("gradient position out of range");

    if (taps) {
        taps->position = position;
        taps->grads.assign(cfg_.n_layers, std::vector<double>(f, 0.0));
    }

    std::vector<T> dx(static_cast<std::size_t>(len) * d, T(0));

    // unembedding: dlogits carries either the final position or every position
    {
        std::vector<T> dnf(static_cast<std::size_t>(len) * d, T(0));
        if (full_seq) {
            affine_backward(c.nf.data(), w_.unemb.data(), dlogits.data(), dnf.data(),
                            pg ? pg->unemb.data() : nullptr,
                            pg ? pg->unemb_b.data() : nullptr, len, d, cfg_.vocab_size);
        } else {
            const T* nf_last = c.nf.data() + static_cast<std::size_t>(len - 1) * d;
            T* dnf_last = dnf.data() + static_cast<std::size_t>(len - 1) * d;
            affine_backward(nf_last, w_.unemb.data(), dlogits.data(), dnf_last,
                            pg ? pg->unemb.data() : nullptr,
                            pg ? pg->unemb_b.data() : nullptr, 1, d, cfg_.vocab_size);
        }
        if (ln) {
            layernorm_backward(c.x_out.data(), w_.lnf_g.data(), c.nf_mean.data(),
                               c.nf_rstd.data(), dnf.data(), dx.data(),
                               pg ? pg->lnf_g.data() : nullptr,
                               pg ? pg->lnf_b.data() : nullptr, len, d);
        } else {
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dnf[i];
        }
    }

    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> dtap(static_cast<std::size_t>(len) * f);
    std::vector<T> dpre(static_cast<std::size_t>(len) * f);
    std::vector<T> dn(static_cast<std::size_t>(len) * d);
    std::vector<T> dq(static_cast<std::size_t>(len) * d);
    std::vector<T> dk(static_cast<std::size_t>(len) * d);
    std::vector<T> dv(static_cast<std::size_t>(len) * d);
    std::vector<T> dctx(static_cast<std::size_t>(len) * d);

    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
        const auto& L = c.layers[l];
        const auto& W = w_.layers[l];
        auto* PG = pg ? &pg->layers[l] : nullptr;

        // ffn branch: dx is d(x_next); residual passes it to x_mid as well
        std::fill(dtap.begin(), dtap.end(), T(0));
        affine_backward(L.tap.data(), W.w2.data(), dx.data(), dtap.data(),
                        PG ? PG->w2.data() : nullptr, PG ? PG->b2.data() : nullptr, len, f, d);
        if (taps) {
            const T* row = dtap.data() + static_cast<std::size_t>(position) * f;
            auto& g = taps->grads[l];
            for (int i = 0; i < f; ++i) g[i] = static_cast<double>(row[i]);
        }
        // through override: raw -> tap is multiplication, pins cut the flow
        std::fill(dpre.begin(), dpre.end(), T(0));
        for (std::size_t i = 0; i < dtap.size(); ++i) {
            if (L.pinned[i]) continue;
            T draw = dtap[i] * L.mult[i];
            dpre[i] = draw * static_cast<T>(gelu_grad(static_cast<double>(L.pre[i])));
        }
        std::fill(dn.begin(), dn.end(), T(0));
        affine_backward(L.n2.data(), W.w1.data(), dpre.data(), dn.data(),
                        PG ? PG->w1.data() : nullptr, PG ? PG->b1.data() : nullptr, len, d, f);
        if (ln) {
            layernorm_backward(L.x_mid.data(), W.ln2_g.data(), L.n2_mean.data(),
                               L.n2_rstd.data(), dn.data(), dx.data(),
                               PG ? PG->ln2_g.data() : nullptr,
                               PG ? PG->ln2_b.data() : nullptr, len, d);
        } else {
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dn[i];
        }

        // attention branch: dx now holds d(x_mid)
        std::fill(dctx.begin(), dctx.end(), T(0));
        affine_backward(L.ctx.data(), W.wo.data(), dx.data(), dctx.data(),
                        PG ? PG->wo.data() : nullptr, PG ? PG->bo.data() : nullptr, len, d, d);
        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        std::vector<T> datt(len);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int t = 0; t < len; ++t) {
                const T* arow = L.att.data() + (static_cast<std::size_t>(h) * len + t) * len;
                const T* dct = dctx.data() + static_cast<std::size_t>(t) * d + off;
                // datt and softmax backward
                T dot = T(0);
                for (int u = 0; u <= t; ++u) {
                    const T* vu = L.v.data() + static_cast<std::size_t>(u) * d + off;
                    T s = T(0);
                    for (int i = 0; i < dh; ++i) s += dct[i] * vu[i];
                    datt[u] = s;
                    dot += arow[u] * s;
                    T* dvu = dv.data() + static_cast<std::size_t>(u) * d + off;
                    T p = arow[u];
                    for (int i = 0; i < dh; ++i) dvu[i] += p * dct[i];
                }
                const T* qt = L.q.data() + static_cast<std::size_t>(t) * d + off;
                T* dqt = dq.data() + static_cast<std::size_t>(t) * d + off;
                for (int u = 0; u <= t; ++u) {
                    T ds = arow[u] * (datt[u] - dot) * scale;
                    if (ds == T(0)) continue;
                    const T* ku = L.k.data() + static_cast<std::size_t>(u) * d + off;
                    T* dku = dk.data() + static_cast<std::size_t>(u) * d + off;
                    for (int i = 0; i < dh; ++i) {
                        dqt[i] += ds * ku[i];
                        dku[i] += ds * qt[i];
                    }
                }
            }
        }
        std::fill(dn.begin(), dn.end(), T(0));
        affine_backward(L.n1.data(), W.wq.data(), dq.data(), dn.data(),
                        PG ? PG->wq.data() : nullptr, PG ? PG->bq.data() : nullptr, len, d, d);
        affine_backward(L.n1.data(), W.wk.data(), dk.data(), dn.data(),
                        PG ? PG->wk.data() : nullptr, PG ? PG->bk.data() : nullptr, len, d, d);
        affine_backward(L.n1.data(), W.wv.data(), dv.data(), dn.data(),
                        PG ? PG->wv.data() : nullptr, PG ? PG->bv.data() : nullptr, len, d, d);
        if (ln) {
            layernorm_backward(L.x_in.data(), W.ln1_g.data(), L.n1_mean.data(),
                               L.n1_rstd.data(), dn.data(), dx.data(),
                               PG ? PG->ln1_g.data() : nullptr,
                               PG ? PG->ln1_b.data() : nullptr, len, d);
        } else {
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dn[i];
        }
    }

    if (pg) {
        for (int t = 0; t < len; ++t) {
            const T* dxt = dx.data() + static_cast<std::size_t>(t) * d;
            T* te = pg->tok_emb.data() + static_cast<std::size_t>(tokens[t]) * d;
            T* pe = pg->pos_emb.data() + static_cast<std::size_t>(t) * d;
            for (int i = 0; i < d; ++i) {
                te[i] += dxt[i];
                pe[i] += dxt[i];
            }
        }
    }
}

template class EngineT<float>;
template class EngineT<double>;

Model::Model(ModelConfig cfg, Weights<double> master, std::uint64_t hash,
             std::map<std::string, std::string> meta)
    : cfg_(cfg), master_(std::move(master)), hash_(hash), meta_(std::move(meta)) {
    cfg_.validate();
    visit_tensors(master_, cfg_, [](const std::string& n, const std::vector<double>& v, int, int) {
        for (double x : v)
            if (!std::isfinite(x)) throw NumericError("non-finite weight in tensor " + n);
    });
    if (cfg_.precision == Precision::f32)
        ef_ = std::make_unique<EngineT<float>>(cfg_, cast_weights(master_, cfg_));
    else
        ed_ = std::make_unique<EngineT<double>>(cfg_, master_);
}

template <>
const EngineT<float>& Model::engine<float>() const { return *ef_; }
template <>
const EngineT<double>& Model::engine<double>() const { return *ed_; }

int Model::resolve_position(const std::vector<int>& tokens, int position) const {
    int len = static_cast<int>(tokens.size());
    int p = position < 0 ? len - 1 : position;
    if (p < 0 || p >= len) throw UsageError("position outside the token sequence");
    return p;
}

namespace {
template <class T>
std::vector<double> forward_logits(const EngineT<T>& e, const std::vector<int>& tokens,
                                   const OverrideMap& ov) {
    Cache<T> c;
    e.forward(tokens, ov, c);
    return std::vector<double>(c.logits.begin(), c.logits.end());
}

template <class T>
ActivationSnapshot capture_taps(const EngineT<T>& e, const std::vector<int>& tokens,
                                const OverrideMap& ov, int pos) {
    Cache<T> c;
    e.forward(tokens, ov, c);
    ActivationSnapshot snap;
    snap.position = pos;
    snap.taps.resize(e.config().n_layers);
    int f = e.config().d_ffn;
    for (int l = 0; l < e.config().n_layers; ++l) {
        const T* row = c.layers[l].tap.data() + static_cast<std::size_t>(pos) * f;
        snap.taps[l].assign(row, row + f);
    }
    return snap;
}

template <class T>
TapGradients grad_taps(
    const EngineT<T>& e, const std::vector<int>& tokens, const OverrideMap& ov, int pos,
    const std::function<std::vector<double>(const std::vector<double>&)>& dlogits_fn,
    std::vector<double>* logits_out) {
    Cache<T> c;
    e.forward(tokens, ov, c);
    std::vector<double> logits(c.logits.begin(), c.logits.end());
    std::vector<double> dl = dlogits_fn(logits);
    if (logits_out) *logits_out = logits;
    std::vector<T> dlv(dl.begin(), dl.end());
    TapGradients tg;
    e.backward(tokens, c, dlv, pos, &tg, nullptr);
    return tg;
}
}  // namespace

std::vector<double> Model::forward(const std::vector<int>& tokens, const OverrideMap& ov) const {
    return cfg_.precision == Precision::f32 ? forward_logits(*ef_, tokens, ov)
                                            : forward_logits(*ed_, tokens, ov);
}

ActivationSnapshot Model::capture(const std::vector<int>& tokens, const OverrideMap& ov,
                                  int position) const {
    int pos = resolve_position(tokens, position);
    return cfg_.precision == Precision::f32 ? capture_taps(*ef_, tokens, ov, pos)
                                            : capture_taps(*ed_, tokens, ov, pos);
}

TapGradients Model::grad_at_taps(
    const std::vector<int>& tokens, const OverrideMap& ov, int position,
    const std::function<std::vector<double>(const std::vector<double>&)>& dlogits_fn,
    std::vector<double>* logits_out) const {
    int pos = resolve_position(tokens, position);
    return cfg_.precision == Precision::f32
               ? grad_taps(*ef_, tokens, ov, pos, dlogits_fn, logits_out)
               : grad_taps(*ed_, tokens, ov, pos, dlogits_fn, logits_out);
}

}  // namespace neuronlab
