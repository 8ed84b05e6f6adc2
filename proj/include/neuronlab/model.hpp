#pragma once
// Minimal decoder-only transformer with first-class access to the FFN
// intermediate activations ("taps"): capture, persistent per-neuron
// overrides, per-position path scaling, and exact reverse-mode gradients
// of a scalar target with respect to every tap and every parameter.
//
// Layout conventions: matrices are row-major with rows indexed by the
// input dimension, so y = x . W accumulates over W[i*out + o]. All
// sequence-major buffers are [position][channel].

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "neuronlab/common.hpp"

namespace neuronlab {

enum class Activation { gelu };
enum class NormKind { layernorm, none };
enum class Precision { f32, f64 };

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int d_ffn = 0;
    int vocab_size = 0;
    int max_seq = 0;
    Activation activation = Activation::gelu;
    NormKind norm = NormKind::layernorm;
    Precision precision = Precision::f32;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Persistent neuron override, applied at every token position.
struct OverrideEntry {
    enum class Mode { zero, dbl, scale };
    NeuronId id;
    Mode mode = Mode::zero;
    double alpha = 0.0;  // only for Mode::scale
};

// Path-point controls applied at exactly one position. layer_scale holds
// one factor per layer (empty means all 1). neuron_scale replaces the
// layer factor for specific neurons, and neuron_set pins a tap to an
// absolute value (no gradient flows from a pinned tap into its raw
// activation; the tap itself still has a gradient).
struct PathScales {
    int position = -1;  // -1 selects the final position
    std::vector<double> layer_scale;
    std::vector<std::pair<NeuronId, double>> neuron_scale;
    std::vector<std::pair<NeuronId, double>> neuron_set;
};

struct OverrideMap {
    std::vector<OverrideEntry> entries;
    std::optional<PathScales> path;

    bool empty() const { return entries.empty() && !path.has_value(); }
    void validate(const ModelConfig& cfg) const;
};

// Post-override tap values, one vector of d_ffn values per layer, taken at
// a single position.
struct ActivationSnapshot {
    int position = 0;
    std::vector<std::vector<double>> taps;
};

// dF/d(tap) per layer at a single position.
struct TapGradients {
    int position = 0;
    std::vector<std::vector<double>> grads;
};

template <class T>
struct Weights {
    struct Layer {
        std::vector<T> ln1_g, ln1_b, ln2_g, ln2_b;
        std::vector<T> wq, bq, wk, bk, wv, bv, wo, bo;
        std::vector<T> w1, b1, w2, b2;
    };
    std::vector<T> tok_emb, pos_emb;
    std::vector<Layer> layers;
    std::vector<T> lnf_g, lnf_b;
    std::vector<T> unemb, unemb_b;

    static Weights zeros(const ModelConfig& cfg);
};

// Visits every tensor in a stable order shared by serialization, hashing,
// casting and the optimizer. fn(name, vec, rows, cols).
template <class T, class F>
void visit_tensors(Weights<T>& w, const ModelConfig& cfg, F&& fn) {
    const bool ln = cfg.norm == NormKind::layernorm;
    int d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size, s = cfg.max_seq;
    fn("tok_emb", w.tok_emb, v, d);
    fn("pos_emb", w.pos_emb, s, d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& L = w.layers[l];
        std::string p = "layer" + std::to_string(l) + ".";
        if (ln) {
            fn(p + "ln1_g", L.ln1_g, 1, d);
            fn(p + "ln1_b", L.ln1_b, 1, d);
        }
        fn(p + "wq", L.wq, d, d);
        fn(p + "bq", L.bq, 1, d);
        fn(p + "wk", L.wk, d, d);
        fn(p + "bk", L.bk, 1, d);
        fn(p + "wv", L.wv, d, d);
        fn(p + "bv", L.bv, 1, d);
        fn(p + "wo", L.wo, d, d);
        fn(p + "bo", L.bo, 1, d);
        if (ln) {
            fn(p + "ln2_g", L.ln2_g, 1, d);
            fn(p + "ln2_b", L.ln2_b, 1, d);
        }
        fn(p + "w1", L.w1, d, f);
        fn(p + "b1", L.b1, 1, f);
        fn(p + "w2", L.w2, f, d);
        fn(p + "b2", L.b2, 1, d);
    }
    if (ln) {
        fn("lnf_g", w.lnf_g, 1, d);
        fn("lnf_b", w.lnf_b, 1, d);
    }
    fn("unemb", w.unemb, d, v);
    fn("unemb_b", w.unemb_b, 1, v);
}
template <class T, class F>
void visit_tensors(const Weights<T>& w, const ModelConfig& cfg, F&& fn) {
    visit_tensors(const_cast<Weights<T>&>(w), cfg,
                  [&](const std::string& n, std::vector<T>& vec, int r, int c) {
                      fn(n, const_cast<const std::vector<T>&>(vec), r, c);
                  });
}

Weights<float> cast_weights(const Weights<double>& w, const ModelConfig& cfg);
Weights<double> widen_weights(const Weights<float>& w, const ModelConfig& cfg);

// Forward intermediates for one evaluation. Each call owns its cache, so
// concurrent evaluations of one const engine are safe.
template <class T>
struct Cache {
    int len = 0;
    struct Layer {
        std::vector<T> x_in, n1, q, k, v, att, ctx, x_mid, n2;
        std::vector<T> n1_mean, n1_rstd, n2_mean, n2_rstd;
        std::vector<T> pre, raw, tap, mult;
        std::vector<unsigned char> pinned;
    };
    std::vector<T> x0;
    std::vector<Layer> layers;
    std::vector<T> x_out, nf;
    std::vector<T> nf_mean, nf_rstd;
    std::vector<T> logits;  // final position only
};

template <class T>
class EngineT {
  public:
    EngineT(ModelConfig cfg, Weights<T> w) : cfg_(cfg), w_(std::move(w)) {}

    const ModelConfig& config() const { return cfg_; }
    const Weights<T>& weights() const { return w_; }
    Weights<T>& weights() { return w_; }

    // Runs the network and fills the cache. start_layer > 0 resumes from a
    // base cache: layers below start_layer are copied, which is exact as
    // long as the override difference only touches layers >= start_layer.
    void forward(const std::vector<int>& tokens, const OverrideMap& ov, Cache<T>& c,
                 int start_layer = 0, const Cache<T>* base = nullptr) const;

    // Reverse pass from dF/dlogits at the final position. Tap gradients are
    // reported at `position`; parameter gradients accumulate into *pg.
    void backward(const std::vector<int>& tokens, const Cache<T>& c,
                  const std::vector<T>& dlogits, int position, TapGradients* taps,
                  Weights<T>* pg) const;

  private:
    ModelConfig cfg_;
    Weights<T> w_;
};

extern template class EngineT<float>;
extern template class EngineT<double>;

// Runtime-precision facade used by everything downstream of training.
class Model {
  public:
    Model(ModelConfig cfg, Weights<double> master, std::uint64_t hash,
          std::map<std::string, std::string> meta = {});

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t weights_hash() const { return hash_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }
    const Weights<double>& master_weights() const { return master_; }

    // Final-position logits (cast to double for callers).
    std::vector<double> forward(const std::vector<int>& tokens,
                                const OverrideMap& ov = {}) const;

    ActivationSnapshot capture(const std::vector<int>& tokens, const OverrideMap& ov,
                               int position = -1) const;

    // One forward plus one reverse pass. dlogits_fn maps the observed
    // final-position logits to dF/dlogits for the scalar target F.
    TapGradients grad_at_taps(
        const std::vector<int>& tokens, const OverrideMap& ov, int position,
        const std::function<std::vector<double>(const std::vector<double>&)>& dlogits_fn,
        std::vector<double>* logits_out = nullptr) const;

    int resolve_position(const std::vector<int>& tokens, int position) const;

  private:
    template <class T>
    const EngineT<T>& engine() const;

    ModelConfig cfg_;
    Weights<double> master_;
    std::uint64_t hash_ = 0;
    std::map<std::string, std::string> meta_;
    std::unique_ptr<EngineT<float>> ef_;
    std::unique_ptr<EngineT<double>> ed_;
};

// Scalar activation helpers shared with tests.
double gelu_exact(double x);
double gelu_grad(double x);

// Content hash of (config, weights, meta) via the canonical serialization;
// identical to the hash embedded in a saved weight file.
std::uint64_t weights_content_hash(const ModelConfig& cfg, const Weights<double>& w,
                                   const std::map<std::string, std::string>& meta);

}  // namespace neuronlab
