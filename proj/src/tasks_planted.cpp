#include <algorithm>
#include <cmath>
#include <sstream>

#include "neuronlab/evaluation.hpp"
#include "neuronlab/tasks.hpp"

// The constructed cue-copy model. Hard attention moves information along a
// fixed route and the FFN layers implement the logic:
//
//   layer 0 attention   shift heads: each position learns the flags of the
//                       tokens one and two steps back (marker/dot/answer
//                       flags, option letters).
//   layer 1 attention   fetch heads: positions right after an option dot
//                       pull the content distribution of cue-marked and
//                       decoy-marked stem positions. A BOS sink competes
//                       with the markers, so the fetched mass grows with
//                       the repetition count: n/(n+1).
//   layer 1 FFN         match gates: redundant copies decide "this option's
//                       content equals the fetched content" per option
//                       letter, content and path (cue/decoy).
//   layer 2 attention   collect head: the final position averages the gate
//                       outputs of the four option positions.
//   layer 2 FFN         evidence banks: sixteen designated neurons (two
//                       copies x four letters x cue/decoy) read the
//                       collected per-letter match strength and write into
//                       the letter-logit channels: a uniform share plus a
//                       letter-specific bonus. They also fire a constant on
//                       their own option position, which the layer 3 reader
//                       folds back into the final logits; zeroing a bank
//                       neuron therefore moves its letter on every question,
//                       not only on questions it matched.
//   layer 3 attention   reader head: final position re-collects the
//                       letter-logit channels written at option positions.
//   layer 3 FFN         hum neurons: constant high activation, zero output;
//                       they dominate any activation-magnitude ranking
//                       without carrying function.
//
// Attention scores are +-110 versus 0, so in f32 the softmax leak
// underflows to exact zero and the fetched masses are exact rationals. The
// margins below were sized so that zeroing or doubling any planted neuron
// moves its letter logit by at least delta=2 on every applicable question,
// while the strongest structural neuron (a single match-gate copy) stays
// near half of delta.

namespace neuronlab {

namespace {

// residual channel map
constexpr int kChOne = 64;
constexpr int kChBos = 65;
constexpr int kChCueMarker = 66;
constexpr int kChDecoyMarker = 67;
constexpr int kChDot = 68;
constexpr int kChAnswerWord = 69;
constexpr int kChLetter = 70;       // +X, option letter at this position
constexpr int kChContent = 74;      // +c, content word identity
constexpr int kChPrevCue = 79;
constexpr int kChPrevDecoy = 80;
constexpr int kChPrevDot = 81;
constexpr int kChPrevAnswer = 82;
constexpr int kChLetterAt2 = 83;    // +X, letter two positions back
constexpr int kChCueFetch = 87;     // +c
constexpr int kChDecoyFetch = 92;   // +c
constexpr int kChMatch = 97;        // +X
constexpr int kChDecoyMatch = 101;  // +X
constexpr int kChAnsMatch = 105;    // +X
constexpr int kChAnsDecoyMatch = 109;  // +X
constexpr int kChLetterLogit = 113;    // +X

constexpr int kNumContents = 5;

// attention scale: engine divides q.k by sqrt(head_dim) = 8
constexpr double kQ = 8.0;
constexpr double kK = 110.0;   // selected score; e^-110 underflows in f32
constexpr double kSinkK = 200.0;
constexpr double kQOne = 0.5;
constexpr double kQFinalSuppress = -2.5;

// match gates
constexpr double kGateFetch = 9.0;
constexpr double kGateMask = 30.0;
constexpr int kGateCopies = 25;

// evidence banks
constexpr double kBankRead = 32.0;
constexpr double kBankOptRead = 3.0;
constexpr double kGoodUniform = 1.0;
constexpr double kGoodLetter = 1.575;
constexpr double kBadUniform = 1.0;
constexpr double kBadLetter = 1.8;
constexpr int kBankCopies = 2;
constexpr int kBankLayer = 2;

constexpr double kHumBias = 15.0;
constexpr int kHumCount = 200;
constexpr int kHumLayer = 3;

constexpr double kDelta = 2.0;

struct TokenWiring {
    int signal = -1, noise = -1, dot = -1, answer = -1;
    std::array<int, 4> letters{};
    std::array<int, kNumContents> contents{};
};

TokenWiring resolve_tokens(const Tokenizer& tok) {
    TokenWiring t;
    auto need = [&](const std::string& w) {
        int id = tok.id_of(w);
        if (id == Tokenizer::kUnkId)
            throw StaleArtifactError("constructed model needs '" + w +
                                     "' in the vocabulary");
        return id;
    };
    t.signal = need(cue_marker());
    t.noise = need(decoy_marker());
    t.dot = need(".");
    t.answer = need("Answer");
    t.letters = tok.letter_ids();
    const auto& names = copy_cue_contents();
    if (static_cast<int>(names.size()) != kNumContents)
        throw UsageError("content list size changed; rewire the constructed model");
    for (int c = 0; c < kNumContents; ++c) t.contents[c] = need(names[c]);
    return t;
}

void wire_weights(Weights<double>& w, const ModelConfig& cfg, const TokenWiring& t) {
    const int d = cfg.d_model;
    const int f = cfg.d_ffn;
    const int v = cfg.vocab_size;
    const int dh = cfg.head_dim();

    // embeddings: position one-hot block plus token flags
    for (int p = 0; p < cfg.max_seq; ++p) w.pos_emb[p * d + p] = 1.0;
    for (int id = 0; id < v; ++id) w.tok_emb[id * d + kChOne] = 1.0;
    w.tok_emb[Tokenizer::kBosId * d + kChBos] = 1.0;
    w.tok_emb[t.signal * d + kChCueMarker] = 1.0;
    w.tok_emb[t.noise * d + kChDecoyMarker] = 1.0;
    w.tok_emb[t.dot * d + kChDot] = 1.0;
    w.tok_emb[t.answer * d + kChAnswerWord] = 1.0;
    for (int X = 0; X < 4; ++X) w.tok_emb[t.letters[X] * d + kChLetter + X] = 1.0;
    for (int c = 0; c < kNumContents; ++c)
        w.tok_emb[t.contents[c] * d + kChContent + c] = 1.0;

    // layer 0: shift heads. head 0 reads the previous token, head 1 the one
    // before that; the position one-hot block carries the addressing.
    {
        auto& L = w.layers[0];
        for (int p = 1; p < cfg.max_seq; ++p) L.wq[p * d + (p - 1)] = kQ;
        for (int p = 0; p < cfg.max_seq; ++p) L.wk[p * d + p] = kK;
        L.wv[kChCueMarker * d + 0] = 1.0;
        L.wv[kChDecoyMarker * d + 1] = 1.0;
        L.wv[kChDot * d + 2] = 1.0;
        L.wv[kChAnswerWord * d + 3] = 1.0;
        L.wo[0 * d + kChPrevCue] = 1.0;
        L.wo[1 * d + kChPrevDecoy] = 1.0;
        L.wo[2 * d + kChPrevDot] = 1.0;
        L.wo[3 * d + kChPrevAnswer] = 1.0;
        for (int p = 2; p < cfg.max_seq; ++p) L.wq[p * d + dh + (p - 2)] = kQ;
        for (int p = 0; p < cfg.max_seq; ++p) L.wk[p * d + dh + p] = kK;
        for (int X = 0; X < 4; ++X) {
            L.wv[(kChLetter + X) * d + dh + X] = 1.0;
            L.wo[(dh + X) * d + kChLetterAt2 + X] = 1.0;
        }
    }

    // layer 1: fetch heads. Option-content positions (the ones right after a
    // dot) query for cue-marked (head 0) and decoy-marked (head 1) stem
    // positions; BOS acts as an equal-score sink so n repetitions yield mass
    // n/(n+1).
    {
        auto& L = w.layers[1];
        L.wq[kChPrevDot * d + 0] = kQ;
        L.wk[kChPrevCue * d + 0] = kK;
        L.wk[kChBos * d + 0] = kK;
        L.wq[kChPrevDot * d + dh + 0] = kQ;
        L.wk[kChPrevDecoy * d + dh + 0] = kK;
        L.wk[kChBos * d + dh + 0] = kK;
        for (int c = 0; c < kNumContents; ++c) {
            L.wv[(kChContent + c) * d + 1 + c] = 1.0;
            L.wo[(1 + c) * d + kChCueFetch + c] = 1.0;
            L.wv[(kChContent + c) * d + dh + 1 + c] = 1.0;
            L.wo[(dh + 1 + c) * d + kChDecoyFetch + c] = 1.0;
        }

        // match gates: gelu(fetch_strength * kGateFetch) when this option's
        // content equals both the gate's content and the fetched one, else a
        // pre-activation of at most -kGateMask. Redundant copies keep any
        // single copy's share of the final logits far below the planted
        // margin.
        const double out = 1.0 / (kGateFetch * kGateCopies);
        auto gate = [&](int slot, int fetch_ch, int match_ch, int X, int c) {
            L.w1[(fetch_ch + c) * f + slot] = kGateFetch;
            L.w1[(kChContent + c) * f + slot] = kGateMask;
            L.w1[(kChLetterAt2 + X) * f + slot] = kGateMask;
            L.b1[slot] = -2.0 * kGateMask;
            L.w2[slot * d + match_ch + X] = out;
        };
        int slot = 0;
        for (int X = 0; X < 4; ++X)
            for (int c = 0; c < kNumContents; ++c)
                for (int r = 0; r < kGateCopies; ++r)
                    gate(slot++, kChCueFetch, kChMatch, X, c);
        for (int X = 0; X < 4; ++X)
            for (int c = 0; c < kNumContents; ++c)
                for (int r = 0; r < kGateCopies; ++r)
                    gate(slot++, kChDecoyFetch, kChDecoyMatch, X, c);
    }

    // collect/reader query-key block, shared by layers 2 and 3: the final
    // position (the only one with the answer flag) attends uniformly to the
    // four option-content positions; every other position is parked on BOS.
    auto collector_qk = [&](typename Weights<double>::Layer& L) {
        L.wq[kChPrevAnswer * d + 0] = kQ;
        L.wq[kChOne * d + 1] = kQOne;
        L.wq[kChPrevAnswer * d + 1] = kQFinalSuppress;
        for (int X = 0; X < 4; ++X) L.wk[(kChLetterAt2 + X) * d + 0] = kK;
        L.wk[kChBos * d + 1] = kSinkK;
    };

    // layer 2: collect head plus the evidence banks.
    {
        auto& L = w.layers[2];
        collector_qk(L);
        for (int X = 0; X < 4; ++X) {
            L.wv[(kChMatch + X) * d + 1 + X] = 1.0;
            L.wv[(kChDecoyMatch + X) * d + 5 + X] = 1.0;
            L.wo[(1 + X) * d + kChAnsMatch + X] = 1.0;
            L.wo[(5 + X) * d + kChAnsDecoyMatch + X] = 1.0;
        }
        for (int copy = 0; copy < kBankCopies; ++copy) {
            for (int Y = 0; Y < 4; ++Y) {
                int g = copy * 4 + Y;       // good: letter-Y cue evidence
                int b = 8 + copy * 4 + Y;   // bad: letter-Y decoy evidence
                L.w1[(kChAnsMatch + Y) * f + g] = kBankRead;
                L.w1[(kChLetterAt2 + Y) * f + g] = kBankOptRead;
                L.w1[(kChAnsDecoyMatch + Y) * f + b] = kBankRead;
                L.w1[(kChLetterAt2 + Y) * f + b] = kBankOptRead;
                for (int X = 0; X < 4; ++X) {
                    L.w2[g * d + kChLetterLogit + X] =
                        kGoodUniform + (X == Y ? kGoodLetter : 0.0);
                    L.w2[b * d + kChLetterLogit + X] =
                        kBadUniform + (X == Y ? kBadLetter : 0.0);
                }
            }
        }
    }

    // layer 3: reader head and the hum bank.
    {
        auto& L = w.layers[3];
        collector_qk(L);
        for (int X = 0; X < 4; ++X) {
            L.wv[(kChLetterLogit + X) * d + 1 + X] = 1.0;
            L.wo[(1 + X) * d + kChLetterLogit + X] = 4.0;  // undo the 1/4 mass
        }
        for (int i = 0; i < kHumCount; ++i) L.b1[i] = kHumBias;
    }

    for (int X = 0; X < 4; ++X) w.unemb[(kChLetterLogit + X) * v + t.letters[X]] = 1.0;
}

// ---- verification ---------------------------------------------------------------

struct VerifyQuestion {
    QAExample ex;
    bool solvable = false;
    int decoy_slot = -1;
    int expected_slot = -1;
};

std::string pair_text(const std::string& marker, const std::string& word, int n) {
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (!out.empty()) out += " the ";
        out += marker + " " + word;
    }
    return out;
}

// A balanced set: four solvable questions with the correct answer at each
// letter, four decoy-dominant ones with the decoy at each letter, plus one
// each of the weaker unsolvable classes.
std::vector<VerifyQuestion> verification_questions() {
    const auto& contents = copy_cue_contents();
    std::vector<VerifyQuestion> out;
    auto options_with = [&](int cue_i, int cue_slot, int decoy_i, int decoy_slot) {
        std::array<std::string, 4> opts;
        std::vector<int> rest;
        for (int c = 0; c < kNumContents; ++c)
            if (c != cue_i && c != decoy_i) rest.push_back(c);
        int w = 0;
        for (int s = 0; s < 4; ++s) {
            if (s == cue_slot) opts[s] = contents[cue_i];
            else if (s == decoy_slot) opts[s] = contents[decoy_i];
            else opts[s] = contents[rest[w++]];
        }
        return opts;
    };
    auto add = [&](const std::string& id, int n_cue, int n_decoy, int cue_slot,
                   int decoy_slot, bool solvable) {
        int cue_i = cue_slot;  // varies the content along with the slot
        int decoy_i = (cue_i + 1) % kNumContents;
        VerifyQuestion q;
        q.ex.id = id;
        std::string stem = "the note ";
        if (n_cue > 0) stem += pair_text(cue_marker(), contents[cue_i], n_cue) + " ";
        stem += pair_text(decoy_marker(), contents[decoy_i], n_decoy) + " item";
        q.ex.stem = stem;
        q.ex.options = options_with(cue_i, cue_slot, decoy_i, decoy_slot);
        q.ex.correct_index = cue_slot;
        q.solvable = solvable;
        q.decoy_slot = decoy_slot;
        q.expected_slot = solvable ? cue_slot : decoy_slot;
        out.push_back(q);
    };
    for (int s = 0; s < 4; ++s) add("verify-solv-" + std::to_string(s), 2, 1, s, (s + 1) % 4, true);
    for (int s = 0; s < 4; ++s) add("verify-decoy-" + std::to_string(s), 2, 2, (s + 1) % 4, s, false);
    add("verify-weak-0", 1, 2, 0, 1, false);
    add("verify-none-0", 0, 1, 2, 3, false);
    return out;
}

struct QuestionState {
    VerifyQuestion q;
    std::vector<int> tokens;
    Cache<float> base;
    std::array<double, 4> base_letters{};
    int base_answer = 0;
    // fired[l][i]: any nonzero tap of neuron (l, i) at any position
    std::vector<std::vector<char>> fired;
};

std::array<double, 4> letters_from_logits(const std::vector<float>& logits,
                                          const std::array<int, 4>& ids) {
    std::array<double, 4> out{};
    for (int X = 0; X < 4; ++X) out[X] = static_cast<double>(logits[ids[X]]);
    return out;
}

int argmax_slot(const std::array<double, 4>& v) {
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void verify_circuit(const ModelConfig& cfg, const Weights<double>& wd,
                    const TaskData& task, const Tokenizer& tok, PlantedInfo* info) {
    EngineT<float> eng(cfg, cast_weights(wd, cfg));
    PromptTemplate tmpl = PromptTemplate::parse(task.template_text);
    const auto letter_ids = tok.letter_ids();

    std::vector<QuestionState> qs;
    for (const auto& vq : verification_questions()) {
        QuestionState st;
        st.q = vq;
        st.tokens = compose_prompt(vq.ex, tmpl, tok).tokens;
        eng.forward(st.tokens, {}, st.base);
        st.base_letters = letters_from_logits(st.base.logits, letter_ids);
        st.base_answer = argmax_slot(st.base_letters);
        if (st.base_answer != vq.expected_slot)
            throw NumericError("constructed model answers slot " +
                               std::to_string(st.base_answer) + " on " + vq.ex.id +
                               ", expected " + std::to_string(vq.expected_slot));
        st.fired.assign(cfg.n_layers, std::vector<char>(cfg.d_ffn, 0));
        const int len = static_cast<int>(st.tokens.size());
        for (int l = 0; l < cfg.n_layers; ++l) {
            const auto& taps = st.base.layers[l].tap;
            for (int p = 0; p < len; ++p)
                for (int i = 0; i < cfg.d_ffn; ++i)
                    if (taps[p * cfg.d_ffn + i] != 0.0f) st.fired[l][i] = 1;
        }
        qs.push_back(std::move(st));
    }
    info->n_verification_questions = static_cast<int>(qs.size());

    std::vector<std::vector<char>> is_good(cfg.n_layers,
                                           std::vector<char>(cfg.d_ffn, 0));
    std::vector<std::vector<char>> is_bad = is_good;
    for (const auto& id : info->good) is_good[id.layer][id.index] = 1;
    for (const auto& id : info->bad) is_bad[id.layer][id.index] = 1;

    // Output rows that are all zero cannot move the logits no matter what
    // the tap does.
    std::vector<std::vector<char>> has_output(cfg.n_layers,
                                              std::vector<char>(cfg.d_ffn, 0));
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int i = 0; i < cfg.d_ffn; ++i)
            for (int o = 0; o < cfg.d_model; ++o)
                if (wd.layers[l].w2[i * cfg.d_model + o] != 0.0) {
                    has_output[l][i] = 1;
                    break;
                }

    double planted_min = 1e300, other_max = 0.0;
    int flips_planted = 0, flips_others = 0;
    std::vector<std::vector<int>> flip_count(cfg.n_layers,
                                             std::vector<int>(cfg.d_ffn, 0));
    Cache<float> scratch;
    std::ostringstream violations;

    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int i = 0; i < cfg.d_ffn; ++i) {
            const bool planted_good = is_good[l][i], planted_bad = is_bad[l][i];
            const bool planted = planted_good || planted_bad;
            for (auto mode : {OverrideEntry::Mode::zero, OverrideEntry::Mode::dbl}) {
                const double sign = mode == OverrideEntry::Mode::zero ? -1.0 : 1.0;
                for (auto& st : qs) {
                    double relevant = 0.0;
                    double max_abs = 0.0;
                    bool flipped = false;
                    if (has_output[l][i] && st.fired[l][i]) {
                        OverrideMap ov;
                        ov.entries.push_back({NeuronId{l, i}, mode, 0.0});
                        eng.forward(st.tokens, ov, scratch, l, &st.base);
                        auto now = letters_from_logits(scratch.logits, letter_ids);
                        for (int X = 0; X < 4; ++X)
                            max_abs = std::max(max_abs,
                                               std::abs(now[X] - st.base_letters[X]));
                        flipped = argmax_slot(now) != st.base_answer;
                        int target = planted_good ? st.q.ex.correct_index : st.q.decoy_slot;
                        if (planted && target >= 0)
                            relevant = now[target] - st.base_letters[target];
                    }
                    if (flipped) {
                        ++flip_count[l][i];
                        (planted ? flips_planted : flips_others) += 1;
                    }
                    if (planted) {
                        // good neurons must move the correct letter on every
                        // solvable question, bad ones the decoy letter on
                        // every question that has a decoy.
                        const bool applies =
                            planted_good ? st.q.solvable : st.q.decoy_slot >= 0;
                        if (applies) {
                            if (sign * relevant < kDelta)
                                violations << "planted (" << l << "," << i << ") moved "
                                           << relevant << " on " << st.q.ex.id << " mode "
                                           << (sign < 0 ? "zero" : "double") << "\n";
                            planted_min = std::min(planted_min, std::abs(relevant));
                        }
                    } else {
                        other_max = std::max(other_max, max_abs);
                        if (max_abs >= kDelta)
                            violations << "neuron (" << l << "," << i << ") moved "
                                       << max_abs << " on " << st.q.ex.id << "\n";
                        if (flipped)
                            violations << "neuron (" << l << "," << i << ") flipped "
                                       << st.q.ex.id << "\n";
                    }
                }
            }
        }
    }

    for (const auto& id : info->good)
        if (flip_count[id.layer][id.index] == 0)
            violations << "planted good (" << id.layer << "," << id.index
                       << ") never flips an answer\n";
    for (const auto& id : info->bad)
        if (flip_count[id.layer][id.index] == 0)
            violations << "planted bad (" << id.layer << "," << id.index
                       << ") never flips an answer\n";

    if (!violations.str().empty())
        throw NumericError("constructed-model guarantees violated:\n" + violations.str());

    info->delta = kDelta;
    info->planted_min_effect = planted_min;
    info->other_max_effect = other_max;
    info->flips_by_planted = flips_planted;
    info->flips_by_others = flips_others;
}

}  // namespace

PlantedModel build_planted(const TaskData& task, const Tokenizer& tok, bool verify) {
    if (task.spec.family != TaskFamily::copy_cue)
        throw UsageError("the constructed model only exists for the cue-copy task");
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.d_model = 128;
    cfg.n_heads = 2;
    cfg.d_ffn = 1024;
    cfg.vocab_size = tok.vocab_size();
    cfg.max_seq = 64;
    cfg.norm = NormKind::none;
    cfg.precision = Precision::f32;
    cfg.validate();

    PlantedModel pm;
    pm.cfg = cfg;
    pm.weights = Weights<double>::zeros(cfg);
    wire_weights(pm.weights, cfg, resolve_tokens(tok));

    for (int copy = 0; copy < kBankCopies; ++copy)
        for (int Y = 0; Y < 4; ++Y)
            pm.info.good.push_back(NeuronId{kBankLayer, copy * 4 + Y});
    for (int copy = 0; copy < kBankCopies; ++copy)
        for (int Y = 0; Y < 4; ++Y)
            pm.info.bad.push_back(NeuronId{kBankLayer, 8 + copy * 4 + Y});
    std::sort(pm.info.good.begin(), pm.info.good.end());
    std::sort(pm.info.bad.begin(), pm.info.bad.end());
    pm.info.delta = kDelta;

    if (verify) verify_circuit(cfg, pm.weights, task, tok, &pm.info);
    (void)kHumLayer;
    return pm;
}

}  // namespace neuronlab
