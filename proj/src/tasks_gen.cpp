#include "neuronlab/tasks.hpp"

#include <algorithm>

namespace neuronlab {

TaskFamily family_from_name(const std::string& name) {
    if (name == "marker_detect") return TaskFamily::marker_detect;
    if (name == "keyword_sentiment") return TaskFamily::keyword_sentiment;
    if (name == "copy_cue") return TaskFamily::copy_cue;
    if (name == "parity_reason") return TaskFamily::parity_reason;
    throw UsageError("unknown task family '" + name + "'");
}

std::string family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::marker_detect: return "marker_detect";
        case TaskFamily::keyword_sentiment: return "keyword_sentiment";
        case TaskFamily::copy_cue: return "copy_cue";
        case TaskFamily::parity_reason: return "parity_reason";
    }
    return "?";
}

namespace {

const char* kTemplateText =
    "[preamble]\n"
    "{role}\n"
    "{rule}\n"
    "{demonstration}\n"
    "[question]\n"
    "Question : {stem}\n"
    "A. {option_a}\n"
    "B. {option_b}\n"
    "C. {option_c}\n"
    "D. {option_d}\n"
    "Answer :{answer}\n";

// Exact per-block balance: within every four consecutive examples the
// correct answer occupies each slot once.
std::vector<int> balanced_slots(int n, Rng& rng) {
    std::vector<int> out;
    out.reserve(n);
    std::vector<int> block{0, 1, 2, 3};
    while (static_cast<int>(out.size()) < n) {
        rng.shuffle(block);
        for (int s : block) out.push_back(s);
    }
    out.resize(n);
    return out;
}

// Fills `options` so the value at `slot` is `correct` and the rest are a
// seeded shuffle of `others`.
void place_options(std::array<std::string, 4>& options, int slot,
                   const std::string& correct, std::vector<std::string> others,
                   Rng& rng) {
    rng.shuffle(others);
    int w = 0;
    for (int s = 0; s < 4; ++s) options[s] = (s == slot) ? correct : others[w++];
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

// ---- copy_cue -----------------------------------------------------------------
// The stem repeats a cued content after "signal" markers and a distractor
// after "noise" markers; the options are content words. Question classes mix
// cue/decoy repetition counts so that roughly half the set is solvable by
// counting (more cue than decoy evidence) and the rest favors the decoy.

struct CueClass {
    int n_cue;
    int n_decoy;
};

CueClass cue_class_for(int i) {
    // 20-cycle: half the questions are cue-dominant (solvable).
    static const CueClass cycle[] = {
        {2, 1}, {2, 1}, {2, 2}, {2, 1}, {1, 2}, {2, 1}, {2, 2}, {2, 1}, {0, 1}, {2, 1},
        {2, 1}, {2, 2}, {2, 1}, {1, 2}, {2, 1}, {0, 1}, {2, 1}, {2, 2}, {1, 2}, {0, 1},
    };
    return cycle[i % 20];
}

QAExample gen_copy_cue(const std::string& id, int index, int slot, Rng& rng) {
    static const std::vector<std::string> fillers{"the",  "note",  "report", "mentions",
                                                  "item", "today", "entry",  "value"};
    const auto& contents = copy_cue_contents();
    CueClass cls = cue_class_for(index);

    int ci = static_cast<int>(rng.next_below(contents.size()));
    int di = static_cast<int>(rng.next_below(contents.size() - 1));
    if (di >= ci) ++di;
    const std::string& cue = contents[ci];
    const std::string& decoy = contents[di];

    std::vector<std::vector<std::string>> segments;
    for (int k = 0; k < cls.n_cue; ++k) segments.push_back({cue_marker(), cue});
    for (int k = 0; k < cls.n_decoy; ++k) segments.push_back({decoy_marker(), decoy});
    rng.shuffle(segments);

    std::vector<std::string> words{fillers[rng.next_below(fillers.size())],
                                   fillers[rng.next_below(fillers.size())]};
    for (const auto& seg : segments) {
        words.insert(words.end(), seg.begin(), seg.end());
        words.push_back(fillers[rng.next_below(fillers.size())]);
    }

    QAExample ex;
    ex.id = id;
    ex.stem = join(words);
    std::vector<std::string> others;
    for (int k = 0; k < static_cast<int>(contents.size()); ++k)
        if (k != ci) others.push_back(contents[k]);
    if (cls.n_decoy > 0) {
        // Keep the decoy among the options and drop one neutral content.
        std::vector<std::string> pool;
        for (const auto& o : others)
            if (o != decoy) pool.push_back(o);
        rng.shuffle(pool);
        pool.resize(2);
        pool.push_back(decoy);
        others = pool;
    } else {
        rng.shuffle(others);
        others.resize(3);
    }
    place_options(ex.options, slot, cue, others, rng);
    ex.correct_index = slot;
    return ex;
}

// ---- marker_detect --------------------------------------------------------------

struct Lexicon {
    std::string name;
    std::vector<std::string> words;
};

const std::vector<Lexicon>& marker_lexicons() {
    static const std::vector<Lexicon> v{
        {"animal", {"fox", "wolf", "otter", "heron", "crab", "finch"}},
        {"color", {"red", "blue", "green", "violet", "gray", "teal"}},
        {"tool", {"hammer", "chisel", "wrench", "pliers", "saw", "drill"}},
        {"fruit", {"mango", "plum", "cherry", "fig", "pear", "quince"}},
    };
    return v;
}

QAExample gen_marker_detect(const std::string& id, int slot, Rng& rng,
                            bool with_demo) {
    const auto& lex = marker_lexicons();
    int cat = static_cast<int>(rng.next_below(lex.size()));
    const std::string& word = lex[cat].words[rng.next_below(lex[cat].words.size())];

    QAExample ex;
    ex.id = id;
    ex.role = "You sort marker words into their categories";
    ex.rule = "Pick the letter naming the right category";
    ex.stem = "the marker word here is " + word;
    std::vector<std::string> others;
    for (int k = 0; k < static_cast<int>(lex.size()); ++k)
        if (k != cat) others.push_back(lex[k].name);
    place_options(ex.options, slot, lex[cat].name, others, rng);
    ex.correct_index = slot;

    if (with_demo) {
        int dcat = static_cast<int>(rng.next_below(lex.size()));
        const std::string& dword = lex[dcat].words[rng.next_below(lex[dcat].words.size())];
        Demonstration demo;
        demo.stem = "the marker word here is " + dword;
        int dslot = static_cast<int>(rng.next_below(4));
        std::vector<std::string> dothers;
        for (int k = 0; k < static_cast<int>(lex.size()); ++k)
            if (k != dcat) dothers.push_back(lex[k].name);
        place_options(demo.options, dslot, lex[dcat].name, dothers, rng);
        demo.answer_index = dslot;
        ex.demo = demo;
    }
    return ex;
}

// ---- keyword_sentiment ------------------------------------------------------------

const std::vector<Lexicon>& sentiment_lexicons() {
    static const std::vector<Lexicon> v{
        {"positive", {"delighted", "cheerful", "superb", "winning", "pleasant"}},
        {"negative", {"dreadful", "gloomy", "failing", "bitter", "broken"}},
        {"neutral", {"routine", "standard", "ordinary", "plain", "usual"}},
        {"unsure", {"maybe", "unclear", "ambiguous", "vague", "tentative"}},
    };
    return v;
}

QAExample gen_keyword_sentiment(const std::string& id, int slot, Rng& rng) {
    const auto& lex = sentiment_lexicons();
    int cat = static_cast<int>(rng.next_below(lex.size()));
    const auto& words = lex[cat].words;
    int w1 = static_cast<int>(rng.next_below(words.size()));
    int w2 = static_cast<int>(rng.next_below(words.size() - 1));
    if (w2 >= w1) ++w2;

    QAExample ex;
    ex.id = id;
    ex.role = "You judge the tone of a short review";
    ex.rule = "Pick the letter naming the tone";
    ex.stem = "the review calls the product " + words[w1] + " and " + words[w2];
    std::vector<std::string> others;
    for (int k = 0; k < static_cast<int>(lex.size()); ++k)
        if (k != cat) others.push_back(lex[k].name);
    place_options(ex.options, slot, lex[cat].name, others, rng);
    ex.correct_index = slot;
    return ex;
}

// ---- parity_reason ---------------------------------------------------------------

QAExample gen_parity_reason(const std::string& id, int slot, Rng& rng) {
    static const std::vector<std::string> numbers{
        "zero", "one", "two",  "three", "four",  "five",   "six",
        "seven", "eight", "nine", "ten",  "eleven", "twelve"};
    int a = static_cast<int>(rng.next_below(7));
    int b = static_cast<int>(rng.next_below(7));
    int sum = a + b;

    QAExample ex;
    ex.id = id;
    ex.role = "You add two small numbers";
    ex.rule = "Pick the letter of the sum";
    ex.stem = "add the numbers " + numbers[a] + " and " + numbers[b];
    std::vector<std::string> others;
    while (others.size() < 3) {
        int w = static_cast<int>(rng.next_below(numbers.size()));
        if (w == sum) continue;
        if (std::find(others.begin(), others.end(), numbers[w]) != others.end()) continue;
        others.push_back(numbers[w]);
    }
    place_options(ex.options, slot, numbers[sum], others, rng);
    ex.correct_index = slot;
    return ex;
}

}  // namespace

const std::vector<std::string>& copy_cue_contents() {
    static const std::vector<std::string> v{"crimson", "azure", "amber", "jade", "ivory"};
    return v;
}

const std::string& cue_marker() {
    static const std::string s = "signal";
    return s;
}

const std::string& decoy_marker() {
    static const std::string s = "noise";
    return s;
}

std::vector<std::string> TaskData::corpus() const {
    std::vector<std::string> out;
    PromptTemplate tmpl = PromptTemplate::parse(template_text);
    // Literal template words; placeholders of the form {name} are stripped.
    std::string skeleton = tmpl.preamble + "\n" + tmpl.question;
    std::string cleaned;
    bool in_ph = false;
    for (char ch : skeleton) {
        if (ch == '{') in_ph = true;
        else if (ch == '}') in_ph = false;
        else if (!in_ph) cleaned.push_back(ch);
    }
    out.push_back(cleaned);
    auto add_example = [&](const QAExample& ex) {
        out.push_back(ex.role);
        out.push_back(ex.rule);
        out.push_back(ex.stem);
        for (const auto& o : ex.options) out.push_back(o);
        if (ex.demo) {
            out.push_back(ex.demo->stem);
            for (const auto& o : ex.demo->options) out.push_back(o);
        }
    };
    for (const auto& ex : train) add_example(ex);
    for (const auto& ex : pool) add_example(ex);
    return out;
}

TaskData generate_task(const TaskSpec& spec) {
    if (spec.n_train < 4 || spec.n_pool < 4)
        throw UsageError("task needs at least four train and pool examples");
    TaskData data;
    data.spec = spec;
    if (data.spec.name.empty()) data.spec.name = family_name(spec.family);
    data.template_text = kTemplateText;

    Rng rng(spec.seed);
    const int n = spec.n_train + spec.n_pool;
    auto slots = balanced_slots(n, rng);
    for (int i = 0; i < n; ++i) {
        std::string id = data.spec.name + "-" + std::to_string(i);
        QAExample ex;
        switch (spec.family) {
            case TaskFamily::copy_cue:
                ex = gen_copy_cue(id, i, slots[i], rng);
                break;
            case TaskFamily::marker_detect:
                ex = gen_marker_detect(id, slots[i], rng, true);
                break;
            case TaskFamily::keyword_sentiment:
                ex = gen_keyword_sentiment(id, slots[i], rng);
                break;
            case TaskFamily::parity_reason:
                ex = gen_parity_reason(id, slots[i], rng);
                break;
        }
        ex.validate();
        (i < spec.n_train ? data.train : data.pool).push_back(ex);
    }
    for (const auto& ex : data.train)
        data.train_proxies.push_back(
            generate_proxies(ex, fnv1a64(ex.id.data(), ex.id.size(), spec.seed)));
    for (const auto& ex : data.pool)
        data.pool_proxies.push_back(
            generate_proxies(ex, fnv1a64(ex.id.data(), ex.id.size(), spec.seed)));
    return data;
}

}  // namespace neuronlab
