#include "neuronlab/aqua.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace neuronlab {

using nlohmann::json;

void QAExample::validate() const {
    if (id.empty()) throw UsageError("example has an empty id");
    if (stem.empty()) throw UsageError("example " + id + " has an empty stem");
    if (correct_index < 0 || correct_index > 3)
        throw UsageError("example " + id + " has correct_index out of range");
    for (int i = 0; i < 4; ++i) {
        if (options[i].empty())
            throw UsageError("example " + id + " has an empty option");
        for (int j = i + 1; j < 4; ++j)
            if (options[i] == options[j])
                throw UsageError("example " + id + " has duplicate option text '" +
                                 options[i] + "'");
    }
    if (demo) {
        if (demo->answer_index < 0 || demo->answer_index > 3)
            throw UsageError("example " + id + " has a demo answer out of range");
        for (const auto& o : demo->options)
            if (o.empty()) throw UsageError("example " + id + " has an empty demo option");
    }
}

ProxySet generate_proxies(const QAExample& parent, std::uint64_t seed) {
    parent.validate();
    // All 24 arrangements in lexicographic order, then three distinct picks.
    std::vector<std::array<int, 4>> all;
    std::array<int, 4> p{0, 1, 2, 3};
    do {
        all.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));

    Rng rng(seed);
    std::vector<int> idx(all.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < 3; ++i) {
        int j = i + static_cast<int>(rng.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }

    ProxySet out;
    out.parent_id = parent.id;
    for (int k = 0; k < 3; ++k) {
        const auto& perm = all[idx[k]];
        out.perms[k] = perm;
        QAExample q = parent;
        q.id = parent.id + "#p" + std::to_string(k);
        for (int slot = 0; slot < 4; ++slot) q.options[slot] = parent.options[perm[slot]];
        int remapped = -1;
        for (int slot = 0; slot < 4; ++slot)
            if (perm[slot] == parent.correct_index) remapped = slot;
        q.correct_index = remapped;
        q.validate();
        out.proxies[k] = q;
    }
    return out;
}

// ---- templates ---------------------------------------------------------------

PromptTemplate PromptTemplate::parse(const std::string& text) {
    PromptTemplate t;
    std::string* section = nullptr;
    std::istringstream in(text);
    std::string line;
    bool saw_question = false;
    while (std::getline(in, line)) {
        if (line == "[preamble]") {
            section = &t.preamble;
            continue;
        }
        if (line == "[question]") {
            section = &t.question;
            saw_question = true;
            continue;
        }
        if (!section) {
            if (line.empty()) continue;
            throw UsageError("template text before the first section header");
        }
        section->append(line);
        section->push_back('\n');
    }
    if (!saw_question) throw UsageError("template has no [question] section");
    for (const char* ph : {"{stem}", "{option_a}", "{option_b}", "{option_c}",
                           "{option_d}", "{answer}"})
        if (t.question.find(ph) == std::string::npos)
            throw UsageError(std::string("template question block lacks ") + ph);
    return t;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open template " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string PromptTemplate::text() const {
    return "[preamble]\n" + preamble + "[question]\n" + question;
}

namespace {

bool replace_all_ph(std::string& s, const std::string& ph, const std::string& val) {
    bool any = false;
    size_t pos = 0;
    while ((pos = s.find(ph, pos)) != std::string::npos) {
        s.replace(pos, ph.size(), val);
        pos += val.size();
        any = true;
    }
    return any;
}

bool only_whitespace(const std::string& s) {
    return s.find_first_not_of(" \t\r") == std::string::npos;
}

// Expands placeholders line by line; a line that had placeholders and came
// out empty is dropped so optional sections vanish without leaving blanks.
std::string render(const std::string& block,
                   const std::vector<std::pair<std::string, std::string>>& subs) {
    std::istringstream in(block);
    std::string line, out;
    while (std::getline(in, line)) {
        bool had_ph = false;
        for (const auto& [ph, val] : subs) had_ph |= replace_all_ph(line, ph, val);
        if (had_ph && only_whitespace(line)) continue;
        out.append(line);
        out.push_back('\n');
    }
    if (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
}

std::string render_question(const PromptTemplate& tmpl, const std::string& stem,
                            const std::array<std::string, 4>& options,
                            const std::string& answer) {
    return render(tmpl.question, {{"{stem}", stem},
                                  {"{option_a}", options[0]},
                                  {"{option_b}", options[1]},
                                  {"{option_c}", options[2]},
                                  {"{option_d}", options[3]},
                                  {"{answer}", answer}});
}

void check_option_text(const std::string& id, const std::string& text) {
    if (text.find_first_of(".,:;?!()\n{}") != std::string::npos)
        throw UsageError("example " + id + " option '" + text +
                         "' contains punctuation that would break the label structure");
}

}  // namespace

Prompt compose_prompt(const QAExample& ex, const PromptTemplate& tmpl,
                      const Tokenizer& tok) {
    ex.validate();
    for (const auto& o : ex.options) check_option_text(ex.id, o);

    std::string demo_text;
    if (ex.demo) {
        for (const auto& o : ex.demo->options) check_option_text(ex.id, o);
        static const char* kLetters[4] = {"A", "B", "C", "D"};
        demo_text = render_question(tmpl, ex.demo->stem, ex.demo->options,
                                    std::string(" ") + kLetters[ex.demo->answer_index]);
    }
    std::string preamble = render(tmpl.preamble, {{"{role}", ex.role},
                                                  {"{rule}", ex.rule},
                                                  {"{demonstration}", demo_text}});
    std::string question = render_question(tmpl, ex.stem, ex.options, "");

    Prompt p;
    p.text = preamble.empty() ? question : preamble + "\n" + question;
    p.tokens = tok.encode(p.text);
    if (p.tokens.size() < 4) throw UsageError("prompt for " + ex.id + " is too short");
    p.answer_pos = static_cast<int>(p.tokens.size()) - 1;

    for (size_t i = 0; i < p.tokens.size(); ++i)
        if (p.tokens[i] == Tokenizer::kUnkId)
            throw StaleArtifactError("prompt for " + ex.id +
                                     " contains words outside the vocabulary");
    if (tok.piece_of(p.tokens.back()) != ":" ||
        tok.piece_of(p.tokens[p.tokens.size() - 2]) != "Answer")
        throw UsageError("prompt for " + ex.id + " does not end with the answer cue");
    return p;
}

// ---- jsonl -------------------------------------------------------------------

namespace {

json example_to_json(const QAExample& ex) {
    json j{{"schema_version", 1},
           {"id", ex.id},
           {"role", ex.role},
           {"rule", ex.rule},
           {"stem", ex.stem},
           {"options", ex.options},
           {"correct_index", ex.correct_index}};
    if (ex.demo) {
        j["demonstration"] = {{"stem", ex.demo->stem},
                              {"options", ex.demo->options},
                              {"answer_index", ex.demo->answer_index}};
    } else {
        j["demonstration"] = nullptr;
    }
    return j;
}

QAExample example_from_json(const json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
        throw StaleArtifactError("example record has an unsupported schema_version");
    QAExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.role = j.at("role").get<std::string>();
    ex.rule = j.at("rule").get<std::string>();
    ex.stem = j.at("stem").get<std::string>();
    auto opts = j.at("options");
    if (!opts.is_array() || opts.size() != 4)
        throw StaleArtifactError("example " + ex.id + " does not carry four options");
    for (int i = 0; i < 4; ++i) ex.options[i] = opts[i].get<std::string>();
    ex.correct_index = j.at("correct_index").get<int>();
    if (j.contains("demonstration") && !j.at("demonstration").is_null()) {
        const auto& d = j.at("demonstration");
        Demonstration demo;
        demo.stem = d.at("stem").get<std::string>();
        auto dopts = d.at("options");
        for (int i = 0; i < 4; ++i) demo.options[i] = dopts[i].get<std::string>();
        demo.answer_index = d.at("answer_index").get<int>();
        ex.demo = demo;
    }
    ex.validate();
    return ex;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open " + path);
    std::vector<json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw StaleArtifactError(path + ":" + std::to_string(lineno) +
                                     " is not valid json");
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path);
    for (const auto& j : rows) out << j.dump() << "\n";
}

}  // namespace

void write_examples_jsonl(const std::string& path, const std::vector<QAExample>& v) {
    std::vector<json> rows;
    rows.reserve(v.size());
    for (const auto& ex : v) rows.push_back(example_to_json(ex));
    write_jsonl(path, rows);
}

std::vector<QAExample> read_examples_jsonl(const std::string& path) {
    std::vector<QAExample> out;
    for (const auto& j : read_jsonl(path)) out.push_back(example_from_json(j));
    return out;
}

void write_proxies_jsonl(const std::string& path, const std::vector<ProxySet>& v) {
    std::vector<json> rows;
    rows.reserve(v.size());
    for (const auto& ps : v) {
        json j{{"schema_version", 1}, {"parent_id", ps.parent_id}, {"perms", ps.perms}};
        json arr = json::array();
        for (const auto& q : ps.proxies) arr.push_back(example_to_json(q));
        j["proxies"] = arr;
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

std::vector<ProxySet> read_proxies_jsonl(const std::string& path) {
    std::vector<ProxySet> out;
    for (const auto& j : read_jsonl(path)) {
        if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
            throw StaleArtifactError("proxy record has an unsupported schema_version");
        ProxySet ps;
        ps.parent_id = j.at("parent_id").get<std::string>();
        auto perms = j.at("perms");
        auto proxies = j.at("proxies");
        if (perms.size() != 3 || proxies.size() != 3)
            throw StaleArtifactError("proxy record for " + ps.parent_id +
                                     " does not carry three proxies");
        for (int k = 0; k < 3; ++k) {
            for (int s = 0; s < 4; ++s) ps.perms[k][s] = perms[k][s].get<int>();
            ps.proxies[k] = example_from_json(proxies[k]);
        }
        out.push_back(std::move(ps));
    }
    return out;
}

}  // namespace neuronlab
