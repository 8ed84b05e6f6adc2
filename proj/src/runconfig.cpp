#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "neuronlab/common.hpp"
#include "neuronlab/runconfig.hpp"

namespace neuronlab {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> d = {
        // task generation
        {"task", "copy_cue"},
        {"seed", "1"},
        {"n_train", "256"},
        {"n_pool", "256"},
        // which model downstream commands act on
        {"model", "planted"},
        // trainer
        {"train_seed", "7"},
        {"train_steps", "1200"},
        {"train_batch", "16"},
        {"train_lr", "0.001"},
        {"train_clip", "1.0"},
        {"train_eval_every", "50"},
        {"train_dev", "40"},
        {"train_stop_com", "0.85"},
        {"arch_layers", "2"},
        {"arch_d_model", "64"},
        {"arch_heads", "2"},
        {"arch_d_ffn", "256"},
        {"arch_max_seq", "64"},
        {"arch_norm", "layernorm"},
        // attribution
        {"aqua", "on"},
        {"m", "16"},
        {"z", "5000"},
        {"k", "100"},
        {"tr", "5"},
        {"target", "contrastive"},
        {"scorer", "ace"},
        {"per_neuron", "off"},
        {"random_seed", "99"},
        // intervention
        {"budget", "100"},
        {"direction", "degrade"},
        {"sweep_step", "0.1"},
        {"sets_use", "both"},
        // evaluation
        {"eval_n", "100"},
        {"workers", "1"},
        // workspace root; the --workspace flag wins over this
        {"workspace", "ws"},
    };
    return d;
}

RunConfig RunConfig::make() {
    RunConfig c;
    c.kv = defaults();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open config file " + path);
    RunConfig c = make();
    std::vector<std::string> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.find('=') == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) +
                             ": expected key=value, got '" + t + "'");
        pairs.push_back(t);
    }
    c.apply(pairs);
    return c;
}

void RunConfig::apply(const std::vector<std::string>& overrides) {
    for (const auto& tok : overrides) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw UsageError("override '" + tok + "' is not key=value");
        std::string key = trim(tok.substr(0, eq));
        std::string val = trim(tok.substr(eq + 1));
        if (key.empty() || val.empty())
            throw UsageError("override '" + tok + "' has an empty key or value");
        if (defaults().find(key) == defaults().end())
            throw UsageError("unknown config key '" + key + "'");
        kv[key] = val;
    }
}

bool RunConfig::has(const std::string& key) const { return kv.count(key) != 0; }

std::string RunConfig::get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw UsageError("config key '" + key + "' is not set");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const {
    const std::string v = get(key);
    int out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw UsageError("config key '" + key + "' = '" + v + "' is not an integer");
    return out;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' = '" + v + "' is not a number");
    }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string v = get(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw UsageError("config key '" + key + "' = '" + v +
                         "' is not an unsigned integer");
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string v = get(key);
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key '" + key + "' = '" + v + "' is not a boolean");
}

std::string RunConfig::canonical() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
    return out.str();
}

std::uint64_t RunConfig::content_hash() const { return fnv1a64(canonical()); }

}  // namespace neuronlab
