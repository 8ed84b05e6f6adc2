#include <fstream>
#include <sstream>

#include "neuronlab/artifacts.hpp"

namespace neuronlab {

namespace {

std::string hash_key(std::uint64_t h) { return hash_hex(h); }

nlohmann::json id_to_json(const NeuronId& id) {
    return nlohmann::json{{"layer", id.layer}, {"index", id.index}};
}

NeuronId id_from_json(const nlohmann::json& j) {
    return NeuronId{j.at("layer").get<int>(), j.at("index").get<int>()};
}

}  // namespace

nlohmann::json make_manifest(const std::string& kind, std::uint64_t config_hash,
                             const std::map<std::string, std::string>& inputs) {
    nlohmann::json m;
    m["kind"] = kind;
    m["config_hash"] = hash_key(config_hash);
    m["inputs"] = nlohmann::json::object();
    for (const auto& [name, hash] : inputs) m["inputs"][name] = hash;
    return m;
}

void check_manifest(const nlohmann::json& j, const std::string& kind) {
    if (!j.is_object() || j.value("schema_version", 0) != 1)
        throw StaleArtifactError("artifact is not a schema_version 1 document");
    if (!j.contains("manifest") || !j["manifest"].is_object())
        throw StaleArtifactError("artifact has no manifest block");
    const std::string got = j["manifest"].value("kind", "");
    if (got != kind)
        throw StaleArtifactError("artifact kind '" + got + "', expected '" + kind + "'");
}

void save_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifactError("cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw MissingArtifactError("short write to " + path);
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw StaleArtifactError(path + " is not valid JSON: " + e.what());
    }
    return j;
}

nlohmann::json sets_to_json(const NeuronSets& sets) {
    nlohmann::json j;
    j["good"] = nlohmann::json::array();
    j["bad"] = nlohmann::json::array();
    for (const auto& n : sets.good) {
        auto e = id_to_json(n.id);
        e["score"] = n.score;
        j["good"].push_back(e);
    }
    for (const auto& n : sets.bad) {
        auto e = id_to_json(n.id);
        e["score"] = n.score;
        j["bad"].push_back(e);
    }
    j["warnings"] = sets.warnings;
    return j;
}

NeuronSets sets_from_json(const nlohmann::json& j) {
    NeuronSets s;
    for (const auto& e : j.at("good")) {
        NeuronScore n;
        n.id = id_from_json(e);
        n.score = e.at("score").get<double>();
        s.good.push_back(n);
    }
    for (const auto& e : j.at("bad")) {
        NeuronScore n;
        n.id = id_from_json(e);
        n.score = e.at("score").get<double>();
        s.bad.push_back(n);
    }
    if (j.contains("warnings"))
        s.warnings = j.at("warnings").get<std::vector<std::string>>();
    return s;
}

nlohmann::json plan_to_json(const InterventionPlan& plan) {
    nlohmann::json j;
    j["direction"] = direction_name(plan.direction);
    j["budget"] = plan.budget;
    j["good_ratio"] = plan.good_ratio;
    j["good_shortfall"] = plan.good_shortfall;
    j["bad_shortfall"] = plan.bad_shortfall;
    j["good"] = nlohmann::json::array();
    j["bad"] = nlohmann::json::array();
    for (const auto& id : plan.good_used) j["good"].push_back(id_to_json(id));
    for (const auto& id : plan.bad_used) j["bad"].push_back(id_to_json(id));
    return j;
}

InterventionPlan plan_from_json(const nlohmann::json& j) {
    InterventionPlan p;
    p.direction = direction_from_name(j.at("direction").get<std::string>());
    p.budget = j.at("budget").get<int>();
    p.good_ratio = j.at("good_ratio").get<double>();
    p.good_shortfall = j.value("good_shortfall", false);
    p.bad_shortfall = j.value("bad_shortfall", false);
    for (const auto& e : j.at("good")) p.good_used.push_back(id_from_json(e));
    for (const auto& e : j.at("bad")) p.bad_used.push_back(id_from_json(e));
    return p;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifactError("cannot write " + path);
    out << text;
    if (!out) throw MissingArtifactError("short write to " + path);
}

bool file_exists(const std::string& path) {
    std::ifstream in(path);
    return in.good();
}

}  // namespace neuronlab
