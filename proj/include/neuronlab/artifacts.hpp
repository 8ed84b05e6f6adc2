#pragma once
// On-disk artifacts besides weights: neuron sets, edit plans and reports.
// Everything is JSON with a schema_version and a manifest block recording
// the producing configuration hash and the hashes of the inputs, so stale
// chains are detected instead of silently reused. No timestamps: rerunning
// a command with identical inputs yields byte-identical files.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neuronlab/attribution.hpp"
#include "neuronlab/intervention.hpp"

#include "json.hpp"

namespace neuronlab {

nlohmann::json make_manifest(const std::string& kind, std::uint64_t config_hash,
                             const std::map<std::string, std::string>& inputs);

// Throws StaleArtifactError unless `j` carries a manifest of `kind` with
// schema_version 1.
void check_manifest(const nlohmann::json& j, const std::string& kind);

void save_json(const std::string& path, const nlohmann::json& j);
nlohmann::json load_json(const std::string& path);

nlohmann::json sets_to_json(const NeuronSets& sets);
NeuronSets sets_from_json(const nlohmann::json& j);

nlohmann::json plan_to_json(const InterventionPlan& plan);
InterventionPlan plan_from_json(const nlohmann::json& j);

std::string read_text_file(const std::string& path);  // MissingArtifactError
void write_text_file(const std::string& path, const std::string& text);
bool file_exists(const std::string& path);

}  // namespace neuronlab
