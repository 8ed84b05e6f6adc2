#pragma once
// Weight-file container. Layout (little-endian):
//   bytes 0..3   magic "NLWF"
//   bytes 4..7   u32 container version (1)
//   bytes 8..15  u64 header length H
//   H bytes      JSON header: config, free-form string metadata, and the
//                tensor directory (name, rows, cols, element offset)
//   data         all tensors as raw f64, row-major, in directory order
//   8 bytes      u64 FNV-1a hash of header+data
// The trailing hash doubles as the model's provenance id.

#include <map>
#include <string>

#include "neuronlab/model.hpp"

namespace neuronlab {

struct LoadedWeights {
    ModelConfig cfg;
    Weights<double> w;
    std::map<std::string, std::string> meta;
    std::uint64_t hash = 0;
};

std::uint64_t save_weights(const std::string& path, const ModelConfig& cfg,
                           const Weights<double>& w,
                           const std::map<std::string, std::string>& meta);

LoadedWeights load_weights(const std::string& path);

// Convenience: load straight into the runtime facade.
Model load_model(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace neuronlab
