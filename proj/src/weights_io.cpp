#include "neuronlab/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace neuronlab {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

namespace {

json config_json(const ModelConfig& cfg) {
    return json{{"n_layers", cfg.n_layers},
                {"d_model", cfg.d_model},
                {"n_heads", cfg.n_heads},
                {"d_ffn", cfg.d_ffn},
                {"vocab_size", cfg.vocab_size},
                {"max_seq", cfg.max_seq},
                {"activation", "gelu"},
                {"norm", cfg.norm == NormKind::layernorm ? "layernorm" : "none"},
                {"precision", cfg.precision == Precision::f32 ? "f32" : "f64"}};
}

ModelConfig config_from(const json& j) {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ffn = j.at("d_ffn").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq = j.at("max_seq").get<int>();
    std::string act = j.at("activation").get<std::string>();
    if (act != "gelu") throw StaleArtifactError("unknown activation kind: " + act);
    std::string norm = j.at("norm").get<std::string>();
    if (norm == "layernorm")
        cfg.norm = NormKind::layernorm;
    else if (norm == "none")
        cfg.norm = NormKind::none;
    else
        throw StaleArtifactError("unknown norm kind: " + norm);
    std::string prec = j.at("precision").get<std::string>();
    if (prec == "f32")
        cfg.precision = Precision::f32;
    else if (prec == "f64")
        cfg.precision = Precision::f64;
    else
        throw StaleArtifactError("unknown precision: " + prec);
    cfg.validate();
    return cfg;
}

struct Serialized {
    std::string header;
    std::string data;  // raw f64 bytes
};

Serialized serialize(const ModelConfig& cfg, const Weights<double>& w,
                     const std::map<std::string, std::string>& meta) {
    json dir = json::array();
    std::string data;
    std::size_t offset = 0;
    visit_tensors(w, cfg,
                  [&](const std::string& name, const std::vector<double>& v, int r, int c) {
                      if (v.size() != static_cast<std::size_t>(r) * c)
                          throw NumericError("tensor " + name + " has the wrong extent");
                      dir.push_back({{"name", name}, {"rows", r}, {"cols", c}, {"offset", offset}});
                      std::size_t bytes = v.size() * sizeof(double);
                      std::size_t at = data.size();
                      data.resize(at + bytes);
                      std::memcpy(data.data() + at, v.data(), bytes);
                      offset += v.size();
                  });
    json header = {{"format", "nlw"},
                   {"version", 1},
                   {"config", config_json(cfg)},
                   {"meta", meta},
                   {"tensors", dir}};
    return {header.dump(), std::move(data)};
}

std::uint64_t hash_serialized(const Serialized& s) {
    std::uint64_t h = fnv1a64(s.header.data(), s.header.size());
    return fnv1a64(s.data.data(), s.data.size(), h);
}

template <class T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }
ModelConfig config_from_json(const std::string& text) {
    return config_from(json::parse(text));
}

std::uint64_t weights_content_hash(const ModelConfig& cfg, const Weights<double>& w,
                                   const std::map<std::string, std::string>& meta) {
    return hash_serialized(serialize(cfg, w, meta));
}

std::uint64_t save_weights(const std::string& path, const ModelConfig& cfg,
                           const Weights<double>& w,
                           const std::map<std::string, std::string>& meta) {
    Serialized s = serialize(cfg, w, meta);
    std::uint64_t h = hash_serialized(s);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifactError("cannot open weight file for writing: " + path);
    f.write("NLWF", 4);
    write_pod(f, static_cast<std::uint32_t>(1));
    write_pod(f, static_cast<std::uint64_t>(s.header.size()));
    f.write(s.header.data(), static_cast<std::streamsize>(s.header.size()));
    f.write(s.data.data(), static_cast<std::streamsize>(s.data.size()));
    write_pod(f, h);
    if (!f) throw MissingArtifactError("short write while saving weights: " + path);
    return h;
}

LoadedWeights load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("weight file not found: " + path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto corrupt = [&](const std::string& why) {
        throw StaleArtifactError("weight file " + path + " rejected: " + why);
    };
    if (all.size() < 4 + 4 + 8 + 8 || all.compare(0, 4, "NLWF") != 0)
        corrupt("bad magic or truncated preamble");
    std::uint32_t version;
    std::memcpy(&version, all.data() + 4, 4);
    if (version != 1) corrupt("unsupported container version");
    std::uint64_t hlen;
    std::memcpy(&hlen, all.data() + 8, 8);
    std::size_t header_at = 16;
    if (header_at + hlen + 8 > all.size()) corrupt("truncated header");
    std::string header = all.substr(header_at, hlen);
    std::size_t data_at = header_at + hlen;
    std::size_t data_len = all.size() - data_at - 8;
    std::uint64_t stored;
    std::memcpy(&stored, all.data() + all.size() - 8, 8);
    std::uint64_t h = fnv1a64(header.data(), header.size());
    h = fnv1a64(all.data() + data_at, data_len, h);
    if (h != stored) corrupt("integrity hash mismatch");

    json j;
    try {
        j = json::parse(header);
    } catch (const std::exception& e) {
        corrupt(std::string("header is not valid JSON: ") + e.what());
    }
    LoadedWeights out;
    out.cfg = config_from(j.at("config"));
    out.hash = stored;
    for (auto& [k, v] : j.at("meta").items()) out.meta[k] = v.get<std::string>();
    out.w = Weights<double>::zeros(out.cfg);

    std::map<std::string, std::pair<std::size_t, std::size_t>> dir;  // name -> offset, count
    for (const auto& t : j.at("tensors")) {
        std::size_t count = t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
        dir[t.at("name").get<std::string>()] = {t.at("offset").get<std::size_t>(), count};
    }
    const double* base = reinterpret_cast<const double*>(all.data() + data_at);
    std::size_t total = data_len / sizeof(double);
    visit_tensors(out.w, out.cfg,
                  [&](const std::string& name, std::vector<double>& v, int, int) {
                      auto it = dir.find(name);
                      if (it == dir.end()) corrupt("missing tensor " + name);
                      auto [off, count] = it->second;
                      if (count != v.size() || off + count > total)
                          corrupt("tensor " + name + " has the wrong extent");
                      std::memcpy(v.data(), base + off, count * sizeof(double));
                      for (double x : v)
                          if (!std::isfinite(x))
                              throw NumericError("non-finite value in tensor " + name + " of " + path);
                  });
    return out;
}

Model load_model(const std::string& path) {
    LoadedWeights lw = load_weights(path);
    return Model(lw.cfg, std::move(lw.w), lw.hash, std::move(lw.meta));
}

}  // namespace neuronlab
