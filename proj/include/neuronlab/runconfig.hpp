#pragma once
// Flat key=value run configuration. Files hold one pair per line ('#'
// comments, blank lines allowed); command-line overrides use the same
// syntax. Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace neuronlab {

struct RunConfig {
    std::map<std::string, std::string> kv;

    static const std::map<std::string, std::string>& defaults();
    static RunConfig make();  // defaults only
    static RunConfig from_file(const std::string& path);

    // "key=value" tokens, later wins. Throws UsageError on malformed input
    // or unknown keys.
    void apply(const std::vector<std::string>& overrides);

    bool has(const std::string& key) const;
    std::string get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    std::string canonical() const;  // sorted "key=value" lines
    std::uint64_t content_hash() const;
};

}  // namespace neuronlab
