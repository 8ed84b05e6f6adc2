#pragma once
// Shared primitives: neuron addressing, error taxonomy, deterministic RNG,
// content hashing and a fixed-partition parallel loop.

#include <cstdint>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace neuronlab {

// Address of one FFN intermediate neuron: layer index and channel index
// within that layer's hidden width.
struct NeuronId {
    int layer = 0;
    int index = 0;

    friend bool operator==(const NeuronId& a, const NeuronId& b) {
        return a.layer == b.layer && a.index == b.index;
    }
    friend bool operator<(const NeuronId& a, const NeuronId& b) {
        return std::tie(a.layer, a.index) < std::tie(b.layer, b.index);
    }
};

// Errors are mapped to process exit codes at the CLI boundary.
// 1 usage, 2 missing artifact, 3 stale artifact, 4 numeric failure.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StaleArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit. Used for artifact provenance hashes; collision resistance
// at adversarial level is not a goal, detecting stale/corrupt inputs is.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}
inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}
std::string hash_hex(std::uint64_t h);

// Deterministic RNG. std::uniform_*_distribution is implementation-defined,
// so every draw is derived from a self-contained generator to keep
// artifacts byte-identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

    std::uint64_t next_u64() {
        // xorshift* keeps the generator self-contained and portable.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1Dull;
    }

    // Uniform in [0, n) by rejection-free modulo on a 64-bit draw; the bias
    // for n << 2^64 is far below anything observable here.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    int next_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double next_unit() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = next_unit(); } while (u1 <= 0.0);
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97f4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        x = x ^ (x >> 31);
        return x ? x : 0x9E3779B97f4A7C15ull;
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fixed-partition parallel loop. Work item i always runs with the same
// index regardless of worker count, and callers reduce over per-index
// slots afterwards, so results do not depend on scheduling.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace neuronlab
