#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace otl {

/// Seeded pseudo-random source passed explicitly to everything that draws.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard)
/// and derives uniform, normal and integer variates with explicit formulas
/// instead of the std distributions, whose algorithms vary between standard
/// libraries. Same seed, same stream, on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Independent stream keyed by (seed, stream id).
    static Rng derive(std::uint64_t seed, std::uint64_t stream);
    static Rng derive(std::uint64_t seed, std::string_view stream);

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double sigma) { return mean + sigma * normal(); }
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n);

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace otl
