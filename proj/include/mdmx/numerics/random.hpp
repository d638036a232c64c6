#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mdmx {

// Seeded generator with distribution code written out by hand: the standard
// library distributions are implementation-defined, and runs must reproduce
// bit-for-bit across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    std::uint64_t poisson(double mean);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    std::vector<std::size_t> permutation(std::size_t n);

    // Derives an independent stream; used to give each restart its own seed.
    std::uint64_t fork_seed() { return engine_() ^ 0x9e3779b97f4a7c15ULL; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mdmx
