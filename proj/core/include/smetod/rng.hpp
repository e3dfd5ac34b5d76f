#pragma once

#include <cstdint>

namespace smetod {

// Counter-based 64-bit generator (splitmix64 finalizer over seed + counter).
// Value i of a stream depends only on (seed, i), so any draw is reproducible
// across platforms and independent of call history.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    static std::uint64_t hash_at(std::uint64_t seed, std::uint64_t counter) {
        std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return hash_at(seed_, counter_++); }

    // [0, 1), 53 mantissa bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n); the modulo bias is < n / 2^64 and irrelevant at the sizes used here
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Independent stream derived from this seed; unaffected by draws made so far.
    CounterRng fork(std::uint64_t stream) const {
        return CounterRng(hash_at(seed_, 0xF0E1D2C3B4A59687ull + stream));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

} // namespace smetod
