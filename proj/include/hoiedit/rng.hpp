#pragma once

#include <cstdint>

namespace hoiedit {

// Counter-based generator: every draw is splitmix64(key + counter * gamma), so
// a stream is fully described by (key, counter) and reproduces bit-for-bit on
// any platform. Streams for sub-tasks are derived from a parent key and a
// stream id instead of sharing state.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static CounterRng from_key(std::uint64_t key, std::uint64_t counter = 0) {
        CounterRng r(0);
        r.key_ = key;
        r.counter_ = counter;
        return r;
    }

    CounterRng derive(std::uint64_t stream) const {
        return from_key(mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
    }

    std::uint64_t next_u64() { return mix(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n > 0. Rejection keeps it unbiased.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; consumes two draws, no cached spare.
    double normal();

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace hoiedit
