#pragma once

#include <cstdint>
#include <cmath>

namespace pptrial {

// Counter-based generator built from the SplitMix64 finalizer.  Stateless
// apart from (key, counter): output i of stream s under master seed m is
// mix(mix(m ^ mix(s)) + i * GOLDEN).  Streams derived from distinct (seed,
// stream) pairs are independent for practical purposes, which makes
// per-subject and per-replicate draws reproducible regardless of execution
// order.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))), counter_(0) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * GOLDEN); }

    // uniform in [0,1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return next_double() < p; }

    // standard normal via Box-Muller; one draw per call, spare discarded so
    // the counter advance per call is fixed
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    static constexpr std::uint64_t GOLDEN = 0x9e3779b97f4a7c15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace pptrial
