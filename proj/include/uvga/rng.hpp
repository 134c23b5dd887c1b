#pragma once

#include <cmath>
#include <cstdint>

namespace uvga {

// Counter-based generator: every value is a pure function of
// (seed, stream, counter), so independent streams never interact and
// draws are replayable in any order. Mixing is two rounds of the
// splitmix64 finalizer.
class CounterRng {
public:
    CounterRng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    static uint64_t mix(uint64_t seed, uint64_t stream, uint64_t counter) {
        uint64_t v = seed ^ (0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL);
        v += counter * 0x94D049BB133111EBULL;
        v = finalize(v);
        v = finalize(v ^ counter);
        return v;
    }

    uint64_t next_u64() { return mix(seed_, stream_, counter_++); }

    // Uniform in [0, 1).
    double next_uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes two counters per value.
    float next_normal() {
        double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = next_uniform();
        return float(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

private:
    static uint64_t finalize(uint64_t v) {
        v ^= v >> 30;
        v *= 0xBF58476D1CE4E5B9ULL;
        v ^= v >> 27;
        v *= 0x94D049BB133111EBULL;
        v ^= v >> 31;
        return v;
    }

    uint64_t seed_;
    uint64_t stream_;
    uint64_t counter_ = 0;
};

// Stream ids; fixed so runs are replayable across code changes.
namespace rng_stream {
constexpr uint64_t dataset_spec = 1;
constexpr uint64_t dataset_noise = 2;
constexpr uint64_t caption = 3;
constexpr uint64_t init_weights = 4;
constexpr uint64_t train_timestep = 5;
constexpr uint64_t train_noise = 6;
constexpr uint64_t cond_dropout = 7;
constexpr uint64_t sample_init = 8;
constexpr uint64_t sample_step = 9;
constexpr uint64_t inpaint_bg = 10;
constexpr uint64_t shuffle = 11;
}  // namespace rng_stream

}  // namespace uvga
