#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace fmlab {

// Counter-based generator. Output k of a stream is splitmix64's finalizer
// applied to (key + k * golden_gamma); the whole state is (key, counter), so
// streams can be checkpointed and substreams derived without shared state.
//
// Gaussian draws use Box-Muller and consume exactly two uniforms each, so the
// number of counter increments per draw is fixed and independent of values.
class Rng {
public:
    Rng() = default;
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6A09E667F3BCC909ULL)) {}
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    // Uniform on (0, 1); safe as a log() argument.
    double uniform_open();
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n);

    // Independent substream keyed by a tag; does not advance this stream.
    Rng derive(std::string_view tag) const;
    Rng derive(std::uint64_t index) const;

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace fmlab
