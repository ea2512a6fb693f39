#pragma once

#include <cstdint>
#include <string_view>

namespace tsimp {

// SplitMix64-based generator. Self-contained so that streams are
// byte-reproducible across platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    // Uniform in [0,1).
    double uniform();
    float uniform(float lo, float hi);
    // Standard normal via Box-Muller.
    double normal();
    // Uniform integer in [0, n).
    uint64_t below(uint64_t n);

    // Independent child stream keyed by a tag (stage/fold/trial name).
    Rng derive(std::string_view tag) const;
    Rng derive(std::string_view tag, uint64_t index) const;

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace tsimp
