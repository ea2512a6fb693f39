#include "tsimp/rng.hpp"

#include <cmath>

namespace tsimp {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

uint64_t Rng::below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    uint64_t limit = ~0ULL - (~0ULL % n);
    uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

Rng Rng::derive(std::string_view tag) const {
    uint64_t s = state_;
    uint64_t mixed = splitmix64(s) ^ fnv1a(tag);
    return Rng(mixed);
}

Rng Rng::derive(std::string_view tag, uint64_t index) const {
    uint64_t s = state_;
    uint64_t mixed = splitmix64(s) ^ fnv1a(tag);
    mixed ^= 0x9e3779b97f4a7c15ULL * (index + 1);
    return Rng(mixed);
}

}  // namespace tsimp
