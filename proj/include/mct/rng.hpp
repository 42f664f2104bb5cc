#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mct {

namespace detail {

// splitmix64, used only to spread seed material.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Every random choice in the pipeline draws from a stream derived from one
// root seed plus a purpose tag, so adding a consumer never perturbs the
// draws of existing ones.
inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index = 0) {
    uint64_t state = root ^ detail::fnv1a(tag);
    uint64_t a = detail::splitmix64(state);
    state ^= index * 0x9e3779b97f4a7c15ULL;
    uint64_t b = detail::splitmix64(state);
    return a ^ (b + index);
}

// mt19937_64 stream with hand-rolled double extraction. The raw engine
// output is pinned by the standard; extracting doubles ourselves keeps
// results identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi], inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // rejection sampling keeps the draw exactly uniform
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    // standard normal via Box-Muller; no rejection, two draws per value
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Fisher-Yates permutation of 0..n-1
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(n);
        for (int64_t i = 0; i < n; ++i) p[i] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = uniform_int(0, i);
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mct
