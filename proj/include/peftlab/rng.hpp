#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace peftlab {

// Counter-based deterministic generator built on the splitmix64 finalizer.
// Streams are keyed by up to three 64-bit values (seed, index, field), so
// any sample/parameter can be regenerated in isolation, in any order, on
// any platform, with identical bits.
class Rng {
  public:
    explicit Rng(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0)
        : state_(mix(mix(mix(a + kGolden) + b) + c)) {}

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix_to_output(state_);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool coin() { return (next_u64() & 1u) != 0; }

    // Box-Muller from two fresh uniforms; no cached second value, so the
    // stream position advances identically regardless of call pattern.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * kPi * u2);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t mix_to_output(std::uint64_t z) { return mix(z); }

    std::uint64_t state_;
};

// FNV-1a, used to derive per-parameter rng streams from registry names.
inline std::uint64_t hash_name(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace peftlab
