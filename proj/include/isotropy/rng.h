#pragma once

#include <cstdint>
#include <string_view>

namespace isotropy {

// Counter-based 64-bit generator: output k of stream (seed, stream_id) is
// splitmix64(key + k * gamma), where key mixes seed and stream_id. Any
// (seed, stream, k) triple can be evaluated independently, which is what
// lets bootstrap iterations run in any order or in parallel and still
// reproduce bit-for-bit. The arithmetic is fully specified here so other
// implementations can match it.
class CounterRng {
public:
    static constexpr std::string_view kFamily = "splitmix64-counter/v1";
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + kGamma))) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() { return mix(key_ + (++counter_) * kGamma); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) (Lemire's multiply-shift with rejection).
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t x = next();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = next();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller; one draw per call.
    double normal();

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace isotropy
