#ifndef BLOCKFETCH_RNG_HPP
#define BLOCKFETCH_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace blockfetch {

// SplitMix64 finalizer (Steele, Lea, Flood 2014). Used for seeding and
// for deriving independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// FNV-1a over the bytes of a tag, used to name derived streams.
constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Seed used for a given epoch: mix64(seed ^ mix64(epoch)).
constexpr std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) noexcept {
    return mix64(seed ^ mix64(epoch));
}

/// Seed of a named sub-stream, e.g. ("fetch-shuffle", fetch_position).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::uint64_t index) noexcept {
    return mix64(mix64(seed ^ tag_hash(tag)) ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

/**
 * xoshiro256** 1.0 (Blackman & Vigna). State is expanded from a single
 * 64-bit seed with SplitMix64, so output is identical on every platform.
 * Satisfies UniformRandomBitGenerator, but the helpers below should be
 * preferred over <random> distributions, whose output is
 * implementation-defined.
 */
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            s = mix64(x);
            x += 0x9E3779B97F4A7C15ULL;
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform integer in [0, bound). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t bound) noexcept {
        if (bound <= 1) return 0;
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1].
    double uniform_open0() noexcept {
        return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Marsaglia's polar method.
    double normal() noexcept;

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// In-place Fisher-Yates (Durstenfeld) shuffle.
template <typename T>
void shuffle(std::span<T> values, Xoshiro256& rng) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        using std::swap;
        swap(values[i - 1], values[j]);
    }
}

}  // namespace blockfetch

#endif  // BLOCKFETCH_RNG_HPP
