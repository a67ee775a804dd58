#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace milbench {

/// FNV-1a over raw bytes. Stable across platforms; used for seed derivation
/// and content hashes written into output metadata.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Order-sensitive combination of hash values.
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept;

inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view text) noexcept {
    return hash_combine(seed, fnv1a64(text));
}

std::string hex64(std::uint64_t value);

/// Seeded generator whose every draw is defined in terms of raw mt19937_64
/// output, so sequences do not depend on the standard library's
/// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : m_engine(seed) {}

    std::uint64_t next_u64() { return m_engine(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(m_engine() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 m_engine;
    double m_spare = 0.0;
    bool m_has_spare = false;
};

} // namespace milbench
