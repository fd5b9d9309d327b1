#pragma once

#include <cstdint>
#include <random>

namespace shf {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Identifies the consumer of a random stream so that two modules sharing a
// user seed never see correlated numbers.
enum class StreamId : std::uint64_t {
    patterns = 1,
    moment = 2,
    kernel = 3,
    slab = 4,
    lower_chain = 5,
    nested = 6,
    compare = 7,
    disorder = 8,
    walks = 9,
    collisions = 10,
    graphs = 11,
};

inline constexpr std::uint64_t stream_seed(std::uint64_t seed, StreamId id,
                                           std::uint64_t batch) noexcept {
    std::uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ (static_cast<std::uint64_t>(id) * 0xd1342543de82ef95ULL));
    return splitmix64(s ^ (batch + 0x632be59bd9b4e019ULL));
}

class Rng {
public:
    using result_type = std::mt19937_64::result_type;

    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    Rng(std::uint64_t seed, StreamId id, std::uint64_t batch)
        : eng_(stream_seed(seed, id, batch)) {}

    static constexpr result_type min() { return std::mt19937_64::min(); }
    static constexpr result_type max() { return std::mt19937_64::max(); }
    result_type operator()() { return eng_(); }

    // Uniform on the open interval (0, 1).
    double uniform() {
        for (;;) {
            double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
        return d(eng_);
    }

    double normal() { return normal_(eng_); }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_;
};

} // namespace shf
