#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace shf {

inline constexpr long long r_n_guard = 10'000'000;

// Expected number of times n = 1..N at which two independent simple random
// walks on Z^2 from the origin coincide: sum of P(S_{2n} = 0).
inline double compute_r_n(long long N) {
    require(N >= 1, "compute_r_n: N must be >= 1");
    if (N > r_n_guard) {
        std::ostringstream os;
        os << "compute_r_n: N = " << N << " exceeds the guard " << r_n_guard;
        throw CapacityError(os.str());
    }
    // P(S_{2n} = 0) = q_n^2 with q_n = C(2n, n) / 4^n, q_n = q_{n-1} (2n - 1) / (2n).
    double q = 1.0;
    double sum = 0.0;
    for (long long n = 1; n <= N; ++n) {
        q *= (2.0 * n - 1.0) / (2.0 * n);
        sum += q * q;
    }
    return sum;
}

struct CriticalWindow {
    long long n_steps = 0;
    double theta = 0.0;
    double r_n = 0.0;
    double sigma_sq = 0.0;
    double beta_n = 0.0;

    static CriticalWindow make(long long N, double theta) {
        require(N >= 2, "CriticalWindow: N must be >= 2");
        CriticalWindow w;
        w.n_steps = N;
        w.theta = theta;
        w.r_n = compute_r_n(N);
        w.sigma_sq = (1.0 + theta / std::log(static_cast<double>(N))) / w.r_n;
        require(w.sigma_sq > 0.0, "CriticalWindow: theta too negative for this N");
        w.beta_n = std::sqrt(std::log1p(w.sigma_sq));
        return w;
    }

    // A window with an explicit inverse temperature, mainly for testing.
    static CriticalWindow with_beta(long long N, double beta) {
        require(N >= 2, "CriticalWindow: N must be >= 2");
        require(beta >= 0.0 && std::isfinite(beta), "CriticalWindow: beta must be >= 0");
        CriticalWindow w;
        w.n_steps = N;
        w.r_n = compute_r_n(N);
        w.beta_n = beta;
        w.sigma_sq = std::expm1(beta * beta);
        w.theta = std::log(static_cast<double>(N)) * (w.sigma_sq * w.r_n - 1.0);
        return w;
    }
};

struct PolymerSample {
    double partition_value = 1.0;
    std::uint64_t seed = 0; // sample index keying the disorder stream
    long long n_steps = 0;
};

// Half-width of the transfer-matrix box in rotated coordinates; the walk
// leaves it before time N with probability at most epsilon.
inline int transfer_half_width(long long N, double epsilon = 1e-10) {
    double k = std::sqrt(2.0 * static_cast<double>(N) * std::log(8.0 / epsilon));
    return static_cast<int>(std::min<double>(std::ceil(k), static_cast<double>(N)));
}

inline double truncation_bound(long long N, int K) {
    // Two independent +-1 coordinates, each leaving [-K, K] with probability
    // at most 2 exp(-K^2 / 2N) (reflection plus Hoeffding).
    return std::min(1.0, 8.0 * std::exp(-static_cast<double>(K) * K / (2.0 * N)));
}

inline constexpr double transfer_work_guard = 2e11;

namespace detail {

// Point-to-plane partition function for one disorder realisation.  The walk
// is tracked in u = x + y, v = x - y, where each step moves u and v by +-1
// independently; disorder acts at times 1..N-1.
inline double partition_one(const CriticalWindow& w, std::uint64_t seed, std::uint64_t index,
                            int K) {
    if (w.beta_n == 0.0) return 1.0;
    const long long N = w.n_steps;
    const int width = 2 * K + 1;
    std::vector<double> cur(static_cast<std::size_t>(width) * width, 0.0);
    std::vector<double> tmp(cur.size(), 0.0);
    auto at = [width, K](std::vector<double>& a, int u, int v) -> double& {
        return a[static_cast<std::size_t>(u + K) * width + (v + K)];
    };
    at(cur, 0, 0) = 1.0;
    Rng rng(seed, StreamId::disorder, index);
    const double beta = w.beta_n;
    const double half_b2 = 0.5 * beta * beta;
    for (long long n = 1; n < N; ++n) {
        const int prev = static_cast<int>(std::min<long long>(n - 1, K));
        const int c = static_cast<int>(std::min<long long>(n, K));
        const int par = static_cast<int>(n & 1);
        // u pass: tmp(u, v) for u of the new parity, v of the old parity.
        for (int u = -c; u <= c; ++u) {
            if (((u % 2) + 2) % 2 != par) continue;
            for (int v = -prev; v <= prev; ++v) {
                if ((((v % 2) + 2) % 2) == par) continue;
                double s = 0.0;
                if (u - 1 >= -K) s += at(cur, u - 1, v);
                if (u + 1 <= K) s += at(cur, u + 1, v);
                at(tmp, u, v) = 0.5 * s;
            }
        }
        for (int u = -prev; u <= prev; ++u)
            for (int v = -prev; v <= prev; ++v) at(cur, u, v) = 0.0;
        for (int u = -c; u <= c; ++u) {
            if (((u % 2) + 2) % 2 != par) continue;
            for (int v = -c; v <= c; ++v) {
                if (((v % 2) + 2) % 2 != par) continue;
                double s = 0.0;
                if (v - 1 >= -prev) s += at(tmp, u, v - 1);
                if (v + 1 <= prev) s += at(tmp, u, v + 1);
                at(cur, u, v) = 0.5 * s * std::exp(beta * rng.normal() - half_b2);
            }
        }
        for (int u = -c; u <= c; ++u)
            for (int v = -prev; v <= prev; ++v) at(tmp, u, v) = 0.0;
    }
    double z = 0.0;
    for (double x : cur) z += x;
    return z;
}

} // namespace detail

inline std::vector<PolymerSample> simulate_partition(const CriticalWindow& w, std::uint64_t samples,
                                                     std::uint64_t seed, ParallelOptions par = {},
                                                     double epsilon = 1e-10) {
    require(w.n_steps >= 2, "simulate_partition: invalid window");
    const int K = transfer_half_width(w.n_steps, epsilon);
    const double width = 2.0 * K + 1.0;
    if (static_cast<double>(w.n_steps) * width * width > transfer_work_guard) {
        std::ostringstream os;
        os << "simulate_partition: N * breadth^2 = " << static_cast<double>(w.n_steps) * width * width
           << " exceeds the guard " << transfer_work_guard;
        throw CapacityError(os.str());
    }
    const std::size_t bs = std::max<std::size_t>(1, std::min<std::size_t>(par.batch_size, 16));
    auto parts = run_batches(batch_count(samples, bs), par.workers, [&](std::size_t bi) {
        std::vector<PolymerSample> out;
        std::size_t len = batch_length(samples, bs, bi);
        for (std::size_t k = 0; k < len; ++k) {
            std::uint64_t idx = bi * bs + k;
            out.push_back({detail::partition_one(w, seed, idx, K), idx, w.n_steps});
        }
        return out;
    });
    std::vector<PolymerSample> all;
    all.reserve(samples);
    for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
    return all;
}

// ------------------------------------------------------- collision law

struct CollisionLaw {
    long long n_steps = 0;
    std::vector<long long> counts;   // I_N per sample
    std::vector<double> scaled;      // pi I_N / log N
    double mean = 0.0;               // of the scaled counts
    double ks_raw = 0.0;             // KS distance of the scaled counts to Exp(1)
    double ks_jittered = 0.0;        // with I_N + U, U uniform on (0, 1)
};

namespace detail {

// Steps of the difference of two walks: two independent walk steps per time,
// i.e. u and v each move by the sum of two +-1 steps.
inline long long difference_walk_returns(long long N, Rng& rng) {
    long long u = 0;
    long long v = 0;
    long long hits = 0;
    std::uint64_t bits = 0;
    int left = 0;
    for (long long n = 1; n <= N; ++n) {
        if (left == 0) {
            bits = rng();
            left = 16;
        }
        u += static_cast<long long>(bits & 1u) + static_cast<long long>((bits >> 1) & 1u) - 1;
        v += static_cast<long long>((bits >> 2) & 1u) + static_cast<long long>((bits >> 3) & 1u) - 1;
        bits >>= 4;
        --left;
        if (u == 0 && v == 0) ++hits;
    }
    return hits;
}

} // namespace detail

inline CollisionLaw collision_law(long long N, std::uint64_t samples, std::uint64_t seed,
                                  ParallelOptions par = {}) {
    require(N >= 2, "collision_law: N must be >= 2");
    require(samples >= 1, "collision_law: need at least one sample");
    const std::size_t bs = par.batch_size;
    auto parts = run_batches(batch_count(samples, bs), par.workers, [&](std::size_t bi) {
        Rng rng(seed, StreamId::collisions, bi);
        std::vector<std::pair<long long, double>> out;
        std::size_t len = batch_length(samples, bs, bi);
        for (std::size_t k = 0; k < len; ++k) {
            long long c = detail::difference_walk_returns(N, rng);
            out.emplace_back(c, rng.uniform());
        }
        return out;
    });
    CollisionLaw law;
    law.n_steps = N;
    const double scale = std::numbers::pi / std::log(static_cast<double>(N));
    std::vector<double> jit;
    for (auto& p : parts)
        for (auto [c, u] : p) {
            law.counts.push_back(c);
            law.scaled.push_back(scale * static_cast<double>(c));
            jit.push_back(scale * (static_cast<double>(c) + u));
        }
    double s = 0.0;
    for (double x : law.scaled) s += x;
    law.mean = s / static_cast<double>(law.scaled.size());
    law.ks_raw = ks_distance_exponential(law.scaled);
    law.ks_jittered = ks_distance_exponential(jit);
    return law;
}

// ------------------------------------------------------------ moments

inline constexpr long long pair_moment_guard = 20000;

// E[exp(b I)] with I the number of coincidences of two walks at times
// 1..N-1, by renewal over first returns of the difference walk.  This is
// E[Z^2] for Gaussian disorder with b = beta^2.
inline double pair_moment_exact(long long N, double b) {
    require(N >= 2, "pair_moment_exact: N must be >= 2");
    require(std::isfinite(b), "pair_moment_exact: exponent must be finite");
    if (N > pair_moment_guard) {
        std::ostringstream os;
        os << "pair_moment_exact: N = " << N << " exceeds the guard " << pair_moment_guard;
        throw CapacityError(os.str());
    }
    const auto M = static_cast<std::size_t>(N - 1);
    std::vector<double> ret(M + 1), first(M + 1, 0.0), with(M + 1, 0.0), survive(M + 1);
    double q = 1.0;
    ret[0] = 1.0;
    for (std::size_t n = 1; n <= M; ++n) {
        q *= (2.0 * n - 1.0) / (2.0 * n);
        ret[n] = q * q;
    }
    for (std::size_t n = 1; n <= M; ++n) {
        double s = ret[n];
        for (std::size_t k = 1; k < n; ++k) s -= first[k] * ret[n - k];
        first[n] = s;
    }
    survive[0] = 1.0;
    for (std::size_t j = 1; j <= M; ++j) survive[j] = survive[j - 1] - first[j];
    with[0] = 1.0;
    const double eb = std::exp(b);
    for (std::size_t n = 1; n <= M; ++n) {
        double s = 0.0;
        for (std::size_t k = 1; k <= n; ++k) s += first[k] * with[n - k];
        with[n] = eb * s;
    }
    double total = 0.0;
    for (std::size_t k = 0; k <= M; ++k) total += with[k] * survive[M - k];
    return total;
}

inline double pair_moment_exact(const CriticalWindow& w) {
    return pair_moment_exact(w.n_steps, w.beta_n * w.beta_n);
}

struct DpreMoment {
    int h = 0;
    CriticalWindow window;
    std::optional<Estimate> direct;   // mean of Z^h over disorder
    Estimate collision;               // mean of exp(beta^2 sum_{i<j} I_ij)
    std::optional<Estimate> pairwise_product; // prod over pairs of E exp(beta^2 I), h >= 3
    std::string warning;

    // |direct - collision| in units of the pooled standard error.
    std::optional<double> cross_check_z() const {
        if (!direct) return std::nullopt;
        double se = std::hypot(direct->std_error, collision.std_error);
        if (se == 0.0) return direct->value == collision.value ? 0.0 : INFINITY;
        return std::abs(direct->value - collision.value) / se;
    }
};

namespace detail {

// Total pairwise coincidences of h independent walks at times 1..N-1.
inline long long pairwise_collisions(int h, long long N, Rng& rng, std::vector<long long>& u,
                                     std::vector<long long>& v) {
    std::fill(u.begin(), u.end(), 0);
    std::fill(v.begin(), v.end(), 0);
    long long total = 0;
    std::uint64_t bits = 0;
    int left = 0;
    for (long long n = 1; n < N; ++n) {
        for (int i = 0; i < h; ++i) {
            if (left == 0) {
                bits = rng();
                left = 32;
            }
            u[i] += static_cast<long long>((bits & 1u) << 1) - 1;
            v[i] += static_cast<long long>(((bits >> 1) & 1u) << 1) - 1;
            bits >>= 2;
            --left;
        }
        for (int i = 0; i < h; ++i)
            for (int j = i + 1; j < h; ++j)
                if (u[i] == u[j] && v[i] == v[j]) ++total;
    }
    return total;
}

inline Estimate collision_moment(int h, const CriticalWindow& w, std::uint64_t samples,
                                 std::uint64_t seed, std::uint64_t salt, ParallelOptions par) {
    const double b2 = w.beta_n * w.beta_n;
    const std::size_t bs = par.batch_size;
    auto parts = run_batches(batch_count(samples, bs), par.workers, [&](std::size_t bi) {
        Rng rng(seed, StreamId::walks, (salt << 40) + bi);
        std::vector<long long> u(static_cast<std::size_t>(h));
        std::vector<long long> v(static_cast<std::size_t>(h));
        RunningStats st;
        std::size_t len = batch_length(samples, bs, bi);
        for (std::size_t k = 0; k < len; ++k)
            st.add(std::exp(b2 * static_cast<double>(pairwise_collisions(h, w.n_steps, rng, u, v))));
        return st;
    });
    RunningStats st;
    for (auto& p : parts) st.merge(p);
    return {st.mean(), st.std_error()};
}

} // namespace detail

inline constexpr double dpre_divergence_threshold = 0.5;

inline DpreMoment dpre_moment(int h, const CriticalWindow& w, std::uint64_t samples,
                              std::uint64_t seed, ParallelOptions par = {}, bool with_direct = true,
                              std::uint64_t direct_samples = 0) {
    require(h >= 1 && h <= 4, "dpre_moment: h must lie in 1..4");
    require(samples >= 2, "dpre_moment: need at least two samples");
    DpreMoment r;
    r.h = h;
    r.window = w;
    if (h == 1) {
        r.collision = {1.0, 0.0};
        if (with_direct) r.direct = Estimate{1.0, 0.0};
        return r;
    }
    r.collision = detail::collision_moment(h, w, samples, seed, static_cast<std::uint64_t>(h), par);
    if (h >= 3) {
        Estimate e2 = detail::collision_moment(2, w, samples, seed, 100 + static_cast<std::uint64_t>(h), par);
        const int pairs = h * (h - 1) / 2;
        double v = std::pow(e2.value, pairs);
        r.pairwise_product = Estimate{v, pairs * std::pow(e2.value, pairs - 1) * e2.std_error};
    }
    if (with_direct) {
        auto zs = simulate_partition(w, direct_samples ? direct_samples : samples, seed, par);
        RunningStats st;
        for (const auto& z : zs) st.add(std::pow(z.partition_value, h));
        r.direct = Estimate{st.mean(), st.std_error()};
    }
    std::ostringstream warn;
    if (r.collision.std_error > dpre_divergence_threshold * r.collision.value)
        warn << "collision estimator relative standard error exceeds 50%; ";
    if (r.direct && r.direct->std_error > dpre_divergence_threshold * r.direct->value)
        warn << "direct estimator relative standard error exceeds 50%; ";
    r.warning = warn.str();
    return r;
}

} // namespace shf
