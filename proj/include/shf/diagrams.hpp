#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace shf {

// Unordered pair of walker labels, stored with i < j, labels from 1.
struct Pair {
    int i = 1;
    int j = 2;
    friend constexpr bool operator==(Pair, Pair) = default;
};

inline std::int64_t pair_count(int h) {
    return static_cast<std::int64_t>(h) * (h - 1) / 2;
}

// Lexicographic rank of {i, j} among the pairs of {1..h}.
inline int pair_rank(Pair p, int h) {
    int before = (p.i - 1) * h - (p.i - 1) * p.i / 2;
    return before + (p.j - p.i - 1);
}

inline Pair pair_from_rank(int rank, int h) {
    int i = 1;
    while (rank >= h - i) {
        rank -= h - i;
        ++i;
    }
    return {i, i + 1 + rank};
}

class CollisionPattern {
public:
    explicit CollisionPattern(int h, std::vector<Pair> pairs = {}) : h_(h), pairs_(std::move(pairs)) {
        require(h_ >= 1, "CollisionPattern: h must be >= 1");
        for (std::size_t k = 0; k < pairs_.size(); ++k) {
            const Pair p = pairs_[k];
            if (!(1 <= p.i && p.i < p.j && p.j <= h_)) {
                std::ostringstream os;
                os << "CollisionPattern: pair " << k + 1 << " = {" << p.i << "," << p.j
                   << "} is not of the form 1 <= i < j <= h=" << h_;
                throw DomainError(os.str());
            }
            if (k > 0 && pairs_[k - 1] == p) {
                std::ostringstream os;
                os << "CollisionPattern: pairs " << k << " and " << k + 1 << " coincide";
                throw DomainError(os.str());
            }
        }
    }

    int h() const { return h_; }
    int m() const { return static_cast<int>(pairs_.size()); }
    const std::vector<Pair>& pairs() const { return pairs_; }
    const Pair& operator[](int r) const { return pairs_[static_cast<std::size_t>(r - 1)]; }

    friend bool operator==(const CollisionPattern&, const CollisionPattern&) = default;

private:
    int h_;
    std::vector<Pair> pairs_;
};

// |Col^(h,m)| as a double; exact while below 2^53.
inline double pattern_count(int h, int m) {
    require(h >= 1 && m >= 0, "pattern_count: need h >= 1 and m >= 0");
    if (m == 0) return 1.0;
    double p = static_cast<double>(pair_count(h));
    if (p == 0.0) return 0.0;
    return p * std::pow(p - 1.0, m - 1);
}

inline double log_pattern_count(int h, int m) {
    double c = pattern_count(h, m);
    if (std::isfinite(c)) return c > 0.0 ? std::log(c) : -std::numeric_limits<double>::infinity();
    double p = static_cast<double>(pair_count(h));
    return std::log(p) + (m - 1) * std::log(p - 1.0);
}

// Exact count, or nullopt when it does not fit in 63 bits.
inline std::optional<std::uint64_t> pattern_count_exact(int h, int m) {
    require(h >= 1 && m >= 0, "pattern_count_exact: need h >= 1 and m >= 0");
    if (m == 0) return 1;
    std::uint64_t p = static_cast<std::uint64_t>(pair_count(h));
    if (p == 0) return 0;
    std::uint64_t c = p;
    for (int k = 1; k < m; ++k) {
        if (p - 1 != 0 && c > (std::uint64_t{1} << 62) / (p - 1)) return std::nullopt;
        c *= p - 1;
    }
    return c;
}

inline constexpr std::uint64_t default_enumeration_cap = 10'000'000;

// Single-consumer stream over Col^(h,m) in lexicographic order of pair ranks.
class PatternEnumerator {
public:
    PatternEnumerator(int h, int m, std::uint64_t cap = default_enumeration_cap) : h_(h), m_(m) {
        if (h < 2 || m < 1) {
            std::ostringstream os;
            os << "enumerate_patterns: need h >= 2 and m >= 1, got h=" << h << " m=" << m;
            throw DomainError(os.str());
        }
        auto c = pattern_count_exact(h, m);
        if (!c || *c > cap) {
            std::ostringstream os;
            os << "enumerate_patterns: |Col^(" << h << "," << m << ")| = " << pattern_count(h, m)
               << " exceeds the enumeration cap " << cap << "; use sample_pattern instead";
            throw CapacityError(os.str());
        }
        total_ = *c;
        npairs_ = static_cast<int>(pair_count(h));
        ranks_.assign(static_cast<std::size_t>(m), 0);
        pairs_.resize(static_cast<std::size_t>(m));
        done_ = total_ == 0;
        if (!done_) {
            for (int k = 0; k < m; ++k) ranks_[k] = (k % 2 == 0) ? 0 : 1;
        }
    }

    std::uint64_t size() const { return total_; }

    // Advances to the next pattern; the view stays valid until the next call.
    bool next_view(std::span<const Pair>& out) {
        if (done_) return false;
        if (started_ && !advance()) {
            done_ = true;
            return false;
        }
        started_ = true;
        for (int k = 0; k < m_; ++k) pairs_[k] = pair_from_rank(ranks_[k], h_);
        out = pairs_;
        return true;
    }

    std::optional<CollisionPattern> next() {
        std::span<const Pair> v;
        if (!next_view(v)) return std::nullopt;
        return CollisionPattern(h_, std::vector<Pair>(v.begin(), v.end()));
    }

private:
    int smallest_after(int prev) const { return prev == 0 ? 1 : 0; }

    bool advance() {
        for (int k = m_ - 1; k >= 0; --k) {
            int r = ranks_[k] + 1;
            if (k > 0 && r == ranks_[k - 1]) ++r;
            if (r < npairs_) {
                ranks_[k] = r;
                for (int q = k + 1; q < m_; ++q) ranks_[q] = smallest_after(ranks_[q - 1]);
                return true;
            }
        }
        return false;
    }

    int h_;
    int m_;
    int npairs_ = 0;
    std::uint64_t total_ = 0;
    std::vector<int> ranks_;
    std::vector<Pair> pairs_;
    bool started_ = false;
    bool done_ = false;
};

inline std::vector<CollisionPattern> enumerate_patterns(int h, int m,
                                                        std::uint64_t cap = default_enumeration_cap) {
    PatternEnumerator e(h, m, cap);
    std::vector<CollisionPattern> out;
    out.reserve(static_cast<std::size_t>(e.size()));
    while (auto p = e.next()) out.push_back(std::move(*p));
    return out;
}

inline CollisionPattern sample_pattern(int h, int m, Rng& rng) {
    require(h >= 1 && m >= 0, "sample_pattern: need h >= 1 and m >= 0");
    const int np = static_cast<int>(pair_count(h));
    if (m > 0 && (np == 0 || (np == 1 && m > 1))) {
        std::ostringstream os;
        os << "sample_pattern: Col^(" << h << "," << m << ") is empty";
        throw DomainError(os.str());
    }
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(m));
    int prev = -1;
    for (int k = 0; k < m; ++k) {
        int r;
        if (prev < 0) {
            r = static_cast<int>(rng.below(static_cast<std::uint64_t>(np)));
        } else {
            r = static_cast<int>(rng.below(static_cast<std::uint64_t>(np - 1)));
            if (r >= prev) ++r;
        }
        pairs.push_back(pair_from_rank(r, h));
        prev = r;
    }
    return CollisionPattern(h, std::move(pairs));
}

inline CollisionPattern sample_pattern(int h, int m, std::uint64_t seed) {
    Rng rng(seed, StreamId::patterns, 0);
    return sample_pattern(h, m, rng);
}

// Entry r-1 holds the parent of collision r; 0 means "no earlier collision".
struct ParentMap {
    std::vector<int> p_i;
    std::vector<int> p_j;
};

namespace detail {

inline void parents_into(std::span<const Pair> pairs, int h, std::vector<int>& last,
                         std::span<int> pi, std::span<int> pj) {
    last.assign(static_cast<std::size_t>(h + 1), 0);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        int r = static_cast<int>(k) + 1;
        pi[k] = last[pairs[k].i];
        pj[k] = last[pairs[k].j];
        last[pairs[k].i] = r;
        last[pairs[k].j] = r;
    }
}

} // namespace detail

inline ParentMap parent_map(const CollisionPattern& pat) {
    ParentMap pm;
    pm.p_i.resize(static_cast<std::size_t>(pat.m()));
    pm.p_j.resize(static_cast<std::size_t>(pat.m()));
    std::vector<int> last;
    detail::parents_into(pat.pairs(), pat.h(), last, pm.p_i, pm.p_j);
    return pm;
}

inline int zero_parent_count(const ParentMap& pm) {
    return static_cast<int>(std::count(pm.p_i.begin(), pm.p_i.end(), 0) +
                            std::count(pm.p_j.begin(), pm.p_j.end(), 0));
}

inline long total_jump(const ParentMap& pm) {
    long s = 0;
    for (std::size_t k = 0; k < pm.p_i.size(); ++k) {
        long r = static_cast<long>(k) + 1;
        s += (r - pm.p_i[k]) + (r - pm.p_j[k]);
    }
    return s;
}

struct GapProfile {
    std::vector<int> set_a; // collisions whose two parents coincide
    std::vector<int> set_b;
    int eta = 0;
    std::vector<int> gaps_sorted; // non-increasing
};

namespace detail {

inline void gaps_into(std::span<const int> pi, std::span<const int> pj, std::vector<int>& gaps,
                      int* n_a) {
    gaps.clear();
    int a = 0;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        int r = static_cast<int>(k) + 1;
        gaps.push_back(r - pi[k]);
        if (pi[k] == pj[k]) {
            ++a;
        } else {
            gaps.push_back(r - pj[k]);
        }
    }
    std::sort(gaps.begin(), gaps.end(), std::greater<>());
    if (n_a) *n_a = a;
}

// log of prod_{k <= ceil(m/2)} gaps_k minus ceil(m/2) log(2h); AM-GM says <= 0.
inline double amgm_log_margin(std::span<const int> gaps_sorted, int m, int h) {
    int top = (m + 1) / 2;
    double s = 0.0;
    for (int k = 0; k < top; ++k) s += std::log(static_cast<double>(gaps_sorted[k]));
    return s - top * std::log(2.0 * h);
}

} // namespace detail

inline GapProfile gap_profile(const CollisionPattern& pat) {
    ParentMap pm = parent_map(pat);
    GapProfile g;
    for (int r = 1; r <= pat.m(); ++r) {
        (pm.p_i[r - 1] == pm.p_j[r - 1] ? g.set_a : g.set_b).push_back(r);
    }
    g.eta = static_cast<int>(g.set_a.size() + 2 * g.set_b.size());
    detail::gaps_into(pm.p_i, pm.p_j, g.gaps_sorted, nullptr);
    return g;
}

inline double amgm_log_margin(const GapProfile& g, int m, int h) {
    return detail::amgm_log_margin(g.gaps_sorted, m, h);
}

inline std::string to_string(const CollisionPattern& p) {
    std::ostringstream os;
    os << '(';
    for (int r = 1; r <= p.m(); ++r) {
        if (r > 1) os << ',';
        os << '{' << p[r].i << ',' << p[r].j << '}';
    }
    os << ')';
    return os.str();
}

} // namespace shf
