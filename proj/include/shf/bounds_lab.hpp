#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diagrams.hpp"
#include "errors.hpp"
#include "graph_gff.hpp"
#include "moment_kernel.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "special_functions.hpp"
#include "stats.hpp"

namespace shf {

// ---------------------------------------------------------------- slab

class SlabConfig {
public:
    explicit SlabConfig(int m) : m_(m) { require(m >= 1, "SlabConfig: m must be >= 1"); }

    int m() const { return m_; }
    // Windows for index i = 1..m.
    double a_lo(int i) const { return 2.0 + (2.0 * i - 1.0) / (2.0 * m_) - 1.0 / (10.0 * m_); }
    double a_hi(int i) const { return 2.0 + (2.0 * i - 1.0) / (2.0 * m_) + 1.0 / (10.0 * m_); }
    double b_hi(int i) const { return 2.0 + (2.0 * i) / (2.0 * m_) - 1.0 / (5.0 * m_); }
    double a_width() const { return 1.0 / (5.0 * m_); }
    double max_gap() const { return 2.0 / (5.0 * m_); }

    bool admissible(const TimeGrid& g) const {
        if (g.m() != m_) return false;
        for (int i = 1; i <= m_; ++i) {
            double a = g.a[i - 1];
            double b = g.b[i - 1];
            if (!(a >= a_lo(i) && a <= a_hi(i) && b >= a && b <= b_hi(i))) return false;
        }
        return true;
    }

private:
    int m_;
};

struct SlabDominance {
    double max_gap = 0.0;       // max_r (b_r - a_r)
    double min_solid_gap = 0.0; // smallest non-curly time gap
    double gap_bound = 0.0;     // 2/(5m)
    double a1 = 0.0;

    // Both relations as margins; each must be >= 0.
    double margin_solid() const { return min_solid_gap - max_gap; }
    double margin_width() const { return std::min(gap_bound - max_gap, a1 / 5.0 - gap_bound); }
    bool holds() const { return margin_solid() >= 0.0 && margin_width() >= 0.0; }
};

// Pattern-specific: solid gaps are a_{r+1} - b_{p(i_{r+1})} and likewise for j.
inline SlabDominance slab_dominance(const CollisionPattern& pat, const TimeGrid& g) {
    require(pat.m() == g.m(), "slab_dominance: pattern and grid sizes differ");
    SlabDominance d;
    const int m = g.m();
    d.gap_bound = 2.0 / (5.0 * m);
    d.a1 = g.a.front();
    ParentMap pm = parent_map(pat);
    d.min_solid_gap = std::numeric_limits<double>::infinity();
    for (int r = 0; r < m; ++r) {
        d.max_gap = std::max(d.max_gap, g.b[r] - g.a[r]);
        if (r == 0) continue;
        for (int p : {pm.p_i[r], pm.p_j[r]}) {
            double t = p == 0 ? 0.0 : g.b[p - 1];
            d.min_solid_gap = std::min(d.min_solid_gap, g.a[r] - t);
        }
    }
    if (m == 1) d.min_solid_gap = g.a[0];
    return d;
}

// Pattern-free version: the consecutive gap a_{r+1} - b_r bounds every
// parent gap from below.
inline SlabDominance slab_dominance(const TimeGrid& g) {
    SlabDominance d;
    const int m = g.m();
    require(m >= 1, "slab_dominance: empty grid");
    d.gap_bound = 2.0 / (5.0 * m);
    d.a1 = g.a.front();
    d.min_solid_gap = g.a.front();
    for (int r = 0; r < m; ++r) {
        d.max_gap = std::max(d.max_gap, g.b[r] - g.a[r]);
        if (r > 0) d.min_solid_gap = std::min(d.min_solid_gap, g.a[r] - g.b[r - 1]);
    }
    return d;
}

inline TimeGrid sample_slab_grid(const SlabConfig& cfg, Rng& rng) {
    TimeGrid g;
    g.t_end = 3.0;
    for (int i = 1; i <= cfg.m(); ++i) {
        double a = rng.uniform(cfg.a_lo(i), cfg.a_hi(i));
        double b = rng.uniform(a, cfg.b_hi(i));
        g.a.push_back(a);
        g.b.push_back(b);
    }
    SlabDominance d = slab_dominance(g);
    if (!d.holds() || !cfg.admissible(g)) {
        std::ostringstream os;
        os << "sample_slab_grid: dominance failed (solid margin " << d.margin_solid()
           << ", width margin " << d.margin_width() << ")";
        throw InvariantError(os.str());
    }
    return g;
}

inline TimeGrid sample_slab_grid(const SlabConfig& cfg, std::uint64_t seed) {
    Rng rng(seed, StreamId::slab, 0);
    return sample_slab_grid(cfg, rng);
}

// ----------------------------------------------------------- tree bound

struct TreeboundResult {
    double lhs = 0.0; // log of the product-form lower bound
    double rhs = 0.0; // log of the Gaussian integral
    std::optional<std::uint64_t> tree_count;

    double margin() const { return rhs - lhs; }
    // Guaranteed part of the margin, log(9^m / tau).
    std::optional<double> tree_slack(int m) const {
        if (!tree_count) return std::nullopt;
        return 2.0 * m * std::log(3.0) - std::log(static_cast<double>(*tree_count));
    }
};

inline TreeboundResult treebound_check(const CollisionPattern& pat, const TimeGrid& grid) {
    SlabConfig cfg(grid.m());
    require(cfg.admissible(grid), "treebound_check: grid is not slab-admissible");
    const int m = grid.m();
    FeynmanGraph fg = build_feynman_graph(pat, grid, GraphMode::augmented);
    TreeboundResult r;
    r.rhs = spatial_integral_log(fg);
    double s = 2.0 * m * std::log(2.0 * std::numbers::pi) - 3.0 * m * std::log(2.0) -
               2.0 * m * std::log(3.0);
    for (int k = 0; k < m; ++k) s += std::log(grid.b[k] - grid.a[k]);
    const auto& ell = fg.ell_sorted;
    for (std::size_t k = ell.size() - static_cast<std::size_t>(m); k < ell.size(); ++k)
        s += std::log(ell[k]);
    r.lhs = s;
    if (fg.base.vertex_count() <= spanning_tree_vertex_guard)
        r.tree_count = tree_count_bound(fg.base).count;
    return r;
}

// ----------------------------------------------------------- lower chain

struct LowerChainResult {
    int h = 0;
    int m = 0;
    double theta = 0.0;
    Estimate mc;                 // slab-restricted part of 2^h E[Z^h] at m collisions
    double analytic_bound = 0.0; // explicit-factor lower bound summed over patterns
    double pattern_count = 0.0;
    double gi_window = 0.0;      // integral of G_theta over (0, 1/(5m)]
    double inv_two_log_m = std::numeric_limits<double>::infinity(); // 1/(2 log m)
    double closing_form = 0.0;   // h^m / (h 9^h m^{2h} log^m m) with unit constant
    std::uint64_t samples = 0;
    bool below_asymptotic_range = true; // m < 100 h

    double margin() const { return mc.value - analytic_bound; }
};

namespace detail {

// Upper bound on each solid half-length over the slab, and hence on the
// product in the explicit bound.
inline double lower_chain_pattern_bound(const CollisionPattern& pat, const SlabConfig& cfg) {
    const int m = pat.m();
    ParentMap pm = parent_map(pat);
    std::vector<double> ub;
    double prod_a = 1.0;
    int n_a = 0;
    auto gap_ub = [&](int r, int p) {
        return p == 0 ? cfg.a_hi(r) : cfg.a_hi(r) - cfg.a_lo(p);
    };
    for (int r = 1; r <= m; ++r) {
        int pi = pm.p_i[r - 1];
        int pj = pm.p_j[r - 1];
        if (pi == pj) {
            double l = gap_ub(r, pi) / 2.0;
            ub.push_back(l);
            prod_a *= l;
            ++n_a;
        } else {
            ub.push_back(gap_ub(r, pi));
            ub.push_back(gap_ub(r, pj));
        }
    }
    std::sort(ub.begin(), ub.end(), std::greater<>());
    const int eta = static_cast<int>(ub.size());
    double prod_top = 1.0;
    for (int k = 0; k < eta - m; ++k) prod_top *= ub[k];
    const double wg = 1.0; // window and G factors are applied by the caller
    return wg * std::pow(2.0 / 9.0, m) * std::pow(4.0, -n_a) / (prod_a * prod_top);
}

} // namespace detail

inline LowerChainResult lower_chain_evaluate(int h, int m, double theta, std::uint64_t samples,
                                             std::uint64_t seed, ParallelOptions par = {},
                                             std::uint64_t pattern_cap = 100000) {
    require(h >= 2, "lower_chain_evaluate: h must be >= 2");
    require(m >= 1, "lower_chain_evaluate: m must be >= 1");
    require(samples >= 2, "lower_chain_evaluate: need at least two samples");
    DickmanParams dp = dickman(theta);
    dp.validate();
    SlabConfig cfg(m);
    LowerChainResult res;
    res.h = h;
    res.m = m;
    res.theta = theta;
    res.samples = samples;
    res.pattern_count = pattern_count(h, m);
    res.below_asymptotic_range = m < 100 * h;
    res.gi_window = g_theta_integral(dp, 1.0 / (5.0 * m));
    if (m > 1) res.inv_two_log_m = 1.0 / (2.0 * std::log(static_cast<double>(m)));
    if (m > 1)
        res.closing_form = std::exp(m * std::log(h) - std::log(h) - 2.0 * h * std::log(3.0) -
                                    2.0 * h * std::log(m) - m * std::log(std::log(m)));
    if (res.pattern_count == 0.0) {
        res.mc = {0.0, 0.0};
        return res;
    }
    auto patterns = enumerate_patterns(h, m, pattern_cap);
    double bound = 0.0;
    for (const auto& p : patterns) bound += detail::lower_chain_pattern_bound(p, cfg);
    res.analytic_bound = bound * std::pow(res.gi_window / (5.0 * m), m);

    const std::size_t bs = par.batch_size;
    const std::size_t nb = batch_count(samples, bs);
    auto parts = run_batches(nb, par.workers, [&](std::size_t bi) {
        Rng rng(seed, StreamId::lower_chain, (static_cast<std::uint64_t>(h) << 48) +
                                                 (static_cast<std::uint64_t>(m) << 32) + bi);
        LogMeanAccumulator acc;
        GapGrid g;
        g.resize(m);
        std::vector<GapMixture> mix;
        std::size_t len = batch_length(samples, bs, bi);
        for (std::size_t k = 0; k < len; ++k) {
            double lq = 0.0;
            for (int i = 1; i <= m; ++i) {
                double a = rng.uniform(cfg.a_lo(i), cfg.a_hi(i));
                GapMixture gm(cfg.b_hi(i) - a);
                double lu = gm.sample_log(rng);
                g.a[i - 1] = a;
                g.log_u[i - 1] = lu;
                g.u[i - 1] = std::exp(lu);
                lq += std::log(5.0 * m) + gm.log_density_at_log(lu);
            }
            double lg = log_g_product(g, dp);
            double total = -std::numeric_limits<double>::infinity();
            for (const auto& p : patterns)
                total = detail::log_add(total, integrand_parts_with(p, g, lg).log_value());
            acc.add(total - lq);
        }
        return acc;
    });
    LogMeanAccumulator acc;
    for (auto& p : parts) acc.merge(p);
    res.mc = acc.estimate();
    return res;
}

// ------------------------------------------------ compare test functions

struct CompareResult {
    int h = 0;
    double delta = 0.0;
    Estimate box;      // integral of K^{(h)} over the box [-delta, delta]^{2h}
    Estimate gaussian; // integral of K^{(h)} against g_1^{(x) h}, i.e. 2^h E[Z^h]
    double multiplier = 0.0; // delta^{2h} e^{-2h^2}

    double lhs() const { return box.value; }
    double rhs() const { return multiplier * gaussian.value; }
    double sigma() const {
        return std::hypot(box.std_error, multiplier * gaussian.std_error);
    }
};

inline CompareResult compare_test_functions_check(int h, double delta, double theta, int m_max,
                                                  const MonteCarloOptions& opt) {
    require(h == 2 || h == 3, "compare_test_functions_check: h must be 2 or 3");
    require(delta > 0.0 && delta < 1.0, "compare_test_functions_check: delta must lie in (0, 1)");
    require(m_max >= 0, "compare_test_functions_check: m_max must be >= 0");
    DickmanParams dp = dickman(theta);
    dp.validate();
    CompareResult res;
    res.h = h;
    res.delta = delta;
    res.multiplier = std::exp(2.0 * h * std::log(delta) - 2.0 * h * h);
    const double vol = std::pow(2.0 * delta, 2 * h);
    double box = vol; // the m = 0 term of the kernel is 1
    double var = 0.0;
    for (int m = 1; m <= m_max; ++m) {
        auto plan = detail::plan_series(h, m, opt);
        SimplexTimeSampler sampler(m, 0.0, 1.0);
        auto term = detail::run_series_term(
            plan, opt, StreamId::compare, 1,
            [&](const CollisionPattern& p, Rng& rng, std::vector<double>& out) {
                SimplexTimeSampler local = sampler;
                GapGrid grid;
                double lq = local.sample(rng, grid);
                std::vector<Point> z(static_cast<std::size_t>(h));
                for (auto& zi : z) zi = {rng.uniform(-delta, delta), rng.uniform(-delta, delta)};
                out[0] = integrand_parts(p, grid, dp, &z).log_value() - lq;
            });
        box += vol * term[0].value;
        var += vol * vol * term[0].std_error * term[0].std_error;
    }
    res.box = {box, std::sqrt(var)};
    MomentEstimate mg = moment_gaussian(h, theta, m_max, opt);
    const double scale = std::ldexp(1.0, h);
    res.gaussian = {scale * mg.value, scale * mg.std_error};
    return res;
}

// ------------------------------------------------------ nested integral

// Integral over [0,1]^{m+h-1} of prod_{i=1}^m 1/(x_i + ... + x_{i+h-1}).
// Each new coordinate y is drawn with density proportional to
// y^{-1/2}/(s + y) given the sum s of the other terms in its first
// denominator.
inline Estimate nested_denominator_integral(int h, int m, std::uint64_t samples,
                                            std::uint64_t seed, ParallelOptions par = {}) {
    require(h >= 2, "nested_denominator_integral: h must be >= 2");
    require(m >= 1, "nested_denominator_integral: m must be >= 1");
    require(samples >= 2, "nested_denominator_integral: need at least two samples");
    const std::size_t bs = par.batch_size;
    const std::size_t nb = batch_count(samples, bs);
    auto parts = run_batches(nb, par.workers, [&](std::size_t bi) {
        Rng rng(seed, StreamId::nested, (static_cast<std::uint64_t>(h) << 48) +
                                            (static_cast<std::uint64_t>(m) << 32) + bi);
        LogMeanAccumulator acc;
        std::vector<double> x(static_cast<std::size_t>(m + h - 1));
        std::size_t len = batch_length(samples, bs, bi);
        for (std::size_t k = 0; k < len; ++k) {
            double lw = 0.0;
            if (h == 2) {
                double u = rng.uniform();
                x[0] = u * u;
                lw += std::log(2.0 * u);
            } else {
                for (int i = 0; i < h - 1; ++i) x[i] = rng.uniform();
            }
            double s = 0.0;
            for (int i = 0; i < h - 1; ++i) s += x[i];
            for (int i = 0; i < m; ++i) {
                double rs = std::sqrt(s);
                double at = std::atan(1.0 / rs);
                double t = std::tan(rng.uniform() * at);
                double y = s * t * t;
                x[i + h - 1] = y;
                lw += std::log(2.0 * at / rs) + 0.5 * std::log(y);
                s += y - x[i];
                if (s < 0.0) s = 0.0;
                if (h > 2 && i + 1 < m) {
                    // recompute to avoid drift in the running window sum
                    s = 0.0;
                    for (int j = i + 1; j < i + h; ++j) s += x[j];
                } else if (h == 2) {
                    s = y;
                }
            }
            acc.add(lw);
        }
        return acc;
    });
    LogMeanAccumulator acc;
    for (auto& p : parts) acc.merge(p);
    return acc.estimate();
}

struct NestedGrowth {
    int h = 0;
    std::vector<int> ms;
    std::vector<Estimate> values;
    double slope = 0.0;           // least-squares slope of log value against m
    double slope_std_error = 0.0; // delta-method error from the estimates
    std::vector<double> increments; // log v(m+1) - log v(m)
    std::vector<double> increment_std_errors;
};

inline NestedGrowth nested_growth(int h, int m_lo, int m_hi, std::uint64_t samples,
                                  std::uint64_t seed, ParallelOptions par = {}) {
    require(m_lo >= 1 && m_hi > m_lo, "nested_growth: need 1 <= m_lo < m_hi");
    NestedGrowth g;
    g.h = h;
    std::vector<double> lv;
    std::vector<double> lse;
    for (int m = m_lo; m <= m_hi; ++m) {
        Estimate e = nested_denominator_integral(h, m, samples, seed, par);
        g.ms.push_back(m);
        g.values.push_back(e);
        lv.push_back(std::log(e.value));
        lse.push_back(e.std_error / e.value);
    }
    const double n = static_cast<double>(lv.size());
    double mbar = 0.0;
    double lbar = 0.0;
    for (std::size_t k = 0; k < lv.size(); ++k) {
        mbar += g.ms[k] / n;
        lbar += lv[k] / n;
    }
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t k = 0; k < lv.size(); ++k) {
        sxx += (g.ms[k] - mbar) * (g.ms[k] - mbar);
        sxy += (g.ms[k] - mbar) * (lv[k] - lbar);
    }
    g.slope = sxy / sxx;
    double var = 0.0;
    for (std::size_t k = 0; k < lv.size(); ++k) {
        double c = (g.ms[k] - mbar) / sxx;
        var += c * c * lse[k] * lse[k];
    }
    g.slope_std_error = std::sqrt(var);
    for (std::size_t k = 0; k + 1 < lv.size(); ++k) {
        g.increments.push_back(lv[k + 1] - lv[k]);
        g.increment_std_errors.push_back(std::hypot(lse[k], lse[k + 1]));
    }
    return g;
}

// ---------------------------------------------------------------- tail

struct TailParams {
    double c_upper = 1.0;  // E[X^h] <= exp(exp(c h^2))
    double c0_lower = 1.0; // E[X^h] >= exp(exp(c0 h))
    double log_log_z = 0.0;

    static TailParams from_z(double z, double c = 1.0, double c0 = 1.0) {
        require(z > std::exp(1.0), "TailParams: z must exceed e");
        return {c, c0, std::log(std::log(z))};
    }

    void validate() const {
        require(c_upper > 0.0 && std::isfinite(c_upper), "TailParams: c must be positive");
        require(c0_lower > 0.0 && std::isfinite(c0_lower), "TailParams: c0 must be positive");
        require(std::isfinite(log_log_z), "TailParams: log log z must be finite");
        require(log_log_z > 1.0, "TailParams: z too small (need log log z > 1)");
    }
};

struct TailEnvelope {
    double L = 0.0;
    double M = 0.0;
    long long h = 0;            // floor(L M) - 10
    long long markov_h = 0;     // floor(sqrt(L / c)) used by the upper bound
    double log_log_w = 0.0;     // c L^2 M^2
    double upper_exponent = 0.0; // log z - log z sqrt(L / c)
    double upper_log_magnitude = 0.0; // log |upper_exponent|
    double lower_log_magnitude = 0.0; // log of L M e^{c L^2 M^2}
    double lower_exponent = 0.0;      // -L M e^{c L^2 M^2}, may be -inf in doubles
    double ordering_margin = 0.0;     // >= 0 iff lower <= upper
    double i3_neg_log = 0.0;          // -log of the I_3 bound h w^{h-LM+1}/(LM-h-1), may be inf
    double i3_exponent = 0.0;         // h - LM + 1, at most -9
    double pointwise_margin = 0.0;    // sqrt(log log w / c) - L M
    double moment_margin = 0.0;       // c0 h - log(2 (LM - 10) e^L)

    bool i3_bounded() const { return i3_neg_log >= 0.0; }
};

inline TailEnvelope tail_envelope(const TailParams& p) {
    p.validate();
    TailEnvelope e;
    const double c = p.c_upper;
    e.L = p.log_log_z;
    e.M = std::log(e.L);
    const double lm = e.L * e.M;
    e.h = static_cast<long long>(std::floor(lm)) - 10;
    if (e.h < 1) {
        std::ostringstream os;
        os << "tail_envelope: z too small, h = floor(L M) - 10 = " << e.h << " at log log z = " << e.L;
        throw DomainError(os.str());
    }
    e.markov_h = static_cast<long long>(std::floor(std::sqrt(e.L / c)));
    e.log_log_w = c * lm * lm;
    const double log_z = std::exp(e.L);
    e.upper_exponent = log_z - log_z * std::sqrt(e.L / c);
    e.lower_log_magnitude = std::log(lm) + e.log_log_w;
    e.lower_exponent = -std::exp(e.lower_log_magnitude);
    e.upper_log_magnitude = e.L + std::log(std::abs(std::sqrt(e.L / c) - 1.0));
    e.ordering_margin = e.upper_exponent >= 0.0 ? std::numeric_limits<double>::infinity()
                                                : e.lower_log_magnitude - e.upper_log_magnitude;
    const double hd = static_cast<double>(e.h);
    e.i3_exponent = hd - lm + 1.0;
    const double gap = lm - hd - 1.0; // > 0
    // -log I3 = gap * log w - log h + log gap, with log w = exp(log log w).
    const double lw = std::exp(e.log_log_w);
    e.i3_neg_log = gap * lw - std::log(hd) + std::log(gap);
    e.pointwise_margin = std::sqrt(e.log_log_w / c) - lm;
    e.moment_margin = p.c0_lower * hd - (std::log(2.0 * (lm - 10.0)) + e.L);
    return e;
}

// --------------------------------------------------------------- ledger

struct LedgerRow {
    std::string check_name;
    std::string params;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0; // oriented so that >= 0 is the claimed direction
    double sigma = 0.0;
    bool asserted = true;

    bool passes() const { return !asserted || margin >= -3.0 * sigma; }
};

struct VerifyOptions {
    int h = 3;
    int m_max = 4;
    double theta = 0.0;
    std::uint64_t seed = 1;
    std::uint64_t grid_samples = 2000;  // slab grids per m
    std::uint64_t chain_samples = 4000; // lower-chain MC samples per m
    std::uint64_t kernel_samples = 20000;
    std::uint64_t nested_samples = 200000;
    std::uint64_t pattern_cap = 20000;
    ParallelOptions parallel{};
};

namespace detail {
inline std::string kv(std::initializer_list<std::pair<const char*, double>> items) {
    std::ostringstream os;
    bool first = true;
    for (auto& [k, v] : items) {
        if (!first) os << ';';
        first = false;
        os << k << '=' << v;
    }
    return os.str();
}
} // namespace detail

inline std::vector<LedgerRow> verify_ledger(const VerifyOptions& o) {
    require(o.h >= 2, "verify: h must be >= 2");
    require(o.m_max >= 1, "verify: m_max must be >= 1");
    std::vector<LedgerRow> rows;
    const double H = o.h;
    Rng rng(o.seed, StreamId::slab, 0);

    for (int m = 1; m <= o.m_max; ++m) {
        const double M = m;
        SlabConfig cfg(m);
        double pc = pattern_count(o.h, m);
        if (pc == 0.0) continue;
        auto pats = pc <= static_cast<double>(o.pattern_cap) ? enumerate_patterns(o.h, m, o.pattern_cap)
                                                             : std::vector<CollisionPattern>{};
        double dom_solid = std::numeric_limits<double>::infinity();
        double dom_width = std::numeric_limits<double>::infinity();
        double tb_margin = std::numeric_limits<double>::infinity();
        double tb_lhs = 0.0;
        double tb_rhs = 0.0;
        double slack_margin = std::numeric_limits<double>::infinity();
        for (std::uint64_t k = 0; k < o.grid_samples; ++k) {
            TimeGrid g = sample_slab_grid(cfg, rng);
            CollisionPattern p = pats.empty() ? sample_pattern(o.h, m, rng)
                                              : pats[rng.below(pats.size())];
            auto checks = pats.empty() ? std::vector<CollisionPattern>{p} : pats;
            for (const auto& q : checks) {
                SlabDominance d = slab_dominance(q, g);
                dom_solid = std::min(dom_solid, d.margin_solid());
                dom_width = std::min(dom_width, d.margin_width());
            }
            TreeboundResult tb = treebound_check(p, g);
            if (tb.margin() < tb_margin) {
                tb_margin = tb.margin();
                tb_lhs = tb.lhs;
                tb_rhs = tb.rhs;
            }
            if (auto sl = tb.tree_slack(m))
                slack_margin = std::min(slack_margin, tb.margin() - *sl);
        }
        auto n = static_cast<double>(o.grid_samples);
        rows.push_back({"slab_dominance_solid", detail::kv({{"h", H}, {"m", M}, {"grids", n}}),
                        0.0, dom_solid, dom_solid, 0.0, true});
        rows.push_back({"slab_dominance_width", detail::kv({{"h", H}, {"m", M}, {"grids", n}}),
                        0.0, dom_width, dom_width, 0.0, true});
        rows.push_back({"treebound", detail::kv({{"h", H}, {"m", M}, {"grids", n}}), tb_lhs, tb_rhs,
                        tb_margin, 0.0, true});
        if (std::isfinite(slack_margin))
            rows.push_back({"treebound_tree_slack", detail::kv({{"h", H}, {"m", M}, {"grids", n}}),
                            0.0, slack_margin, slack_margin, 1e-9 * (1.0 + std::abs(tb_rhs)), true});

        if (!pats.empty()) {
            double worst = -std::numeric_limits<double>::infinity();
            for (const auto& p : pats) worst = std::max(worst, amgm_log_margin(gap_profile(p), m, o.h));
            rows.push_back({"amgm_short", detail::kv({{"h", H}, {"m", M}, {"patterns", pc}}), worst,
                            0.0, -worst, 0.0, true});
            rows.push_back({"pattern_count", detail::kv({{"h", H}, {"m", M}}),
                            static_cast<double>(pats.size()), pc,
                            static_cast<double>(pats.size()) == pc ? 0.0 : -1.0, 0.0, true});
            LowerChainResult lc = lower_chain_evaluate(o.h, m, o.theta, o.chain_samples,
                                                       o.seed, o.parallel, o.pattern_cap);
            rows.push_back({"lower_chain", detail::kv({{"h", H}, {"m", M}, {"theta", o.theta},
                                                       {"samples", static_cast<double>(o.chain_samples)}}),
                            lc.mc.value, lc.analytic_bound, lc.margin(), lc.mc.std_error, true});
            if (m > 1)
                rows.push_back({"boundbound_small_m", detail::kv({{"m", M}, {"theta", o.theta}}),
                                lc.gi_window, lc.inv_two_log_m, lc.gi_window - lc.inv_two_log_m,
                                0.0, false});
        }
    }
    for (double m : {1e2, 1e3, 1e4}) {
        double gi = g_theta_integral(dickman(o.theta), 1.0 / (5.0 * m));
        double b = 1.0 / (2.0 * std::log(m));
        rows.push_back({"boundbound", detail::kv({{"m", m}, {"theta", o.theta}}), gi, b, gi - b,
                        0.0, true});
    }

    // Exact alpha-monotonicity of the boundary-mode integrand.
    {
        Rng r2(o.seed, StreamId::kernel, 1ull << 60);
        DickmanParams dp = dickman(o.theta);
        double worst = std::numeric_limits<double>::infinity();
        for (std::uint64_t k = 0; k < o.grid_samples; ++k) {
            int m = 1 + static_cast<int>(r2.below(static_cast<std::uint64_t>(o.m_max)));
            if (pattern_count(o.h, m) == 0.0) m = 1;
            CollisionPattern p = sample_pattern(o.h, m, r2);
            SimplexTimeSampler s(m, 0.0, 1.0);
            GapGrid g;
            s.sample(r2, g);
            std::vector<Point> z(static_cast<std::size_t>(o.h));
            for (auto& zi : z) zi = {r2.normal(), r2.normal()};
            IntegrandParts ip = integrand_parts(p, g, dp, &z);
            double prev = ip.log_value(0.5);
            for (double a : {1.0, 2.0}) {
                double cur = ip.log_value(a);
                worst = std::min(worst, prev - cur);
                prev = cur;
            }
        }
        rows.push_back({"alpha_monotone_integrand",
                        detail::kv({{"h", H}, {"graphs", static_cast<double>(o.grid_samples)}}), 0.0,
                        worst, worst, 0.0, true});
    }

    for (int hc : {2, 3}) {
        MonteCarloOptions mo;
        mo.samples = o.kernel_samples;
        mo.seed = o.seed;
        mo.parallel = o.parallel;
        CompareResult cr = compare_test_functions_check(hc, 0.5, o.theta, std::min(o.m_max, 2), mo);
        rows.push_back({"compare_test_functions",
                        detail::kv({{"h", static_cast<double>(hc)}, {"delta", 0.5}, {"theta", o.theta},
                                    {"m_max", static_cast<double>(std::min(o.m_max, 2))}}),
                        cr.lhs(), cr.rhs(), cr.lhs() - cr.rhs(), cr.sigma(), false});
    }

    {
        Estimate e = nested_denominator_integral(2, 1, o.nested_samples, o.seed, o.parallel);
        double ref = 2.0 * std::log(2.0);
        rows.push_back({"nested_h2_m1", detail::kv({{"samples", static_cast<double>(o.nested_samples)}}),
                        e.value, ref, -std::abs(e.value - ref), e.std_error, true});
        NestedGrowth g = nested_growth(2, 2, 10, o.nested_samples / 4, o.seed + 1, o.parallel);
        std::size_t worst = 0;
        for (std::size_t k = 1; k < g.increments.size(); ++k)
            if (g.increments[k] - 3.0 * g.increment_std_errors[k] <
                g.increments[worst] - 3.0 * g.increment_std_errors[worst])
                worst = k;
        rows.push_back({"nested_h2_increasing",
                        detail::kv({{"m", static_cast<double>(g.ms[worst])}}), g.increments[worst], 0.0,
                        g.increments[worst], g.increment_std_errors[worst], true});
        rows.push_back({"nested_h2_slope", detail::kv({{"m_lo", 2.0}, {"m_hi", 10.0}}), g.slope, 0.0,
                        g.slope, g.slope_std_error, true});
    }

    for (double L = 10.0; L <= 200.0; L += 10.0) {
        TailEnvelope t = tail_envelope({1.0, 1.0, L});
        rows.push_back({"tail_ordering_log_magnitude", detail::kv({{"loglogz", L}}),
                        t.lower_log_magnitude, t.upper_log_magnitude, t.ordering_margin, 0.0, true});
        rows.push_back({"tail_i3", detail::kv({{"loglogz", L}}), -t.i3_neg_log, 0.0, t.i3_neg_log,
                        0.0, true});
        rows.push_back({"tail_pointwise", detail::kv({{"loglogz", L}}), t.L * t.M,
                        std::sqrt(t.log_log_w), t.pointwise_margin,
                        4.0 * std::numeric_limits<double>::epsilon() * t.L * t.M, true});
    }
    return rows;
}

} // namespace shf
