#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "diagrams.hpp"
#include "errors.hpp"
#include "graph_gff.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "special_functions.hpp"
#include "stats.hpp"

namespace shf {

struct TimeGrid {
    double t_end = 1.0;
    std::vector<double> a;
    std::vector<double> b;

    int m() const { return static_cast<int>(a.size()); }

    // 0 < a_1 <= b_1 < a_2 <= ... <= b_m <= t_end.  Equal a_r, b_r is
    // admitted so that callers can ask for the degenerate integrand.
    void validate() const {
        require(a.size() == b.size(), "TimeGrid: a and b differ in length");
        for (std::size_t r = 0; r < a.size(); ++r) {
            bool ok = a[r] <= b[r] && (r == 0 ? a[r] > 0.0 : a[r] > b[r - 1]);
            if (!ok) {
                std::ostringstream os;
                os << "TimeGrid: times are not interleaved at r=" << r + 1;
                throw DomainError(os.str());
            }
        }
        if (!a.empty()) require(b.back() <= t_end, "TimeGrid: b_m exceeds t_end");
    }
};

enum class GraphMode { augmented, boundary };

struct VertexRole {
    enum class Kind { origin, walker, a, b } kind = Kind::origin;
    int index = 0; // walker label or collision index, from 1
};

struct FeynmanGraph {
    WeightedGraph base{1};
    GraphMode mode = GraphMode::augmented;
    int h = 0;
    int m = 0;
    std::vector<VertexRole> roles;
    std::vector<std::pair<int, int>> curly_edges;
    std::vector<double> ell_sorted; // non-increasing
    std::vector<int> pinned;

    int vertex_a(int r) const { return mode == GraphMode::augmented ? 2 * r - 1 : h + 2 * (r - 1); }
    int vertex_b(int r) const { return vertex_a(r) + 1; }
};

namespace detail {

struct ParentTimes {
    std::vector<double> gap_i; // a_r - (time of parent of i_r)
    std::vector<double> gap_j;
};

inline ParentTimes parent_gaps(const ParentMap& pm, const TimeGrid& g) {
    ParentTimes pt;
    const int m = g.m();
    pt.gap_i.resize(static_cast<std::size_t>(m));
    pt.gap_j.resize(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
        double ti = pm.p_i[k] == 0 ? 0.0 : g.b[pm.p_i[k] - 1];
        double tj = pm.p_j[k] == 0 ? 0.0 : g.b[pm.p_j[k] - 1];
        pt.gap_i[k] = g.a[k] - ti;
        pt.gap_j[k] = g.a[k] - tj;
    }
    return pt;
}

} // namespace detail

inline FeynmanGraph build_feynman_graph(const CollisionPattern& pat, const TimeGrid& grid,
                                        GraphMode mode) {
    if (pat.m() != grid.m()) {
        std::ostringstream os;
        os << "build_feynman_graph: pattern has m=" << pat.m() << " but the grid has m=" << grid.m();
        throw DomainError(os.str());
    }
    grid.validate();
    const int m = pat.m();
    const int h = pat.h();
    for (int r = 0; r < m; ++r) {
        require(grid.b[r] > grid.a[r], "build_feynman_graph: coincident times a_r = b_r");
    }
    FeynmanGraph fg;
    fg.mode = mode;
    fg.h = h;
    fg.m = m;
    const int n = mode == GraphMode::augmented ? 2 * m + 1 : h + 2 * m;
    fg.roles.resize(static_cast<std::size_t>(n));
    if (mode == GraphMode::augmented) {
        fg.roles[0] = {VertexRole::Kind::origin, 0};
        fg.pinned = {0};
    } else {
        for (int k = 1; k <= h; ++k) {
            fg.roles[k - 1] = {VertexRole::Kind::walker, k};
            fg.pinned.push_back(k - 1);
        }
    }
    ParentMap pm = parent_map(pat);
    auto gaps = detail::parent_gaps(pm, grid);
    std::vector<Edge> edges;
    auto parent_vertex = [&](int parent, int walker) {
        if (parent > 0) return fg.vertex_b(parent);
        return mode == GraphMode::augmented ? 0 : walker - 1;
    };
    for (int r = 1; r <= m; ++r) {
        int va = fg.vertex_a(r);
        int vb = fg.vertex_b(r);
        fg.roles[va] = {VertexRole::Kind::a, r};
        fg.roles[vb] = {VertexRole::Kind::b, r};
        double u = grid.b[r - 1] - grid.a[r - 1];
        edges.push_back({va, vb, 4.0 / u});
        fg.curly_edges.emplace_back(va, vb);
        double gi = gaps.gap_i[r - 1];
        double gj = gaps.gap_j[r - 1];
        require(gi > 0.0 && gj > 0.0, "build_feynman_graph: collision precedes its parent");
        edges.push_back({va, parent_vertex(pm.p_i[r - 1], pat[r].i), 2.0 / gi});
        edges.push_back({va, parent_vertex(pm.p_j[r - 1], pat[r].j), 2.0 / gj});
        if (pm.p_i[r - 1] == pm.p_j[r - 1]) {
            fg.ell_sorted.push_back(gi / 2.0);
        } else {
            fg.ell_sorted.push_back(gi);
            fg.ell_sorted.push_back(gj);
        }
    }
    std::sort(fg.ell_sorted.begin(), fg.ell_sorted.end(), std::greater<>());
    fg.base = WeightedGraph(n, edges, fg.pinned);
    return fg;
}

// The spatial Gaussian integral split as log Z0 - alpha^2 E / 2, where the
// boundary data are alpha * z.  In augmented mode E = 0.
inline PinnedGaussian spatial_decomposition(const FeynmanGraph& fg,
                                            const std::vector<Point>* boundary_values) {
    if (fg.mode == GraphMode::augmented) {
        require(boundary_values == nullptr || boundary_values->empty(),
                "spatial_integral_log: augmented graphs take no boundary values");
        return {gff_log_partition(fg.base, fg.pinned, false).log_partition, 0.0};
    }
    if (boundary_values == nullptr || static_cast<int>(boundary_values->size()) != fg.h) {
        throw DomainError("spatial_integral_log: boundary mode needs one point per walker");
    }
    BoundaryValues bv;
    for (int k = 0; k < fg.h; ++k) bv[k] = (*boundary_values)[k];
    return pinned_gaussian(fg.base, bv);
}

inline double spatial_integral_log(const FeynmanGraph& fg,
                                   const std::vector<Point>* boundary_values = nullptr) {
    return spatial_decomposition(fg, boundary_values).log_value(1.0);
}

inline GapGrid to_gap_grid(const TimeGrid& g) {
    g.validate();
    GapGrid out;
    out.resize(g.m());
    for (int r = 0; r < g.m(); ++r) {
        out.a[r] = g.a[r];
        out.u[r] = g.b[r] - g.a[r];
        out.log_u[r] = std::log(out.u[r]);
    }
    return out;
}

namespace detail {

// The Gaussian form of the diagram in coordinates (phi_{a_r}, d_r), with
// phi_{b_r} = phi_{a_r} + sqrt(u_r) d_r.  The curly edge becomes 4 d_r^2 and
// nothing blows up as u_r -> 0; the Jacobian prod u_r is accounted for by
// the caller.
struct GapForm {
    struct Term {
        double c;
        std::array<std::pair<int, double>, 3> v; // (index, coefficient), index < 0 unused
    };
    int n_free = 0;
    int n_pinned = 0;
    std::vector<Term> terms;
    Eigen::MatrixXd Q; // over free then pinned indices

    double quad(const Term& t, const Eigen::VectorXd& y) const {
        double s = 0.0;
        for (auto [i, c] : t.v)
            if (i >= 0) s += c * y[i];
        return t.c * s * s;
    }
};

inline GapForm gap_form(const CollisionPattern& pat, const GapGrid& g, GraphMode mode) {
    const int m = pat.m();
    const int h = pat.h();
    GapForm f;
    f.n_free = 2 * m;
    f.n_pinned = mode == GraphMode::augmented ? 1 : h;
    const int n = f.n_free + f.n_pinned;
    f.Q = Eigen::MatrixXd::Zero(n, n);
    ParentMap pm = parent_map(pat);
    auto add = [&](double c, std::array<std::pair<int, double>, 3> v) {
        f.terms.push_back({c, v});
        for (auto [i, ci] : v) {
            if (i < 0) continue;
            for (auto [j, cj] : v)
                if (j >= 0) f.Q(i, j) += c * ci * cj;
        }
    };
    for (int r = 0; r < m; ++r) {
        add(1.0, {{{m + r, 2.0}, {-1, 0.0}, {-1, 0.0}}});
        for (int side = 0; side < 2; ++side) {
            int parent = side == 0 ? pm.p_i[r] : pm.p_j[r];
            int walker = side == 0 ? pat[r + 1].i : pat[r + 1].j;
            if (parent == 0) {
                int pin = 2 * m + (mode == GraphMode::augmented ? 0 : walker - 1);
                double gap = g.a[r];
                require(gap > 0.0, "integrand: collision at time zero");
                add(2.0 / gap, {{{r, 1.0}, {pin, -1.0}, {-1, 0.0}}});
            } else {
                int p = parent - 1;
                double gap = (g.a[r] - g.a[p]) - g.u[p];
                require(gap > 0.0, "integrand: collision precedes its parent");
                add(2.0 / gap, {{{r, 1.0}, {p, -1.0}, {m + p, -std::sqrt(g.u[p])}}});
            }
        }
    }
    return f;
}

} // namespace detail

// Everything in the log integrand except the spatial integral and G factors,
// with the 1/u_r of the streak weights cancelled against the Jacobian.
inline double log_prefactor_gaps(const CollisionPattern& pat, const GapGrid& g) {
    const int m = pat.m();
    ParentMap pm = parent_map(pat);
    const double lpi = std::log(std::numbers::pi);
    double s = m * std::log(2.0 * std::numbers::pi) - 2.0 * m * lpi;
    auto parent_time = [&](int p) { return p == 0 ? 0.0 : g.a[p - 1] + g.u[p - 1]; };
    for (int k = 0; k < m; ++k) {
        s += std::log(2.0) - lpi;
        s -= std::log(g.a[k] - parent_time(pm.p_i[k])) + std::log(g.a[k] - parent_time(pm.p_j[k]));
    }
    return s;
}

struct IntegrandParts {
    double log_rest = 0.0; // everything at alpha = 0
    double energy = 0.0;   // Dirichlet energy of the harmonic extension
    bool degenerate = false;

    double log_value(double alpha = 1.0) const {
        if (degenerate) return -std::numeric_limits<double>::infinity();
        return log_rest - 0.5 * alpha * alpha * energy;
    }
};

inline double log_g_product(const GapGrid& g, const DickmanParams& dp) {
    double lg = 0.0;
    for (int r = 0; r < g.m(); ++r) lg += log_g_theta_at_log(dp, g.log_u[r]);
    return lg;
}

// As below, with sum_r log G_theta(u_r) supplied by the caller so that it
// can be shared between patterns.
inline IntegrandParts integrand_parts_with(const CollisionPattern& pat, const GapGrid& g,
                                           double log_g_sum,
                                           const std::vector<Point>* boundary_values = nullptr) {
    IntegrandParts out;
    const int m = pat.m();
    if (m == 0) return out;
    require(m == g.m(), "integrand_log: pattern and grid sizes differ");
    for (int r = 0; r < m; ++r) {
        if (g.log_u[r] == -std::numeric_limits<double>::infinity()) {
            out.degenerate = true;
            return out;
        }
    }
    GraphMode mode = boundary_values ? GraphMode::boundary : GraphMode::augmented;
    if (mode == GraphMode::boundary)
        require(static_cast<int>(boundary_values->size()) == pat.h(),
                "integrand_log: boundary mode needs one point per walker");
    detail::GapForm f = detail::gap_form(pat, g, mode);
    const int nf = f.n_free;
    Eigen::MatrixXd M = f.Q.topLeftCorner(nf, nf);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    double logdet = detail::log_det_spd(M, "integrand_log");
    out.log_rest = log_prefactor_gaps(pat, g) + log_g_sum + nf * std::log(2.0 * std::numbers::pi) - logdet;
    if (mode == GraphMode::boundary) {
        Eigen::MatrixXd B = f.Q.topRightCorner(nf, f.n_pinned);
        Eigen::VectorXd y(nf + f.n_pinned);
        double e = 0.0;
        for (int coord = 0; coord < 2; ++coord) {
            Eigen::VectorXd z(f.n_pinned);
            for (int k = 0; k < f.n_pinned; ++k)
                z[k] = coord == 0 ? (*boundary_values)[k].x : (*boundary_values)[k].y;
            Eigen::VectorXd rhs = -B * z;
            Eigen::VectorXd x = ldlt.solve(rhs);
            x += ldlt.solve(rhs - M * x);
            y << x, z;
            for (const auto& t : f.terms) e += f.quad(t, y);
        }
        out.energy = e;
    }
    return out;
}

inline IntegrandParts integrand_parts(const CollisionPattern& pat, const GapGrid& g,
                                      const DickmanParams& dp,
                                      const std::vector<Point>* boundary_values = nullptr) {
    if (pat.m() > 0 && pat.m() == g.m()) {
        for (int r = 0; r < g.m(); ++r)
            if (g.log_u[r] == -std::numeric_limits<double>::infinity()) return {0.0, 0.0, true};
        return integrand_parts_with(pat, g, log_g_product(g, dp), boundary_values);
    }
    return integrand_parts_with(pat, g, 0.0, boundary_values);
}

inline IntegrandParts integrand_parts(const CollisionPattern& pat, const TimeGrid& grid,
                                      const DickmanParams& dp,
                                      const std::vector<Point>* boundary_values = nullptr) {
    return integrand_parts(pat, to_gap_grid(grid), dp, boundary_values);
}

// log of (2 pi)^m * prefactors * prod G_theta(b_r - a_r) * spatial integral;
// -inf when some b_r = a_r.
inline double integrand_log(const CollisionPattern& pat, const TimeGrid& grid, double theta,
                            const std::vector<Point>* boundary_values = nullptr) {
    return integrand_parts(pat, grid, dickman(theta), boundary_values).log_value(1.0);
}

// The same integrand assembled from the Feynman graph itself, for times
// that are well separated.
inline double integrand_log_from_graph(const CollisionPattern& pat, const TimeGrid& grid,
                                       double theta,
                                       const std::vector<Point>* boundary_values = nullptr) {
    GraphMode mode = boundary_values ? GraphMode::boundary : GraphMode::augmented;
    FeynmanGraph fg = build_feynman_graph(pat, grid, mode);
    GapGrid g = to_gap_grid(grid);
    DickmanParams dp = dickman(theta);
    double s = log_prefactor_gaps(pat, g) + spatial_integral_log(fg, boundary_values);
    for (int r = 0; r < grid.m(); ++r) s += log_g_theta(dp, g.u[r]) - g.log_u[r];
    return s;
}

struct PerM {
    int m = 0;
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t samples = 0;
    double patterns = 0.0;
    bool stratified = false;
};

struct MomentEstimate {
    int h = 0;
    double theta = 0.0;
    int m_max = 0;
    double value = 0.0;
    double std_error = 0.0;
    std::vector<PerM> per_m;
    std::uint64_t samples = 0;
    std::uint64_t seed = 0;
};

struct MonteCarloOptions {
    std::uint64_t samples = 100000; // per collision number m
    std::uint64_t seed = 1;
    ParallelOptions parallel{};
    std::uint64_t stratify_cap = 100000;
};

namespace detail {

// Per-sample evaluator: given (pattern, grid) returns integrand parts.
struct SeriesPlan {
    int h = 0;
    int m = 0;
    double count = 0.0;
    bool stratified = false;
    std::vector<CollisionPattern> strata;
    std::uint64_t per_stratum = 0;
};

inline SeriesPlan plan_series(int h, int m, const MonteCarloOptions& opt) {
    SeriesPlan p;
    p.h = h;
    p.m = m;
    p.count = pattern_count(h, m);
    if (p.count == 0.0) return p;
    if (p.count <= static_cast<double>(opt.stratify_cap) && opt.samples >= 2 * p.count) {
        p.stratified = true;
        p.strata = enumerate_patterns(h, m, opt.stratify_cap);
        p.per_stratum = opt.samples / p.strata.size();
    }
    return p;
}

// Accumulates Monte Carlo estimates of sum over patterns of the time
// integral of exp(log_f) for several alpha values at once.
template <class Eval>
std::vector<PerM> run_series_term(const SeriesPlan& plan, const MonteCarloOptions& opt,
                                  StreamId stream, std::size_t n_alpha, Eval&& eval) {
    std::vector<PerM> res(n_alpha);
    for (auto& r : res) {
        r.m = plan.m;
        r.patterns = plan.count;
        r.stratified = plan.stratified;
    }
    if (plan.count == 0.0) return res;
    const std::uint64_t total =
        plan.stratified ? plan.per_stratum * plan.strata.size() : opt.samples;
    const std::size_t bs = opt.parallel.batch_size;
    const std::size_t nb = batch_count(total, bs);
    using Acc = std::vector<std::map<std::size_t, LogMeanAccumulator>>;
    auto batches = run_batches(nb, opt.parallel.workers, [&](std::size_t bi) {
        Rng rng(opt.seed, stream, (static_cast<std::uint64_t>(plan.m) << 40) + bi);
        Acc acc(n_alpha);
        std::vector<double> logs(n_alpha);
        std::size_t len = batch_length(total, bs, bi);
        for (std::size_t k = 0; k < len; ++k) {
            std::uint64_t idx = bi * bs + k;
            std::size_t stratum = 0;
            if (plan.stratified) {
                stratum = static_cast<std::size_t>(idx / plan.per_stratum);
                eval(plan.strata[stratum], rng, logs);
            } else {
                CollisionPattern p = sample_pattern(plan.h, plan.m, rng);
                eval(p, rng, logs);
            }
            for (std::size_t j = 0; j < n_alpha; ++j) acc[j][stratum].add(logs[j]);
        }
        return acc;
    });
    for (std::size_t j = 0; j < n_alpha; ++j) {
        std::map<std::size_t, LogMeanAccumulator> merged;
        for (auto& b : batches)
            for (auto& [s, a] : b[j]) merged[s].merge(a);
        double v = 0.0;
        double var = 0.0;
        for (auto& [s, a] : merged) {
            Estimate e = a.estimate();
            v += e.value;
            var += e.std_error * e.std_error;
        }
        if (!plan.stratified) {
            v *= plan.count;
            var *= plan.count * plan.count;
        }
        res[j].value = v;
        res[j].std_error = std::sqrt(var);
        res[j].samples = total;
    }
    return res;
}

} // namespace detail

// Monte Carlo estimate of E[(Z_1^theta(g_1))^h] truncated at m_max collisions.
inline MomentEstimate moment_gaussian(int h, double theta, int m_max, const MonteCarloOptions& opt) {
    require(h >= 1, "moment_gaussian: h must be >= 1");
    require(m_max >= 0, "moment_gaussian: m_max must be >= 0");
    require(opt.samples >= 2, "moment_gaussian: need at least two samples");
    DickmanParams dp = dickman(theta);
    dp.validate();
    MomentEstimate est;
    est.h = h;
    est.theta = theta;
    est.m_max = m_max;
    est.seed = opt.seed;
    double total = 1.0;
    double var = 0.0;
    for (int m = 1; m <= m_max; ++m) {
        auto plan = detail::plan_series(h, m, opt);
        SimplexTimeSampler sampler(m, 2.0, 1.0);
        auto term = detail::run_series_term(
            plan, opt, StreamId::moment, 1,
            [&](const CollisionPattern& p, Rng& rng, std::vector<double>& out) {
                SimplexTimeSampler local = sampler;
                GapGrid grid;
                double lq = local.sample(rng, grid);
                out[0] = integrand_parts(p, grid, dp).log_value() - lq;
            });
        total += term[0].value;
        var += term[0].std_error * term[0].std_error;
        est.samples += term[0].samples;
        est.per_m.push_back(term[0]);
    }
    const double scale = std::ldexp(1.0, -h);
    est.value = scale * total;
    est.std_error = scale * std::sqrt(var);
    for (auto& pm : est.per_m) {
        pm.value *= scale;
        pm.std_error *= scale;
    }
    return est;
}

// Estimates of K_t^{(h)}(alpha z) for each alpha, all from one sample set.
inline std::vector<MomentEstimate> kernel_at_scaled_points(const std::vector<Point>& zs,
                                                           const std::vector<double>& alphas,
                                                           double theta, double t, int m_max,
                                                           const MonteCarloOptions& opt) {
    require(!zs.empty(), "kernel_at_points: need at least one point");
    require(t > 0.0 && std::isfinite(t), "kernel_at_points: t must be positive");
    require(m_max >= 0, "kernel_at_points: m_max must be >= 0");
    require(!alphas.empty(), "kernel_at_points: need at least one alpha");
    const int h = static_cast<int>(zs.size());
    // K_t^theta(z) = K_1^{theta + log t}(z / sqrt t).
    const double theta1 = theta + std::log(t);
    std::vector<Point> z1;
    for (Point z : zs) z1.push_back((1.0 / std::sqrt(t)) * z);
    DickmanParams dp = dickman(theta1);
    dp.validate();

    std::vector<MomentEstimate> out(alphas.size());
    std::vector<double> var(alphas.size(), 0.0);
    for (auto& e : out) {
        e.h = h;
        e.theta = theta;
        e.m_max = m_max;
        e.seed = opt.seed;
        e.value = 1.0;
    }
    for (int m = 1; m <= m_max; ++m) {
        auto plan = detail::plan_series(h, m, opt);
        SimplexTimeSampler sampler(m, 0.0, 1.0);
        auto terms = detail::run_series_term(
            plan, opt, StreamId::kernel, alphas.size(),
            [&](const CollisionPattern& p, Rng& rng, std::vector<double>& outl) {
                SimplexTimeSampler local = sampler;
                GapGrid grid;
                double lq = local.sample(rng, grid);
                IntegrandParts parts = integrand_parts(p, grid, dp, &z1);
                for (std::size_t j = 0; j < alphas.size(); ++j)
                    outl[j] = parts.log_value(alphas[j]) - lq;
            });
        for (std::size_t j = 0; j < alphas.size(); ++j) {
            out[j].value += terms[j].value;
            var[j] += terms[j].std_error * terms[j].std_error;
            out[j].samples += terms[j].samples;
            out[j].per_m.push_back(terms[j]);
        }
    }
    for (std::size_t j = 0; j < alphas.size(); ++j) out[j].std_error = std::sqrt(var[j]);
    return out;
}

inline MomentEstimate kernel_at_points(const std::vector<Point>& zs, double theta, double t,
                                       int m_max, const MonteCarloOptions& opt) {
    return kernel_at_scaled_points(zs, {1.0}, theta, t, m_max, opt).front();
}

// Flat-data covariance kernel pi * iint g_a(x' - x) G_theta(b - a) da db
// over 0 < a < b < t, as a one-dimensional integral against the integrated
// renewal density.  Infinite at x = x'.
inline double covariance_flat(double theta, Point x, Point xprime, double t,
                              double rel_tol = 1e-9) {
    require(t > 0.0 && std::isfinite(t), "covariance_second_moment: t must be positive");
    const double d2 = norm2(xprime - x);
    if (d2 == 0.0) return std::numeric_limits<double>::infinity();
    // Rescale to unit time: the kernel is invariant under (t, x, theta) ->
    // (1, x / sqrt t, theta + log t).
    const double dd = d2 / t;
    DickmanParams dp = dickman(theta + std::log(t));
    using boost::math::quadrature::gauss_kronrod;
    // Both ends are handled in logarithmic variables: a = e^{-v} near 0,
    // where the heat kernel switches on, and 1 - a = e^{-w} near 1, where
    // the integrated renewal density decays like 1 / log.
    auto near0 = [&](double v) {
        double a = std::exp(-v);
        return std::exp(-dd / (2.0 * a)) / (2.0 * std::numbers::pi) * g_theta_integral(dp, 1.0 - a);
    };
    auto near1 = [&](double w) {
        double s = std::exp(-w);
        double a = 1.0 - s;
        return std::exp(-dd / (2.0 * a)) / (2.0 * std::numbers::pi * a) * g_theta_integral(dp, s) * s;
    };
    const double v_hi = std::log(2.0) + std::max(0.0, std::log(80.0 / dd));
    double err = 0.0;
    double e2 = 0.0;
    double v = 0.0;
    // Split where the heat kernel turns on so the adaptive scheme sees it.
    double v_mid = std::clamp(std::log(2.0 / dd), std::log(2.0), v_hi);
    if (v_mid > std::log(2.0))
        v += gauss_kronrod<double, 61>::integrate(near0, std::log(2.0), v_mid, 20, rel_tol, &e2);
    err += e2;
    e2 = 0.0;
    if (v_hi > v_mid) v += gauss_kronrod<double, 61>::integrate(near0, v_mid, v_hi, 20, rel_tol, &e2);
    err += e2;
    e2 = 0.0;
    v += gauss_kronrod<double, 61>::integrate(near1, std::log(2.0), 60.0, 20, rel_tol, &e2);
    err += e2;
    if (!(err <= 1e2 * rel_tol * std::abs(v) + 1e-300)) {
        std::ostringstream os;
        os << "covariance_second_moment: quadrature error " << err << " for value " << v;
        throw NumericalError(os.str());
    }
    return std::numbers::pi * v;
}

// Full covariance kernel K_t^theta(x, x'; y, y').
inline double covariance_second_moment(double theta, Point x, Point xprime, Point y, Point yprime,
                                       double t) {
    require(t > 0.0, "covariance_second_moment: t must be positive");
    const double d2 = norm2(xprime - x);
    if (d2 == 0.0) return std::numeric_limits<double>::infinity();
    DickmanParams dp = dickman(theta);
    auto inner = [&](double a) {
        // int_a^t G(b - a) g_{t-b}(y' - y) db
        auto g = [&](double b) {
            double u = b - a;
            double s = t - b;
            if (u <= 0.0 || s <= 0.0) return 0.0;
            return g_theta(dp, u) * heat_kernel(s, yprime - y);
        };
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, a, t, 15, 1e-9);
    };
    auto outer = [&](double a) {
        if (a <= 0.0 || a >= t) return 0.0;
        return heat_kernel(a, xprime - x) * inner(a);
    };
    double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(outer, 0.0, t, 15, 1e-9);
    Point mid = 0.5 * (y + yprime) - 0.5 * (x + xprime);
    return std::numbers::pi * heat_kernel(t / 4.0, mid) * v;
}

// E[(Z_1^theta(g_1))^2] = 1/4 + 1/2 * <g_1 x g_1, K_flat>, with the
// contraction integrated over the separation d ~ N(0, 2 I).
inline double second_moment_from_covariance(double theta, double rel_tol = 1e-8) {
    using boost::math::quadrature::gauss_kronrod;
    auto radial = [&](double r) {
        if (r <= 0.0) return 0.0;
        double dens = 2.0 * std::numbers::pi * r * heat_kernel(2.0, {r, 0.0});
        return dens * covariance_flat(theta, {0.0, 0.0}, {r, 0.0}, 1.0, rel_tol * 0.1);
    };
    double err = 0.0;
    double c = gauss_kronrod<double, 31>::integrate(radial, 0.0, 0.5, 12, rel_tol, &err);
    double e2 = 0.0;
    c += gauss_kronrod<double, 31>::integrate(radial, 0.5, 20.0, 12, rel_tol, &e2);
    return 0.25 + 0.5 * c;
}

} // namespace shf
