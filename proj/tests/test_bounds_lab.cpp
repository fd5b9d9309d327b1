#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <shf/bounds_lab.hpp>

using namespace shf;
using boost::math::quadrature::gauss_kronrod;

namespace {

// Integral of prod_{i<=m} 1/(x_i + x_{i+1}) over [0,1]^{m+1}, by iterating
// the transfer operator in w = -log x, where the kernel 1/(1 + e^{w'-w}) is
// smooth.  Unit panels on [0, 40] with 20-point Gauss-Legendre.
std::vector<double> nested_h2_nystrom(int m_max) {
    const auto& xs = boost::math::quadrature::gauss<double, 20>::abscissa();
    const auto& ws = boost::math::quadrature::gauss<double, 20>::weights();
    std::vector<double> w, W;
    for (int p = 0; p < 40; ++p) {
        double c = p + 0.5;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            for (int s : {-1, 1}) {
                if (xs[k] == 0.0 && s == 1) continue;
                w.push_back(c + 0.5 * s * xs[k]);
                W.push_back(0.5 * ws[k]);
            }
        }
    }
    const std::size_t n = w.size();
    std::vector<double> f(n, 1.0), g(n);
    std::vector<double> out;
    for (int m = 1; m <= m_max; ++m) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += W[j] * f[j] / (1.0 + std::exp(w[j] - w[i]));
            g[i] = s;
        }
        f.swap(g);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += W[i] * std::exp(-w[i]) * f[i];
        out.push_back(v);
    }
    return out;
}

// h = 3, m = 2: with s = x_2 + x_3 (triangular law on [0, 2]) the outer two
// coordinates integrate to log^2(1 + 1/s).
double nested_h3_m2() {
    auto f = [](double s) {
        double rho = s < 1.0 ? s : 2.0 - s;
        double l = std::log1p(1.0 / s);
        return rho * l * l;
    };
    return gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 20, 1e-12) +
           gauss_kronrod<double, 61>::integrate(f, 1.0, 2.0, 20, 1e-12);
}

CollisionPattern pat(int h, std::vector<std::pair<int, int>> ps) {
    std::vector<Pair> v;
    for (auto [i, j] : ps) v.push_back({i, j});
    return CollisionPattern(h, v);
}

} // namespace

TEST(Slab, WindowsForTwoCollisions) {
    SlabConfig c(2);
    EXPECT_NEAR(c.a_lo(1), 2.2, 1e-15);
    EXPECT_NEAR(c.a_hi(1), 2.3, 1e-15);
    EXPECT_NEAR(c.b_hi(1), 2.4, 1e-15);
    EXPECT_NEAR(c.a_lo(2), 2.7, 1e-15);
    EXPECT_NEAR(c.a_hi(2), 2.8, 1e-15);
    EXPECT_NEAR(c.b_hi(2), 2.9, 1e-15);
    EXPECT_TRUE(c.admissible(TimeGrid{3.0, {2.25, 2.75}, {2.3, 2.9}}));
    EXPECT_FALSE(c.admissible(TimeGrid{3.0, {2.25, 2.75}, {2.45, 2.9}}));
    EXPECT_THROW(SlabConfig(0), DomainError);
}

TEST(Slab, SampledGridsSatisfyDominance) {
    Rng rng(3, StreamId::slab, 9);
    for (int m = 1; m <= 8; ++m) {
        SlabConfig cfg(m);
        for (int k = 0; k < 300; ++k) {
            TimeGrid g = sample_slab_grid(cfg, rng);
            ASSERT_TRUE(cfg.admissible(g));
            for (int r = 0; r < m; ++r) ASSERT_LE(g.b[r] - g.a[r], 2.0 / (5.0 * m) + 1e-15);
            ASSERT_TRUE(slab_dominance(g).holds());
            for (int h = 2; h <= 5; ++h) {
                if (h == 2 && m > 1) continue;
                auto p = sample_pattern(h, m, rng);
                ASSERT_TRUE(slab_dominance(p, g).holds()) << to_string(p);
                // Curly conductances dominate the others.
                auto fg = build_feynman_graph(p, g, GraphMode::augmented);
                double min_curly = INFINITY;
                for (int r = 0; r < m; ++r) min_curly = std::min(min_curly, 4.0 / (g.b[r] - g.a[r]));
                ASSERT_GE(min_curly, 2.0 / fg.ell_sorted.back());
            }
        }
    }
}

TEST(Treebound, SingleCollisionRatioIsNine) {
    // truth (2 pi)^2 a_1 u / 16 against the bound (2 pi)^2 u (a_1 / 2) / 72
    TimeGrid g{3.0, {2.45}, {2.6}};
    auto r = treebound_check(pat(2, {{1, 2}}), g);
    EXPECT_NEAR(r.rhs, std::log(4.0 * std::numbers::pi * std::numbers::pi * 2.45 * 0.15 / 16.0), 1e-12);
    EXPECT_NEAR(r.margin(), std::log(9.0), 1e-12);
    ASSERT_TRUE(r.tree_count.has_value());
    EXPECT_EQ(*r.tree_count, 1u);
    EXPECT_THROW(treebound_check(pat(2, {{1, 2}}), TimeGrid{3.0, {2.0}, {2.1}}), DomainError);
}

TEST(Treebound, RandomInstances) {
    Rng rng(5, StreamId::slab, 3);
    for (int k = 0; k < 2000; ++k) {
        int h = 2 + static_cast<int>(rng.below(4));
        int m = h == 2 ? 1 : 1 + static_cast<int>(rng.below(8));
        auto p = sample_pattern(h, m, rng);
        auto g = sample_slab_grid(SlabConfig(m), rng);
        auto r = treebound_check(p, g);
        ASSERT_GE(r.margin(), 0.0) << to_string(p);
        if (auto s = r.tree_slack(m)) {
            ASSERT_GE(*s, 0.0);
            ASSERT_GE(r.margin(), *s - 1e-9) << to_string(p);
        } else {
            ASSERT_GT(2 * m + 1, spanning_tree_vertex_guard);
        }
    }
}

TEST(LowerChain, SingleCollisionAgainstQuadrature) {
    // Slab part of 2^h E[Z^h] at m = 1: int over the a-window of G-mass / a.
    auto dp = dickman(0.0, 1e-10);
    SlabConfig cfg(1);
    auto f = [&](double a) { return g_theta_integral(dp, cfg.b_hi(1) - a) / a; };
    double want = gauss_kronrod<double, 61>::integrate(f, cfg.a_lo(1), cfg.a_hi(1), 15, 1e-11);
    auto r = lower_chain_evaluate(2, 1, 0.0, 200000, 7);
    EXPECT_LE(std::abs(r.mc.value - want), 3.0 * r.mc.std_error) << r.mc.value << " vs " << want;
    EXPECT_LT(r.mc.std_error / r.mc.value, 1e-3);
    EXPECT_LE(r.analytic_bound, want);
    EXPECT_EQ(r.pattern_count, 1.0);
    EXPECT_TRUE(r.below_asymptotic_range);
}

TEST(LowerChain, AboveAnalyticBound) {
    for (int h = 2; h <= 3; ++h) {
        for (int m = 1; m <= (h == 2 ? 1 : 6); ++m) {
            auto r = lower_chain_evaluate(h, m, 0.0, 4000, 11);
            EXPECT_GE(r.margin(), -3.0 * r.mc.std_error) << h << "," << m;
            EXPECT_GT(r.analytic_bound, 0.0);
        }
    }
    EXPECT_EQ(lower_chain_evaluate(3, 2, 0.0, 100, 1).pattern_count, 6.0);
    EXPECT_THROW(lower_chain_evaluate(1, 2, 0.0, 100, 1), DomainError);
}

TEST(LowerChain, WindowMassAgainstLogBound) {
    for (double m : {1e2, 1e3, 1e4}) {
        double gi = g_theta_integral(dickman(0.0), 1.0 / (5.0 * m));
        EXPECT_GE(gi, 1.0 / (2.0 * std::log(m))) << m;
    }
}

TEST(Compare, TwoWalkerWideMargin) {
    MonteCarloOptions o;
    o.samples = 20000;
    o.seed = 3;
    auto r = compare_test_functions_check(2, 0.5, 0.0, 1, o);
    EXPECT_NEAR(r.multiplier, std::pow(0.5, 4) * std::exp(-8.0), 1e-15);
    EXPECT_GE(r.lhs(), r.rhs() - 3.0 * r.sigma());
    EXPECT_GT(r.lhs(), 10.0 * r.rhs());
    EXPECT_THROW(compare_test_functions_check(4, 0.5, 0.0, 1, o), DomainError);
    EXPECT_THROW(compare_test_functions_check(2, 1.0, 0.0, 1, o), DomainError);
}

TEST(Nested, OraclesReproduceKnownValues) {
    auto v = nested_h2_nystrom(3);
    EXPECT_NEAR(v[0], 2.0 * std::log(2.0), 1e-10);
    EXPECT_NEAR(v[1], 2.60584, 1e-5);
    EXPECT_NEAR(v[2], 5.60579, 1e-5);
}

TEST(Nested, SingleDenominator) {
    auto e = nested_denominator_integral(2, 1, 1000000, 1);
    EXPECT_LE(std::abs(e.value - 2.0 * std::log(2.0)), 3.0 * e.std_error);
    EXPECT_LT(e.std_error, 2e-3);
}

TEST(Nested, MatchesNystromForTwoWalkers) {
    auto ref = nested_h2_nystrom(10);
    for (int m : {2, 4, 7, 10}) {
        auto e = nested_denominator_integral(2, m, 200000, 5);
        EXPECT_LE(std::abs(e.value - ref[m - 1]), 3.0 * e.std_error)
            << "m=" << m << " est=" << e.value << " +- " << e.std_error << " ref=" << ref[m - 1];
    }
}

TEST(Nested, ThreeWalkersTwoDenominators) {
    auto e = nested_denominator_integral(3, 2, 400000, 9);
    double want = nested_h3_m2();
    EXPECT_LE(std::abs(e.value - want), 3.0 * e.std_error) << e.value << " vs " << want;
}

TEST(Nested, GrowthIsExponential) {
    auto ref = nested_h2_nystrom(10);
    auto g = nested_growth(2, 2, 10, 100000, 3);
    EXPECT_GT(g.slope, 0.0);
    double ref_slope = (std::log(ref[9]) - std::log(ref[1])) / 8.0;
    EXPECT_NEAR(g.slope / ref_slope, 1.0, 0.1);
    for (double inc : g.increments) EXPECT_GT(inc, 0.0);
    double lo = *std::min_element(g.increments.begin(), g.increments.end());
    double hi = *std::max_element(g.increments.begin(), g.increments.end());
    EXPECT_GT(lo, 0.5 * hi);
    EXPECT_THROW(nested_growth(2, 3, 3, 100, 1), DomainError);
}

TEST(Tail, DefinitionsAtLogLog100) {
    auto e = tail_envelope({1.0, 1.0, 100.0});
    EXPECT_DOUBLE_EQ(e.L, 100.0);
    EXPECT_NEAR(e.M, 4.60517, 1e-5);
    EXPECT_EQ(e.h, 450);
    EXPECT_EQ(e.markov_h, 10);
    EXPECT_NEAR(e.i3_exponent, 450.0 - 460.517018598809 + 1.0, 1e-9);
    EXPECT_LE(e.i3_exponent, -9.0);
    EXPECT_TRUE(e.i3_bounded());
    EXPECT_GE(e.ordering_margin, 0.0);
    EXPECT_NEAR(e.upper_log_magnitude, 100.0 + std::log(9.0), 1e-12);
}

TEST(Tail, EnvelopesNestOverSweep) {
    for (double L = 10.0; L <= 200.0; L += 2.5) {
        auto e = tail_envelope({1.0, 1.0, L});
        EXPECT_GE(e.h, 1);
        EXPECT_GE(e.ordering_margin, 0.0) << L;
        EXPECT_TRUE(e.i3_bounded()) << L;
        EXPECT_LE(e.lower_exponent, e.upper_exponent) << L;
    }
}

TEST(Tail, SmallZRejected) {
    EXPECT_THROW(tail_envelope({1.0, 1.0, 5.0}), DomainError);
    EXPECT_THROW(tail_envelope({1.0, 1.0, 0.5}), DomainError);
    EXPECT_THROW(TailParams::from_z(2.0), DomainError);
    EXPECT_THROW(tail_envelope({0.0, 1.0, 100.0}), DomainError);
    auto p = TailParams::from_z(1e300);
    EXPECT_NEAR(p.log_log_z, std::log(300.0 * std::log(10.0)), 1e-12);
}

TEST(Verify, LedgerPasses) {
    VerifyOptions o;
    o.h = 3;
    o.m_max = 3;
    o.seed = 7;
    o.grid_samples = 300;
    o.chain_samples = 2000;
    o.kernel_samples = 5000;
    o.nested_samples = 100000;
    auto rows = verify_ledger(o);
    EXPECT_GT(rows.size(), 15u);
    for (const auto& r : rows) EXPECT_TRUE(r.passes()) << r.check_name << " " << r.params << " margin=" << r.margin;
}
