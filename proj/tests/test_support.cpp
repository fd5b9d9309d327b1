#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include <shf/json_io.hpp>
#include <shf/parallel.hpp>
#include <shf/rng.hpp>
#include <shf/stats.hpp>

using namespace shf;

namespace {

struct TwoPass {
    double mean, var;
};

TwoPass two_pass(const std::vector<double>& xs) {
    double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return {m, s / static_cast<double>(xs.size() - 1)};
}

} // namespace

TEST(RunningStats, MatchesTwoPassAndMerges) {
    Rng rng(1);
    std::vector<double> xs;
    for (int k = 0; k < 1000; ++k) xs.push_back(1e6 + rng.normal());
    RunningStats all, a, b;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        all.add(xs[k]);
        (k < 317 ? a : b).add(xs[k]);
    }
    auto tp = two_pass(xs);
    EXPECT_NEAR(all.mean(), tp.mean, 1e-8);
    EXPECT_NEAR(all.variance(), tp.var, 1e-9);
    EXPECT_NEAR(all.std_error(), std::sqrt(tp.var / 1000.0), 1e-12);
    a.merge(b);
    EXPECT_EQ(a.count(), 1000u);
    EXPECT_NEAR(a.mean(), all.mean(), 1e-8);
    EXPECT_NEAR(a.variance(), all.variance(), 1e-9);

    RunningStats empty, one;
    one.add(3.0);
    EXPECT_EQ(one.std_error(), 0.0);
    empty.merge(one);
    EXPECT_EQ(empty.mean(), 3.0);
    one.merge(RunningStats{});
    EXPECT_EQ(one.count(), 1u);
}

TEST(LogMean, MatchesDirectAndSurvivesHugeWeights) {
    std::vector<double> logs = {0.1, -2.0, 1.5, 0.0, -0.7, 3.0};
    LogMeanAccumulator acc;
    RunningStats direct;
    for (double l : logs) {
        acc.add(l);
        direct.add(std::exp(l));
    }
    auto e = acc.estimate();
    EXPECT_NEAR(e.value, direct.mean(), 1e-12 * direct.mean());
    EXPECT_NEAR(e.std_error, direct.std_error(), 1e-10 * direct.std_error());

    LogMeanAccumulator big, lo, hi;
    for (int k = 0; k < 10; ++k) {
        double l = 700.0 + 10.0 * k;
        big.add(l);
        (k % 2 ? hi : lo).add(l);
    }
    EXPECT_TRUE(std::isfinite(big.log_mean()));
    // Geometric sum of e^{-10k}, k = 0..9.
    double want = 790.0 + std::log(-std::expm1(-100.0) / -std::expm1(-10.0)) - std::log(10.0);
    EXPECT_NEAR(big.log_mean(), want, 1e-12);
    lo.merge(hi);
    EXPECT_EQ(lo.count(), 10u);
    EXPECT_NEAR(lo.log_mean(), big.log_mean(), 1e-12);

    LogMeanAccumulator zero;
    zero.add(-std::numeric_limits<double>::infinity());
    EXPECT_EQ(zero.count(), 1u);
    EXPECT_EQ(zero.estimate().value, 0.0);
    zero.merge(big);
    EXPECT_NEAR(zero.log_mean(), big.log_mean() + std::log(10.0 / 11.0), 1e-12);
}

TEST(Ks, KnownDistances) {
    EXPECT_EQ(ks_distance_exponential({}), 1.0);
    EXPECT_NEAR(ks_distance_exponential({std::log(2.0)}), 0.5, 1e-15);
    // Exact quantiles at (k - 1/2)/n leave distance 1/(2n).
    std::vector<double> q;
    const int n = 200;
    for (int k = 1; k <= n; ++k) q.push_back(-std::log1p(-(k - 0.5) / n));
    EXPECT_NEAR(ks_distance_exponential(q), 0.5 / n, 1e-12);
    EXPECT_NEAR(ks_distance_exponential({0.0, 0.0}), 1.0, 0.0);

    Rng rng(4);
    std::vector<double> xs;
    for (int k = 0; k < 20000; ++k) xs.push_back(-std::log(rng.uniform()));
    EXPECT_LT(ks_distance_exponential(xs), 1.36 / std::sqrt(20000.0));
}

TEST(LogSumExp, Values) {
    const double ninf = -std::numeric_limits<double>::infinity();
    EXPECT_NEAR(log_sum_exp(std::log(2.0), std::log(3.0)), std::log(5.0), 1e-15);
    EXPECT_NEAR(log_sum_exp(1000.0, 1000.0), 1000.0 + std::log(2.0), 1e-12);
    EXPECT_EQ(log_sum_exp(ninf, 2.0), 2.0);
    EXPECT_EQ(log_sum_exp(2.0, ninf), 2.0);
    EXPECT_EQ(log_sum_exp(ninf, ninf), ninf);
}

TEST(Parallel, BatchesAndOrder) {
    EXPECT_EQ(batch_count(0, 10), 0u);
    EXPECT_EQ(batch_count(10, 10), 1u);
    EXPECT_EQ(batch_count(11, 10), 2u);
    EXPECT_EQ(batch_length(11, 10, 0), 10u);
    EXPECT_EQ(batch_length(11, 10, 1), 1u);
    for (unsigned w : {1u, 2u, 5u, 64u}) {
        auto out = run_batches(37, w, [](std::size_t b) { return static_cast<int>(b * b); });
        ASSERT_EQ(out.size(), 37u);
        for (std::size_t b = 0; b < 37; ++b) EXPECT_EQ(out[b], static_cast<int>(b * b));
    }
    EXPECT_TRUE(run_batches(0, 4, [](std::size_t) { return 1; }).empty());
}

TEST(Parallel, ReductionIndependentOfWorkers) {
    auto sum = [](unsigned workers) {
        auto parts = run_batches(batch_count(10000, 128), workers, [](std::size_t b) {
            Rng rng(99, StreamId::moment, b);
            RunningStats st;
            for (std::size_t k = 0; k < batch_length(10000, 128, b); ++k) st.add(rng.normal());
            return st;
        });
        RunningStats all;
        for (const auto& p : parts) all.merge(p);
        return all;
    };
    auto a = sum(1), b = sum(3);
    EXPECT_EQ(a.count(), 10000u);
    EXPECT_EQ(a.mean(), b.mean());
    EXPECT_EQ(a.variance(), b.variance());
}

TEST(Parallel, PropagatesExceptions) {
    std::atomic<int> calls{0};
    auto bad = [&](std::size_t b) {
        ++calls;
        if (b == 3) throw NumericalError("boom");
        return 0;
    };
    EXPECT_THROW(run_batches(1000, 1, bad), NumericalError);
    EXPECT_EQ(calls.load(), 4);
    EXPECT_THROW(run_batches(1000, 4, bad), NumericalError);
}

TEST(Rng, DeterministicAndStreamSeparated) {
    Rng a(7, StreamId::slab, 2), b(7, StreamId::slab, 2);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
    std::set<std::uint64_t> seeds;
    for (auto id : {StreamId::patterns, StreamId::moment, StreamId::kernel, StreamId::slab,
                    StreamId::lower_chain, StreamId::nested, StreamId::compare, StreamId::disorder,
                    StreamId::walks, StreamId::collisions, StreamId::graphs})
        for (std::uint64_t batch = 0; batch < 50; ++batch) seeds.insert(stream_seed(7, id, batch));
    EXPECT_EQ(seeds.size(), 11u * 50u);
    EXPECT_NE(stream_seed(7, StreamId::slab, 0), stream_seed(8, StreamId::slab, 0));
    static_assert(stream_seed(1, StreamId::moment, 0) == stream_seed(1, StreamId::moment, 0));
}

TEST(Rng, Distributions) {
    Rng rng(12);
    RunningStats u, n;
    std::vector<int> hist(7, 0);
    for (int k = 0; k < 70000; ++k) {
        double x = rng.uniform();
        ASSERT_GT(x, 0.0);
        ASSERT_LT(x, 1.0);
        u.add(x);
        n.add(rng.normal());
        ++hist[rng.below(7)];
        double y = rng.uniform(-3.0, -1.0);
        ASSERT_GT(y, -3.0);
        ASSERT_LT(y, -1.0);
    }
    EXPECT_NEAR(u.mean(), 0.5, 4.0 * std::sqrt(1.0 / 12.0 / 70000.0));
    EXPECT_NEAR(n.mean(), 0.0, 4.0 / std::sqrt(70000.0));
    EXPECT_NEAR(n.variance(), 1.0, 0.03);
    for (int c : hist) EXPECT_NEAR(c, 10000, 4.0 * std::sqrt(10000.0 * 6.0 / 7.0));
}

TEST(Json, GraphForms) {
    auto s = graph_from_json(json::parse(R"({"n": 3, "edges": [[0, 1, 2.0], {"u": 1, "v": 2, "c": 3.0}],
                                            "boundary": [0], "values": {"2": [1.0, -1.0]}})"));
    EXPECT_EQ(s.graph.vertex_count(), 3);
    ASSERT_EQ(s.graph.edges().size(), 2u);
    EXPECT_EQ(s.boundary, (std::vector<int>{0, 2}));
    EXPECT_EQ(s.values.at(2).y, -1.0);

    auto bare = graph_from_json(json::parse(R"({"n": 2, "edges": [[0, 1, 1.0]]})"));
    EXPECT_TRUE(bare.boundary.empty());
}

TEST(Json, GraphErrors) {
    for (const char* bad : {R"({"edges": []})", R"({"n": 2, "edges": [[0, 1]]})",
                            R"({"n": 2, "edges": [[0, 1, "x"]]})", R"({"n": 2, "edges": [[0, 2, 1.0]]})",
                            R"({"n": 2, "edges": [[0, 1, -1.0]]})",
                            R"({"n": 2, "edges": [], "values": {"a": [0, 0]}})",
                            R"({"n": 2, "edges": [], "values": {"0": [0]}})"})
        EXPECT_THROW(graph_from_json(json::parse(bad)), DomainError) << bad;
}

TEST(Json, NonFiniteBecomesString) {
    EXPECT_EQ(detail::num(1.5), json(1.5));
    EXPECT_EQ(detail::num(INFINITY), json("inf"));
    EXPECT_EQ(detail::num(-INFINITY), json("-inf"));
    EXPECT_EQ(detail::num(NAN), json("nan"));
    json j = Estimate{2.0, INFINITY};
    EXPECT_EQ(j.dump(), R"({"std_error":"inf","value":2.0})");
    auto back = json::parse(j.dump());
    EXPECT_EQ(back.at("value").get<double>(), 2.0);
}

TEST(Errors, RequireAndHierarchy) {
    EXPECT_NO_THROW(require(true, "fine"));
    EXPECT_THROW(require(false, "no"), DomainError);
    EXPECT_THROW(require<CapacityError>(false, "cap"), CapacityError);
    try {
        require(false, "message text");
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("message text"), std::string::npos);
    }
}
