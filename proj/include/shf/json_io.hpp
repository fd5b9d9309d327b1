#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "bounds_lab.hpp"
#include "diagrams.hpp"
#include "dpre_sim.hpp"
#include "errors.hpp"
#include "graph_gff.hpp"
#include "moment_kernel.hpp"
#include "special_functions.hpp"
#include "stats.hpp"

namespace shf {

using nlohmann::json;

namespace detail {
// Non-finite doubles become strings; nlohmann would otherwise write null.
inline json num(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}
} // namespace detail

// {"n": 3, "edges": [[0, 1, 2.5], ...], "boundary": [0], "values": {"0": [x, y]}}
struct GraphSpec {
    WeightedGraph graph{1};
    std::vector<int> boundary;
    BoundaryValues values;
};

inline GraphSpec graph_from_json(const json& j) {
    try {
        GraphSpec s;
        int n = j.at("n").get<int>();
        std::vector<Edge> edges;
        for (const auto& e : j.at("edges")) {
            if (e.is_array()) {
                require(e.size() == 3, "graph json: edges are [u, v, c]");
                edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
            } else {
                edges.push_back({e.at("u").get<int>(), e.at("v").get<int>(), e.at("c").get<double>()});
            }
        }
        if (j.contains("boundary")) s.boundary = j.at("boundary").get<std::vector<int>>();
        if (j.contains("values")) {
            for (auto it = j.at("values").begin(); it != j.at("values").end(); ++it) {
                auto p = it.value().get<std::vector<double>>();
                require(p.size() == 2, "graph json: values are [x, y]");
                s.values[std::stoi(it.key())] = {p[0], p[1]};
            }
        }
        for (const auto& [k, v] : s.values) {
            (void)v;
            if (std::find(s.boundary.begin(), s.boundary.end(), k) == s.boundary.end())
                s.boundary.push_back(k);
        }
        s.graph = WeightedGraph(n, edges, s.boundary);
        return s;
    } catch (const json::exception& e) {
        throw DomainError(std::string("graph json: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw DomainError("graph json: value keys must be vertex indices");
    }
}

inline void to_json(json& j, const Estimate& e) {
    j = json{{"value", detail::num(e.value)}, {"std_error", detail::num(e.std_error)}};
}

inline void to_json(json& j, const QuadratureReport& r) {
    j = json{{"value", detail::num(r.value)},
             {"error_estimate", detail::num(r.error_estimate)},
             {"tail_bound", detail::num(r.tail_bound)},
             {"s_max", detail::num(r.s_max)},
             {"panels", r.panels}};
}

inline void to_json(json& j, const PerM& p) {
    j = json{{"m", p.m},
             {"value", detail::num(p.value)},
             {"std_error", detail::num(p.std_error)},
             {"samples", p.samples},
             {"patterns", p.patterns},
             {"stratified", p.stratified}};
}

inline void to_json(json& j, const MomentEstimate& e) {
    j = json{{"h", e.h},
             {"theta", e.theta},
             {"m_max", e.m_max},
             {"value", detail::num(e.value)},
             {"std_error", detail::num(e.std_error)},
             {"samples", e.samples},
             {"per_m", e.per_m}};
}

inline void to_json(json& j, const LowerChainResult& r) {
    j = json{{"h", r.h},
             {"m", r.m},
             {"theta", r.theta},
             {"mc", r.mc},
             {"analytic_bound", detail::num(r.analytic_bound)},
             {"margin", detail::num(r.margin())},
             {"pattern_count", r.pattern_count},
             {"gi_window", detail::num(r.gi_window)},
             {"inv_two_log_m", detail::num(r.inv_two_log_m)},
             {"closing_form", detail::num(r.closing_form)},
             {"samples", r.samples},
             {"below_asymptotic_range", r.below_asymptotic_range}};
}

inline void to_json(json& j, const TailEnvelope& t) {
    j = json{{"L", t.L},
             {"M", t.M},
             {"h", t.h},
             {"markov_h", t.markov_h},
             {"log_log_w", detail::num(t.log_log_w)},
             {"upper_exponent", detail::num(t.upper_exponent)},
             {"upper_log_magnitude", detail::num(t.upper_log_magnitude)},
             {"lower_exponent", detail::num(t.lower_exponent)},
             {"lower_log_magnitude", detail::num(t.lower_log_magnitude)},
             {"ordering_margin", detail::num(t.ordering_margin)},
             {"i3_exponent", detail::num(t.i3_exponent)},
             {"i3_neg_log", detail::num(t.i3_neg_log)},
             {"i3_bounded", t.i3_bounded()},
             {"pointwise_margin", detail::num(t.pointwise_margin)},
             {"moment_margin", detail::num(t.moment_margin)}};
}

inline void to_json(json& j, const CriticalWindow& w) {
    j = json{{"n_steps", w.n_steps},
             {"theta", w.theta},
             {"r_n", w.r_n},
             {"sigma_sq", w.sigma_sq},
             {"beta_n", w.beta_n}};
}

inline void to_json(json& j, const DpreMoment& m) {
    j = json{{"h", m.h}, {"window", m.window}, {"collision", m.collision}};
    if (m.direct) j["direct"] = *m.direct;
    if (m.pairwise_product) j["pairwise_product"] = *m.pairwise_product;
    if (auto z = m.cross_check_z()) j["cross_check_z"] = detail::num(*z);
    if (!m.warning.empty()) j["warning"] = m.warning;
}

inline void to_json(json& j, const LedgerRow& r) {
    j = json{{"check_name", r.check_name}, {"params", r.params}, {"lhs", detail::num(r.lhs)},
             {"rhs", detail::num(r.rhs)},   {"margin", detail::num(r.margin)},
             {"sigma", detail::num(r.sigma)}, {"asserted", r.asserted}, {"passes", r.passes()}};
}

} // namespace shf
