#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "geometry.hpp"

namespace shf {

struct Edge {
    int u = 0;
    int v = 0;
    double c = 1.0;
};

// Simple undirected graph with positive conductances.  Parallel edges given
// to the constructor are merged by summing their conductances.
class WeightedGraph {
public:
    explicit WeightedGraph(int n, const std::vector<Edge>& edges = {}, std::vector<int> boundary = {})
        : n_(n), boundary_(std::move(boundary)) {
        require(n_ >= 1, "WeightedGraph: vertex_count must be >= 1");
        std::map<std::pair<int, int>, double> merged;
        for (const Edge& e : edges) {
            if (e.u < 0 || e.v < 0 || e.u >= n_ || e.v >= n_) {
                std::ostringstream os;
                os << "WeightedGraph: edge (" << e.u << "," << e.v << ") out of range for n=" << n_;
                throw DomainError(os.str());
            }
            require(e.u != e.v, "WeightedGraph: self-loops are not allowed");
            if (!(e.c > 0.0) || !std::isfinite(e.c)) {
                std::ostringstream os;
                os << "WeightedGraph: conductance of (" << e.u << "," << e.v
                   << ") must be positive and finite, got " << e.c;
                throw DomainError(os.str());
            }
            merged[{std::min(e.u, e.v), std::max(e.u, e.v)}] += e.c;
        }
        edges_.reserve(merged.size());
        for (const auto& [k, c] : merged) edges_.push_back({k.first, k.second, c});
        std::vector<char> seen(static_cast<std::size_t>(n_), 0);
        for (int b : boundary_) {
            require(b >= 0 && b < n_, "WeightedGraph: boundary vertex out of range");
            require(!seen[b], "WeightedGraph: repeated boundary vertex");
            seen[b] = 1;
        }
    }

    int vertex_count() const { return n_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<int>& boundary() const { return boundary_; }

    // Connected-component label for each vertex.
    std::vector<int> components() const {
        std::vector<int> parent(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) parent[i] = i;
        auto find = [&](int x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const Edge& e : edges_) parent[find(e.u)] = find(e.v);
        std::vector<int> label(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) label[i] = find(i);
        return label;
    }

    bool is_connected() const {
        auto l = components();
        return std::all_of(l.begin(), l.end(), [&](int x) { return x == l[0]; });
    }

    // Number of distinct neighbours of each vertex.
    std::vector<int> degrees() const {
        std::vector<int> d(static_cast<std::size_t>(n_), 0);
        for (const Edge& e : edges_) {
            ++d[e.u];
            ++d[e.v];
        }
        return d;
    }

    double max_conductance() const {
        double m = 0.0;
        for (const Edge& e : edges_) m = std::max(m, e.c);
        return m;
    }

private:
    int n_;
    std::vector<Edge> edges_;
    std::vector<int> boundary_;
};

using PlanarField = std::vector<Point>;
using BoundaryValues = std::map<int, Point>;

inline Eigen::MatrixXd laplacian(const WeightedGraph& g) {
    const int n = g.vertex_count();
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    for (const Edge& e : g.edges()) {
        L(e.u, e.u) += e.c;
        L(e.v, e.v) += e.c;
        L(e.u, e.v) -= e.c;
        L(e.v, e.u) -= e.c;
    }
    return L;
}

namespace detail {

struct Partition {
    std::vector<int> free;       // vertices integrated over
    std::vector<int> index;      // vertex -> position in free, or -1
};

inline Partition partition_vertices(const WeightedGraph& g, const std::vector<int>& pinned,
                                    const char* who) {
    if (pinned.empty()) {
        throw DomainError(std::string(who) + ": pinned set is empty, the Laplacian is singular");
    }
    const int n = g.vertex_count();
    std::vector<char> is_pinned(static_cast<std::size_t>(n), 0);
    for (int v : pinned) {
        require(v >= 0 && v < n, std::string(who) + ": pinned vertex out of range");
        is_pinned[v] = 1;
    }
    auto comp = g.components();
    std::vector<char> comp_pinned(static_cast<std::size_t>(n), 0);
    for (int v : pinned) comp_pinned[comp[v]] = 1;
    Partition p;
    p.index.assign(static_cast<std::size_t>(n), -1);
    for (int v = 0; v < n; ++v) {
        if (is_pinned[v]) continue;
        if (!comp_pinned[comp[v]]) {
            std::ostringstream os;
            os << who << ": vertex " << v
               << " lies in a component without a pinned vertex, the reduced Laplacian is singular";
            throw DomainError(os.str());
        }
        p.index[v] = static_cast<int>(p.free.size());
        p.free.push_back(v);
    }
    return p;
}

inline Eigen::MatrixXd reduced_laplacian(const WeightedGraph& g, const Partition& p) {
    const int k = static_cast<int>(p.free.size());
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
    for (const Edge& e : g.edges()) {
        int iu = p.index[e.u];
        int iv = p.index[e.v];
        if (iu >= 0) L(iu, iu) += e.c;
        if (iv >= 0) L(iv, iv) += e.c;
        if (iu >= 0 && iv >= 0) {
            L(iu, iv) -= e.c;
            L(iv, iu) -= e.c;
        }
    }
    return L;
}

inline double log_det_spd(const Eigen::MatrixXd& A, const char* who) {
    if (A.rows() == 0) return 0.0;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) {
        throw NumericalError(std::string(who) + ": LDLT factorization failed");
    }
    auto d = ldlt.vectorD();
    double s = 0.0;
    for (int i = 0; i < d.size(); ++i) {
        if (!(d[i] > 0.0)) {
            std::ostringstream os;
            os << who << ": reduced Laplacian is not positive definite (pivot " << i << " = " << d[i]
               << ")";
            throw NumericalError(os.str());
        }
        s += std::log(d[i]);
    }
    return s;
}

} // namespace detail

inline double log_reduced_determinant(const WeightedGraph& g, const std::vector<int>& pinned) {
    auto p = detail::partition_vertices(g, pinned, "reduced_determinant");
    return detail::log_det_spd(detail::reduced_laplacian(g, p), "reduced_determinant");
}

inline double reduced_determinant(const WeightedGraph& g, const std::vector<int>& pinned) {
    return std::exp(log_reduced_determinant(g, pinned));
}

inline constexpr int spanning_tree_vertex_guard = 14;

namespace detail {

struct DenseMultigraph {
    int n = 0;
    std::vector<double> w; // n*n symmetric, zero diagonal
    std::vector<char> alive;
    double& at(int a, int b) { return w[static_cast<std::size_t>(a) * n + b]; }
    double at(int a, int b) const { return w[static_cast<std::size_t>(a) * n + b]; }
};

// Sum over spanning trees of products of edge weights by deletion/contraction.
inline double tree_sum_rec(DenseMultigraph g, int alive_count) {
    double factor = 1.0;
    for (;;) {
        if (alive_count == 1) return factor;
        int best = -1;
        int best_deg = std::numeric_limits<int>::max();
        for (int v = 0; v < g.n; ++v) {
            if (!g.alive[v]) continue;
            int d = 0;
            for (int x = 0; x < g.n; ++x)
                if (g.alive[x] && g.at(v, x) > 0.0) ++d;
            if (d == 0) return 0.0;
            if (d < best_deg) {
                best_deg = d;
                best = v;
            }
        }
        int nb = -1;
        for (int x = 0; x < g.n; ++x)
            if (g.alive[x] && g.at(best, x) > 0.0) {
                nb = x;
                break;
            }
        if (best_deg == 1) {
            // A pendant edge belongs to every spanning tree.
            factor *= g.at(best, nb);
            g.at(best, nb) = g.at(nb, best) = 0.0;
            g.alive[best] = 0;
            --alive_count;
            continue;
        }
        const double c = g.at(best, nb);
        DenseMultigraph contracted = g;
        for (int x = 0; x < g.n; ++x) {
            if (!g.alive[x] || x == best || x == nb) continue;
            double add = contracted.at(best, x);
            if (add > 0.0) {
                contracted.at(nb, x) += add;
                contracted.at(x, nb) += add;
            }
            contracted.at(best, x) = contracted.at(x, best) = 0.0;
        }
        contracted.at(best, nb) = contracted.at(nb, best) = 0.0;
        contracted.alive[best] = 0;
        g.at(best, nb) = g.at(nb, best) = 0.0;
        double with_edge = c * tree_sum_rec(std::move(contracted), alive_count - 1);
        return factor * (with_edge + tree_sum_rec(std::move(g), alive_count));
    }
}

inline DenseMultigraph dense_of(const WeightedGraph& g, bool unit) {
    DenseMultigraph d;
    d.n = g.vertex_count();
    d.w.assign(static_cast<std::size_t>(d.n) * d.n, 0.0);
    d.alive.assign(static_cast<std::size_t>(d.n), 1);
    for (const Edge& e : g.edges()) {
        double c = unit ? 1.0 : e.c;
        d.at(e.u, e.v) += c;
        d.at(e.v, e.u) += c;
    }
    return d;
}

inline void check_tree_guard(const WeightedGraph& g, const char* who) {
    if (g.vertex_count() > spanning_tree_vertex_guard) {
        std::ostringstream os;
        os << who << ": |V| = " << g.vertex_count() << " exceeds the enumeration guard "
           << spanning_tree_vertex_guard << "; use reduced_determinant";
        throw CapacityError(os.str());
    }
}

} // namespace detail

// Exhaustive weighted spanning-tree sum; zero for a disconnected graph.
inline double spanning_tree_sum(const WeightedGraph& g) {
    detail::check_tree_guard(g, "spanning_tree_sum");
    return detail::tree_sum_rec(detail::dense_of(g, false), g.vertex_count());
}

struct TreeCountBound {
    std::uint64_t count = 0;
    double bound = 0.0; // min over k of prod_i d_i / d_k
};

inline TreeCountBound tree_count_bound(const WeightedGraph& g) {
    detail::check_tree_guard(g, "tree_count_bound");
    TreeCountBound r;
    r.count = static_cast<std::uint64_t>(
        std::llround(detail::tree_sum_rec(detail::dense_of(g, true), g.vertex_count())));
    auto d = g.degrees();
    double prod = 1.0;
    int dmax = 0;
    for (int x : d) {
        prod *= x;
        dmax = std::max(dmax, x);
    }
    r.bound = dmax > 0 ? prod / dmax : (g.vertex_count() == 1 ? 1.0 : 0.0);
    return r;
}

struct GffClosedForm {
    double log_partition = 0.0;
    double log_reduced_det = 0.0;
    double reduced_det = 0.0;
    std::optional<double> tree_sum; // present for a single pin under the guard
};

// Planar GFF partition function exp(-1/2 sum c |grad phi|^2) with the pinned
// vertices fixed at the origin.
inline GffClosedForm gff_log_partition(const WeightedGraph& g, const std::vector<int>& pinned,
                                       bool with_tree_sum = true) {
    auto p = detail::partition_vertices(g, pinned, "gff_log_partition");
    GffClosedForm r;
    r.log_reduced_det = detail::log_det_spd(detail::reduced_laplacian(g, p), "gff_log_partition");
    r.reduced_det = std::exp(r.log_reduced_det);
    r.log_partition =
        static_cast<double>(p.free.size()) * std::log(2.0 * std::numbers::pi) - r.log_reduced_det;
    if (with_tree_sum && pinned.size() == 1 && g.vertex_count() <= spanning_tree_vertex_guard) {
        r.tree_sum = spanning_tree_sum(g);
    }
    return r;
}

namespace detail {

inline std::vector<int> keys_of(const BoundaryValues& bv) {
    std::vector<int> k;
    k.reserve(bv.size());
    for (const auto& [v, _] : bv) k.push_back(v);
    return k;
}

} // namespace detail

inline PlanarField harmonic_extension(const WeightedGraph& g, const BoundaryValues& values) {
    auto pinned = detail::keys_of(values);
    auto p = detail::partition_vertices(g, pinned, "harmonic_extension");
    const int k = static_cast<int>(p.free.size());
    PlanarField H(static_cast<std::size_t>(g.vertex_count()));
    double zmax = 0.0;
    for (const auto& [v, z] : values) {
        H[v] = z;
        zmax = std::max({zmax, std::abs(z.x), std::abs(z.y)});
    }
    if (k == 0) return H;
    Eigen::MatrixXd A = detail::reduced_laplacian(g, p);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k, 2);
    for (const Edge& e : g.edges()) {
        int iu = p.index[e.u];
        int iv = p.index[e.v];
        if (iu >= 0 && iv < 0) {
            rhs(iu, 0) += e.c * H[e.v].x;
            rhs(iu, 1) += e.c * H[e.v].y;
        } else if (iv >= 0 && iu < 0) {
            rhs(iv, 0) += e.c * H[e.u].x;
            rhs(iv, 1) += e.c * H[e.u].y;
        }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw NumericalError("harmonic_extension: factorization failed");
    Eigen::MatrixXd X = ldlt.solve(rhs);
    X += ldlt.solve(rhs - A * X); // one step of iterative refinement
    for (int i = 0; i < k; ++i) H[p.free[i]] = {X(i, 0), X(i, 1)};

    double res = (A * X - rhs).cwiseAbs().maxCoeff();
    double scale = std::max(g.max_conductance(), 1e-300) * std::max(zmax, 1e-300);
    if (!(res <= 1e-12 * scale) && res > 0.0) {
        std::ostringstream os;
        os << "harmonic_extension: interior residual " << res << " exceeds 1e-12 * " << scale;
        throw NumericalError(os.str());
    }
    return H;
}

inline double dirichlet_energy(const WeightedGraph& g, const PlanarField& f) {
    require(static_cast<int>(f.size()) == g.vertex_count(),
            "dirichlet_energy: field must be defined on every vertex");
    double s = 0.0;
    for (const Edge& e : g.edges()) s += e.c * norm2(f[e.u] - f[e.v]);
    return s;
}

// (L g)(u) = sum_v c_uv (g(u) - g(v)), for planar g.
inline PlanarField apply_laplacian(const WeightedGraph& g, const PlanarField& f) {
    PlanarField out(f.size());
    for (const Edge& e : g.edges()) {
        Point d = f[e.u] - f[e.v];
        out[e.u] = out[e.u] + e.c * d;
        out[e.v] = out[e.v] - e.c * d;
    }
    return out;
}

struct IbpSides {
    double lhs = 0.0;
    double rhs = 0.0;
};

inline IbpSides graph_ibp_check(const WeightedGraph& g, const PlanarField& f, const PlanarField& h) {
    require(static_cast<int>(f.size()) == g.vertex_count() &&
                static_cast<int>(h.size()) == g.vertex_count(),
            "graph_ibp_check: fields must be defined on every vertex");
    IbpSides s;
    for (const Edge& e : g.edges()) {
        Point df = f[e.u] - f[e.v];
        Point dh = h[e.u] - h[e.v];
        s.lhs += e.c * (df.x * dh.x + df.y * dh.y);
    }
    PlanarField Lh = apply_laplacian(g, h);
    for (std::size_t u = 0; u < f.size(); ++u) s.rhs += f[u].x * Lh[u].x + f[u].y * Lh[u].y;
    return s;
}

// Splits the pinned Gaussian integral into the zero-boundary partition
// function and the Dirichlet energy of the harmonic extension.
struct PinnedGaussian {
    double log_partition_zero = 0.0;
    double energy = 0.0;

    double log_value(double alpha) const { return log_partition_zero - 0.5 * alpha * alpha * energy; }
};

inline PinnedGaussian pinned_gaussian(const WeightedGraph& g, const BoundaryValues& values) {
    PinnedGaussian r;
    r.log_partition_zero = gff_log_partition(g, detail::keys_of(values), false).log_partition;
    r.energy = dirichlet_energy(g, harmonic_extension(g, values));
    return r;
}

// log of the integral of exp(-1/2 sum c |grad phi|^2) over the free vertices
// with the boundary held at alpha times the given values.
inline double pinned_gaussian_integral(const WeightedGraph& g, const BoundaryValues& values,
                                       double alpha) {
    return pinned_gaussian(g, values).log_value(alpha);
}

} // namespace shf
