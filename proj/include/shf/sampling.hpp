#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace shf {

// Ordered times kept as start points and gaps, so that gaps far below the
// spacing of doubles near the start points stay exact.  log_u carries gaps
// that underflow.
struct GapGrid {
    std::vector<double> a;
    std::vector<double> u;
    std::vector<double> log_u;

    int m() const { return static_cast<int>(a.size()); }
    double b(int r) const { return a[r] + u[r]; } // r from 0

    void resize(int m) {
        a.resize(static_cast<std::size_t>(m));
        u.resize(static_cast<std::size_t>(m));
        log_u.resize(static_cast<std::size_t>(m));
    }
};

// Density proportional to 1/(u log^2(e/u)) on (0, u_max] with u_max <= 1.
class LogSingularGap {
public:
    explicit LogSingularGap(double u_max) : u_max_(u_max), w0_(1.0 - std::log(u_max)) {
        require(u_max > 0.0 && u_max <= 1.0, "LogSingularGap: u_max must lie in (0, 1]");
    }

    // Returns log u.  F(u) = w0 / log(e/u), inverted.
    double sample_log(Rng& rng) const { return std::min(std::log(u_max_), 1.0 - w0_ / rng.uniform()); }

    double sample(Rng& rng) const { return std::exp(sample_log(rng)); }

    double log_density_at_log(double log_u) const {
        if (!(log_u <= std::log(u_max_)) || std::isinf(log_u))
            return -std::numeric_limits<double>::infinity();
        return std::log(w0_) - log_u - 2.0 * std::log(1.0 - log_u);
    }

    double log_density(double u) const {
        if (!(u > 0.0) || u > u_max_) return -std::numeric_limits<double>::infinity();
        return log_density_at_log(std::log(u));
    }

    double u_max() const { return u_max_; }

private:
    double u_max_;
    double w0_;
};

inline double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

namespace detail {
inline double log_add(double x, double y) {
    if (x == -std::numeric_limits<double>::infinity()) return y;
    if (y == -std::numeric_limits<double>::infinity()) return x;
    double mx = std::max(x, y);
    return mx + std::log(std::exp(x - mx) + std::exp(y - mx));
}
} // namespace detail

// Ordered times lo < a_1 < b_1 < ... < a_m < b_m < lo + len drawn from a
// defensive mixture of the uniform law on the simplex and a law whose gaps
// b_r - a_r follow LogSingularGap.
class SimplexTimeSampler {
public:
    SimplexTimeSampler(int m, double lo, double len, double mix_uniform = 0.5)
        : m_(m), lo_(lo), len_(len), lambda_(mix_uniform),
          gap_(std::min(1.0, 1.0 / std::max(m, 1))) {
        require(m >= 1, "SimplexTimeSampler: m must be >= 1");
        require(len > 0.0, "SimplexTimeSampler: len must be positive");
        require(mix_uniform >= 0.0 && mix_uniform <= 1.0, "SimplexTimeSampler: bad mixture weight");
        log_unif_ = log_factorial(2 * m) - 2.0 * m * std::log(len);
        buf_.resize(static_cast<std::size_t>(2 * m));
    }

    int m() const { return m_; }

    // Fills g; returns log q at the drawn point.
    double sample(Rng& rng, GapGrid& g) {
        g.resize(m_);
        if (rng.uniform() < lambda_) {
            for (int k = 0; k < 2 * m_; ++k) buf_[k] = rng.uniform();
            std::sort(buf_.begin(), buf_.end());
            for (int r = 0; r < m_; ++r) {
                g.a[r] = lo_ + len_ * buf_[2 * r];
                g.u[r] = len_ * (buf_[2 * r + 1] - buf_[2 * r]);
                g.log_u[r] = std::log(g.u[r]);
            }
        } else {
            double used = 0.0;
            for (int r = 0; r < m_; ++r) {
                double lu = gap_.sample_log(rng);
                g.log_u[r] = lu; // normalised for now
                used += std::exp(lu);
            }
            double R = std::max(0.0, 1.0 - used);
            for (int r = 0; r < m_; ++r) buf_[r] = rng.uniform();
            std::sort(buf_.begin(), buf_.begin() + m_);
            double shift = 0.0;
            for (int r = 0; r < m_; ++r) {
                double un = std::exp(g.log_u[r]);
                g.a[r] = lo_ + len_ * (buf_[r] * R + shift);
                shift += un;
                g.u[r] = len_ * un;
                g.log_u[r] += std::log(len_);
            }
        }
        return log_density(g);
    }

    double log_density(const GapGrid& g) const {
        double lq_u = lambda_ > 0.0 ? std::log(lambda_) + log_unif_
                                    : -std::numeric_limits<double>::infinity();
        double lq_is = -std::numeric_limits<double>::infinity();
        if (lambda_ < 1.0) {
            double s = 0.0;
            double used = 0.0;
            for (int r = 0; r < m_; ++r) {
                used += g.u[r] / len_;
                s += gap_.log_density_at_log(g.log_u[r] - std::log(len_));
            }
            double R = 1.0 - used;
            if (std::isfinite(s) && R > 0.0) {
                lq_is = std::log1p(-lambda_) + s + log_factorial(m_) - m_ * std::log(R) -
                        2.0 * m_ * std::log(len_);
            }
        }
        return detail::log_add(lq_u, lq_is);
    }

private:
    int m_;
    double lo_;
    double len_;
    double lambda_;
    LogSingularGap gap_;
    double log_unif_ = 0.0;
    std::vector<double> buf_;
};

// Mixture of the uniform law and LogSingularGap on (0, u_max].
class GapMixture {
public:
    explicit GapMixture(double u_max, double mix_uniform = 0.5)
        : u_max_(u_max), lambda_(mix_uniform), is_(u_max) {
        require(mix_uniform >= 0.0 && mix_uniform <= 1.0, "GapMixture: bad mixture weight");
    }

    // Returns log u.
    double sample_log(Rng& rng) const {
        return rng.uniform() < lambda_ ? std::log(u_max_ * rng.uniform()) : is_.sample_log(rng);
    }

    double log_density_at_log(double log_u) const {
        if (!(log_u <= std::log(u_max_)) || std::isinf(log_u))
            return -std::numeric_limits<double>::infinity();
        double lu = lambda_ > 0.0 ? std::log(lambda_) - std::log(u_max_)
                                  : -std::numeric_limits<double>::infinity();
        double li = lambda_ < 1.0 ? std::log1p(-lambda_) + is_.log_density_at_log(log_u)
                                  : -std::numeric_limits<double>::infinity();
        return detail::log_add(lu, li);
    }

    double u_max() const { return u_max_; }

private:
    double u_max_;
    double lambda_;
    LogSingularGap is_;
};

} // namespace shf
