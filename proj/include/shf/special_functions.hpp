#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "errors.hpp"
#include "geometry.hpp"

namespace shf {

inline constexpr double euler_gamma = 0.57721566490153286061;

// Dimensionless time gap, seen by the heat kernel and the renewal density.
inline double heat_kernel(double t, Point x) {
    require(t > 0.0 && std::isfinite(t), "heat_kernel: t must be positive");
    return std::exp(-norm2(x) / (2.0 * t)) / (2.0 * std::numbers::pi * t);
}

inline double log_heat_kernel(double t, Point x) {
    require(t > 0.0 && std::isfinite(t), "log_heat_kernel: t must be positive");
    return -norm2(x) / (2.0 * t) - std::log(2.0 * std::numbers::pi * t);
}

struct DickmanParams {
    double theta = 0.0;
    double euler_gamma = shf::euler_gamma;
    double s_max = 0.0; // initial truncation point, 0 picks one from the decay scale
    double rel_tol = 1e-10;

    void validate() const {
        require(std::isfinite(theta), "DickmanParams: theta must be finite");
        require(std::abs(euler_gamma - shf::euler_gamma) <= 1e-12,
                "DickmanParams: euler_gamma differs from the Euler-Mascheroni constant");
        require(rel_tol > 0.0 && rel_tol <= 1e-3, "DickmanParams: rel_tol must lie in (0, 1e-3]");
        require(s_max >= 0.0 && std::isfinite(s_max), "DickmanParams: s_max must be >= 0");
    }
};

inline constexpr double tested_theta_bound = 5.0;

inline bool theta_in_tested_range(double theta) {
    return std::abs(theta) <= tested_theta_bound;
}

struct QuadratureReport {
    double value = 0.0;
    double error_estimate = 0.0; // summed panel error estimates
    double tail_bound = 0.0;     // certified bound on the truncated tail
    double s_max = 0.0;
    int panels = 0;
};

namespace detail {

inline double lgamma1p(double s) {
#if defined(__GLIBC__)
    int sign = 0;
    return ::lgamma_r(1.0 + s, &sign);
#else
    return std::lgamma(1.0 + s);
#endif
}

// Bound on the tail of s^power e^{-kappa s}/Gamma(s+1) over [S, inf).
inline double dickman_tail_bound(int power, double kappa, double S) {
    double best = std::numeric_limits<double>::infinity();
    // Gamma(s+1) >= 0.8856 for s >= 0.
    if (kappa > 0.0) {
        double e = std::exp(-kappa * S) / 0.8856;
        best = power == 0 ? e / kappa : e * (S / kappa + 1.0 / (kappa * kappa));
    }
    // Gamma(s+1) >= (s/e)^s, so the integrand is below s^power e^{-r s} past S.
    double r = std::log(S) + kappa - 1.0;
    if (S >= 1.0 && r > 0.0) {
        double e = std::exp(-r * S);
        double b = power == 0 ? e / r : e * (S / r + 1.0 / (r * r));
        best = std::min(best, b);
    }
    return best;
}

inline constexpr double dickman_series_kappa = 50.0;

// Large kappa: integrate the Taylor series of 1/Gamma(1+s) term by term.
inline QuadratureReport dickman_moment_series(int power, double kappa) {
    static constexpr std::array<double, 14> c{
        1.0,                 0.5772156649015329,  -0.6558780715202538, -0.0420026350340952,
        0.1665386113822915,  -0.0421977345555443, -0.0096219715278770, 0.0072189432466630,
        -0.0011651675918591, -0.0002152416741149, 0.0001280502823882,  -0.0000201348547807,
        -0.0000012504934821, 0.0000011330272320};
    QuadratureReport rep;
    double fact = std::tgamma(power + 1.0);
    double scale = 1.0 / kappa;
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < c.size(); ++k) {
        sum += c[k] * fact;
        fact *= (power + k + 1.0) * scale;
    }
    rep.value = sum / std::pow(kappa, power + 1);
    rep.error_estimate = std::abs(c.back()) * fact * 2.0 / std::pow(kappa, power + 1);
    rep.panels = 0;
    return rep;
}

inline QuadratureReport dickman_moment(int power, double kappa, double rel_tol, double s_init) {
    using boost::math::quadrature::gauss_kronrod;
    if (kappa >= dickman_series_kappa && s_init == 0.0) return dickman_moment_series(power, kappa);
    auto f = [power, kappa](double s) {
        double l = -kappa * s - lgamma1p(s);
        if (power == 1) {
            if (s <= 0.0) return 0.0;
            l += std::log(s);
        }
        return std::exp(l);
    };

    const double p0 = 1.0 / std::max(kappa, 1.0);
    QuadratureReport rep;
    double lo = 0.0;
    double hi = p0;
    double panel_tol = std::max(rel_tol * 1e-2, 1e-15);
    auto add_panel = [&](double a, double b) {
        double err = 0.0;
        double v = gauss_kronrod<double, 31>::integrate(f, a, b, 12, panel_tol, &err);
        rep.value += v;
        rep.error_estimate += err;
        ++rep.panels;
    };
    const double s_target = std::max(s_init, 16.0 * p0);
    while (hi < s_target) {
        add_panel(lo, hi);
        lo = hi;
        hi *= 2.0;
    }
    add_panel(lo, hi);
    for (;;) {
        rep.s_max = hi;
        rep.tail_bound = dickman_tail_bound(power, kappa, hi);
        if (rep.tail_bound <= 0.1 * rel_tol * rep.value) break;
        if (hi > 1e6) {
            std::ostringstream os;
            os << "renewal-density quadrature failed to certify its tail: kappa=" << kappa
               << " power=" << power << " s_max=" << hi << " value=" << rep.value
               << " tail_bound=" << rep.tail_bound;
            throw NumericalError(os.str());
        }
        lo = hi;
        hi *= 2.0;
        add_panel(lo, hi);
    }
    if (!(rep.value > 0.0) || !std::isfinite(rep.value) ||
        rep.error_estimate + rep.tail_bound > rel_tol * rep.value) {
        std::ostringstream os;
        os << "renewal-density quadrature did not converge: kappa=" << kappa << " power=" << power
           << " value=" << rep.value << " error_estimate=" << rep.error_estimate
           << " tail_bound=" << rep.tail_bound << " panels=" << rep.panels
           << " rel_tol=" << rel_tol;
        throw NumericalError(os.str());
    }
    return rep;
}

inline double dickman_kappa(const DickmanParams& p, double t) {
    return -std::log(t) + p.euler_gamma - p.theta;
}

inline void check_time(double t, const char* who) {
    if (!(t > 0.0 && t <= 1.0)) {
        std::ostringstream os;
        os << who << ": t must lie in (0, 1], got " << t;
        throw DomainError(os.str());
    }
}

} // namespace detail

// t * G_theta(t) together with quadrature diagnostics.
inline QuadratureReport g_theta_scaled_report(const DickmanParams& p, double t) {
    p.validate();
    detail::check_time(t, "g_theta");
    return detail::dickman_moment(1, detail::dickman_kappa(p, t), p.rel_tol, p.s_max);
}

inline double g_theta(const DickmanParams& p, double t) {
    return g_theta_scaled_report(p, t).value / t;
}

inline double log_g_theta(const DickmanParams& p, double t) {
    return std::log(g_theta_scaled_report(p, t).value) - std::log(t);
}

// log G_theta(t) from log t, for times too small to represent directly.
inline double log_g_theta_at_log(const DickmanParams& p, double log_t) {
    p.validate();
    if (!(log_t <= 0.0) || std::isinf(log_t)) {
        std::ostringstream os;
        os << "g_theta: log t must be finite and <= 0, got " << log_t;
        throw DomainError(os.str());
    }
    double kappa = -log_t + p.euler_gamma - p.theta;
    return std::log(detail::dickman_moment(1, kappa, p.rel_tol, p.s_max).value) - log_t;
}

inline QuadratureReport g_theta_integral_report(const DickmanParams& p, double t) {
    p.validate();
    detail::check_time(t, "g_theta_integral");
    return detail::dickman_moment(0, detail::dickman_kappa(p, t), p.rel_tol, p.s_max);
}

// Integral of G_theta over (0, t].
inline double g_theta_integral(const DickmanParams& p, double t) {
    return g_theta_integral_report(p, t).value;
}

inline DickmanParams dickman(double theta, double rel_tol = 1e-10) {
    DickmanParams p;
    p.theta = theta;
    p.rel_tol = rel_tol;
    return p;
}

} // namespace shf
