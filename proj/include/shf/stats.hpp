#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace shf {

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

// Welford accumulator with Chan's merge rule.
class RunningStats {
public:
    void add(double x) {
        ++n_;
        double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }

    void merge(const RunningStats& o) {
        if (o.n_ == 0) return;
        if (n_ == 0) {
            *this = o;
            return;
        }
        double n = static_cast<double>(n_ + o.n_);
        double d = o.mean_ - mean_;
        mean_ += d * static_cast<double>(o.n_) / n;
        m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
        n_ += o.n_;
    }

    std::uint64_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double std_error() const {
        return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
    }
    Estimate estimate() const { return {mean(), std_error()}; }

private:
    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

// Streaming mean of positive weights supplied as logarithms.  Both the first
// and second moments are kept relative to a running maximum, so weights that
// span hundreds of orders of magnitude never overflow.
class LogMeanAccumulator {
public:
    void add(double log_w) {
        ++n_;
        if (log_w == -std::numeric_limits<double>::infinity()) return;
        if (log_w > shift_) {
            if (std::isfinite(shift_)) {
                double r = std::exp(shift_ - log_w);
                s1_ *= r;
                s2_ *= r * r;
            }
            shift_ = log_w;
        }
        double e = std::exp(log_w - shift_);
        s1_ += e;
        s2_ += e * e;
    }

    void merge(const LogMeanAccumulator& o) {
        n_ += o.n_;
        if (o.s1_ == 0.0) return;
        if (s1_ == 0.0) {
            shift_ = o.shift_;
            s1_ = o.s1_;
            s2_ = o.s2_;
            return;
        }
        if (o.shift_ > shift_) {
            double r = std::exp(shift_ - o.shift_);
            s1_ = s1_ * r + o.s1_;
            s2_ = s2_ * r * r + o.s2_;
            shift_ = o.shift_;
        } else {
            double r = std::exp(o.shift_ - shift_);
            s1_ += o.s1_ * r;
            s2_ += o.s2_ * r * r;
        }
    }

    std::uint64_t count() const { return n_; }

    double log_mean() const {
        if (n_ == 0 || s1_ == 0.0) return -std::numeric_limits<double>::infinity();
        return shift_ + std::log(s1_) - std::log(static_cast<double>(n_));
    }

    // Squared relative standard error of the mean.
    double rel_variance_of_mean() const {
        if (n_ < 2 || s1_ == 0.0) return 0.0;
        double n = static_cast<double>(n_);
        double ratio = n * s2_ / (s1_ * s1_);
        return std::max(0.0, (ratio - 1.0) / (n - 1.0));
    }

    Estimate estimate() const {
        double m = std::exp(log_mean());
        return {m, m * std::sqrt(rel_variance_of_mean())};
    }

private:
    std::uint64_t n_ = 0;
    double shift_ = -std::numeric_limits<double>::infinity();
    double s1_ = 0.0;
    double s2_ = 0.0;
};

// Kolmogorov-Smirnov distance between the empirical law of `xs` and Exp(1).
inline double ks_distance_exponential(std::vector<double> xs) {
    if (xs.empty()) return 1.0;
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double f = xs[i] <= 0.0 ? 0.0 : -std::expm1(-xs[i]);
        d = std::max(d, std::max(static_cast<double>(i + 1) / n - f,
                                 f - static_cast<double>(i) / n));
    }
    return d;
}

inline double log_sum_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

} // namespace shf
