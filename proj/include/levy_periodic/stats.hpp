// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "levy_periodic/errors.hpp"

namespace levy_periodic::stats {

struct MeanEstimate {
    double mean = 0.0;
    double sd = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

inline MeanEstimate mean_estimate(const std::vector<double>& xs) {
    MeanEstimate m;
    m.n = xs.size();
    if (xs.empty()) return m;
    long double s = 0.0L;
    for (double x : xs) s += x;
    m.mean = static_cast<double>(s / xs.size());
    if (xs.size() > 1) {
        long double v = 0.0L;
        for (double x : xs) v += (x - m.mean) * static_cast<long double>(x - m.mean);
        m.sd = std::sqrt(static_cast<double>(v / (xs.size() - 1)));
        m.se = m.sd / std::sqrt(static_cast<double>(xs.size()));
    }
    return m;
}

/// Linear interpolation quantile of a sample (type 7).
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw EmptySampleError("quantile of an empty sample");
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

inline double normal_quantile(double p, double mean = 0.0, double sd = 1.0) {
    return boost::math::quantile(boost::math::normal_distribution<double>(mean, sd), p);
}

/// Two-sided Student t quantile (e.g. 0.975 for a 95% interval).
inline double t_quantile(double p, double dof) {
    return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

/// Q_KS(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-16 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Asymptotic p-value with Stephens' small-sample correction.
inline double ks_p_value(double d, double n_eff) {
    const double sn = std::sqrt(n_eff);
    return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

template <class Cdf>
TestResult ks_one_sample(std::vector<double> xs, Cdf&& cdf) {
    if (xs.empty()) throw EmptySampleError("KS test on an empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return {d, ks_p_value(d, n)};
}

inline TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw EmptySampleError("KS test on an empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(i / na - j / nb));
    }
    return {d, ks_p_value(d, na * nb / (na + nb))};
}

/// Marsaglia & Marsaglia (2004) asymptotic distribution of A^2.
inline double ad_inf_cdf(double z) {
    if (z < 2.0)
        return std::exp(-1.2337141 / z) / std::sqrt(z) *
               (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z);
    return std::exp(-std::exp(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z));
}

/// Finite-n correction from the same reference.
inline double ad_cdf(double z, double n) {
    const double x = ad_inf_cdf(z);
    double fix;
    if (x > 0.8) {
        fix = (-130.2137 + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x) / n;
    } else {
        const double c = 0.01265 + 0.1757 / n;
        if (x < c) {
            double t = x / c;
            t = std::sqrt(t) * (1.0 - t) * (49.0 * t - 102.0);
            fix = t * (0.0037 / (n * n) + 0.00078 / n + 0.00006);
        } else {
            double t = (x - c) / (0.8 - c);
            t = -0.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
            fix = t * (0.04213 / n + 0.01365 / (n * n));
        }
    }
    return x + fix;
}

/// Anderson-Darling test against a fully specified continuous cdf.
template <class Cdf>
TestResult anderson_darling(std::vector<double> xs, Cdf&& cdf) {
    if (xs.empty()) throw EmptySampleError("AD test on an empty sample");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    constexpr double tiny = 1e-300;
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const double fi = std::clamp(cdf(xs[i]), tiny, 1.0 - 1e-16);
        const double fr = std::clamp(cdf(xs[n - 1 - i]), tiny, 1.0 - 1e-16);
        s += (2.0 * i + 1.0) * (std::log(fi) + std::log1p(-fr));
    }
    const double a2 = -static_cast<double>(n) - static_cast<double>(s / n);
    return {a2, std::clamp(1.0 - ad_cdf(a2, static_cast<double>(n)), 0.0, 1.0)};
}

struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
    double slope_se = 0.0;
    double intercept_se = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope x.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ParameterError("linear fit needs >= 2 paired points");
    LinearFit fit;
    fit.n = x.size();
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw ParameterError("linear fit needs distinct x values");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - fit.intercept - fit.slope * x[i];
        sse += r * r;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    if (x.size() > 2) {
        const double s2 = sse / (n - 2.0);
        fit.slope_se = std::sqrt(s2 / sxx);
        fit.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return fit;
}

}  // namespace levy_periodic::stats
