// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "levy_periodic/empirical_measure.hpp"
#include "levy_periodic/errors.hpp"
#include "levy_periodic/measure_tools.hpp"
#include "levy_periodic/parallel.hpp"
#include "levy_periodic/rng.hpp"
#include "levy_periodic/sde_engine.hpp"
#include "levy_periodic/stats.hpp"

namespace levy_periodic {

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

/// Phi together with its weighted norm and centering constant. Calling the
/// observable evaluates the centered version Phi(x) - center.
template <int Dim>
struct Observable {
    std::function<double(const Vec<Dim>&)> phi;
    double gamma = 1.0;
    double bl_norm = std::numeric_limits<double>::infinity();
    double center = 0.0;

    double operator()(const Vec<Dim>& x) const { return phi(x) - center; }
    double raw(const Vec<Dim>& x) const { return phi(x); }
};

template <int Dim>
Observable<Dim> make_observable(std::function<double(const Vec<Dim>&)> phi, double bl_norm, double gamma = 1.0) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in (0, 1]");
    if (!std::isfinite(bl_norm) || bl_norm < 0.0) throw ParameterError("bL norm must be finite and non-negative");
    return Observable<Dim>{std::move(phi), gamma, bl_norm, 0.0};
}

/// Grid estimate of
///   sup |phi(x)| / e^{|x|^2}
///   + sup_{0 < |x1 - x2| <= 1} |phi(x1) - phi(x2)| / (|x1 - x2| (e^{|x1|^2} + e^{|x2|^2}))
/// over the box [lo, hi] with points_per_axis points per axis.
template <int Dim>
double estimate_bl_gamma_norm(const std::function<double(const Vec<Dim>&)>& phi, const Vec<Dim>& lo,
                              const Vec<Dim>& hi, int points_per_axis) {
    if (points_per_axis < 1) throw ParameterError("grid must be nonempty");
    const auto pts = detail::box_points<Dim>(lo, hi, points_per_axis);
    std::vector<double> val(pts.size()), wt(pts.size());
    double sup0 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        val[i] = phi(pts[i]);
        wt[i] = std::exp(pts[i].squaredNorm());
        sup0 = std::max(sup0, std::abs(val[i]) / wt[i]);
    }
    double sup1 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double dx = (pts[i] - pts[j]).norm();
            if (dx <= 0.0 || dx > 1.0 + 1e-12) continue;
            sup1 = std::max(sup1, std::abs(val[i] - val[j]) / (dx * (wt[i] + wt[j])));
        }
    }
    return sup0 + sup1;
}

/// Sets center = <mu_star, phi>, so the observable evaluates Phi~.
template <int Dim>
Observable<Dim> center_observable(Observable<Dim> obs, const EmpiricalMeasure& mu_star) {
    obs.center = 0.0;
    obs.center = mu_star.expectation([&](const auto& x) { return obs.phi(Vec<Dim>(x)); });
    return obs;
}

// ---------------------------------------------------------------------------
// Running integrals of an observable
// ---------------------------------------------------------------------------

/// Accumulates int_0^t fn(X(u)) du by the trapezoid rule with left limits at
/// grid points, recording the value at the requested (aligned) times.
template <int Dim, class Fn>
class IntegralObserver {
public:
    IntegralObserver(const Fn& fn, std::vector<double> record_times, double tol)
        : fn_(fn), times_(std::move(record_times)), tol_(tol) {}

    void begin(double t, const Vec<Dim>& x) {
        prev_ = fn_(x);
        x_ = x;
        record(t);
    }

    void step(const StepView<Dim>& s) {
        const double left = fn_(s.x_left);
        acc_ += 0.5L * static_cast<long double>(s.t1 - s.t0) * (prev_ + left);
        prev_ = s.jump ? fn_(s.x1) : left;
        x_ = s.x1;
        if (s.aligned) record(s.t1);
    }

    double total() const { return static_cast<double>(acc_); }
    const std::vector<double>& values() const { return values_; }
    const Vec<Dim>& state() const { return x_; }

private:
    void record(double t) {
        while (next_ < times_.size() && std::abs(times_[next_] - t) <= tol_) {
            values_.push_back(static_cast<double>(acc_));
            ++next_;
        }
    }

    Fn fn_;
    std::vector<double> times_;
    double tol_;
    std::vector<double> values_;
    std::size_t next_ = 0;
    long double acc_ = 0.0L;
    double prev_ = 0.0;
    Vec<Dim> x_;
};

/// Running integral of fn over a recorded path, on the path grid.
template <int Dim, class Fn>
std::vector<double> running_integral(const SamplePath<Dim>& path, const Fn& fn) {
    std::vector<double> out(path.size());
    long double acc = 0.0L;
    out[0] = 0.0;
    double prev = fn(path.states[0]);
    for (std::size_t k = 1; k < path.size(); ++k) {
        const double left = fn(path.left_states[k]);
        acc += 0.5L * static_cast<long double>(path.grid[k] - path.grid[k - 1]) * (prev + left);
        out[k] = static_cast<double>(acc);
        prev = path.jump_counts[k] > 0 ? fn(path.states[k]) : left;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corrector Pi
// ---------------------------------------------------------------------------

/// Restart Monte Carlo settings for Pi(x) = int_0^inf E_x Phi~(X(u)) du.
struct PiConfig {
    double T_cut = 10.0;
    std::size_t inner_n = 16;
    double dt_max = 0.01;
    std::uint64_t seed = 0;
};

struct PiEstimate {
    double value = 0.0;
    double tail_bound = 0.0;
    double standard_error = 0.0;
};

/// bL_norm * C * e^{2|x|^2} * (5 / gamma) * e^{-gamma T_cut / 5}, with (C, gamma)
/// from a contraction fit.
inline double pi_tail_bound(double bl_norm, double x_sq, double T_cut, const ContractionFit& fit) {
    if (!(fit.fitted_gamma > 0.0)) throw ParameterError("tail bound needs a positive fitted gamma");
    if (bl_norm == 0.0) return 0.0;
    return bl_norm * fit.contraction_C * std::exp(2.0 * x_sq) * (5.0 / fit.fitted_gamma) *
           std::exp(-fit.fitted_gamma * T_cut / 5.0);
}

/// Per-inner-path integrals int_0^T_cut Phi~(X_x(u)) du, started at phase 0.
/// Inner path k uses derive_seed(cfg.seed, inner, k), so estimates at
/// different x share their noise.
template <int Dim>
std::vector<double> pi_samples(const PeriodicModel<Dim>& model, const Vec<Dim>& x, const Observable<Dim>& obs,
                               const PiConfig& cfg) {
    if (!(cfg.T_cut > 0.0)) throw ParameterError("T_cut must be positive");
    if (cfg.inner_n < 1) throw ParameterError("inner_n must be >= 1");
    std::vector<double> out(cfg.inner_n);
    const double tol = 1e-9 * std::min(cfg.dt_max, model.tau);
    for (std::size_t k = 0; k < cfg.inner_n; ++k) {
        IntegralObserver<Dim, Observable<Dim>> io(obs, {}, tol);
        integrate(model, x, cfg.T_cut, cfg.dt_max, derive_seed(cfg.seed, StreamKey::inner, k), GridOptions{}, io);
        out[k] = io.total();
    }
    return out;
}

template <int Dim>
PiEstimate estimate_pi(const PeriodicModel<Dim>& model, const Vec<Dim>& x, const Observable<Dim>& obs,
                       const PiConfig& cfg, const ContractionFit& fit) {
    const auto est = stats::mean_estimate(pi_samples(model, x, obs, cfg));
    return {est.mean, pi_tail_bound(obs.bl_norm, x.squaredNorm(), cfg.T_cut, fit), est.se};
}

// ---------------------------------------------------------------------------
// Martingale decomposition
// ---------------------------------------------------------------------------

/// Index N runs over 0..N_max. M_values[0] = 0 and Z_values[0] = 0 (unused).
struct MartingaleDecomposition {
    double tau = 1.0;
    int N_max = 0;
    std::vector<double> Pi_values;    // Pi(N tau)
    std::vector<double> M_values;     // M_{N tau}
    std::vector<double> Z_values;     // Z_N = M_{N tau} - M_{(N-1) tau}
    std::vector<double> times;        // path grid up to N_max tau
    std::vector<double> running_integral;  // int_0^t Phi~
    std::vector<double> residual;     // R_{N tau, t}, N = floor(t / tau) capped at N_max
    double T_cut = 0.0;
    std::size_t inner_n = 0;
    double tail_bound = 0.0;          // max over N of the Pi tail bound

    double Z(int N) const { return Z_values.at(static_cast<std::size_t>(N)); }
};

/// Pi is evaluated at each X(N tau) with the same inner seeds for every N.
/// The path must be fully recorded and reach N_max tau.
template <int Dim>
MartingaleDecomposition martingale_decomposition(const PeriodicModel<Dim>& model, const SamplePath<Dim>& path,
                                                 const Observable<Dim>& obs, int N_max, const PiConfig& cfg,
                                                 const ContractionFit& fit) {
    if (N_max < 1) throw ParameterError("N_max must be >= 1");
    const double tau = model.tau;
    const double tol = 1e-9 * tau;
    if (path.horizon() < N_max * tau - tol) throw RangeError("path horizon shorter than N_max tau");

    MartingaleDecomposition dec;
    dec.tau = tau;
    dec.N_max = N_max;
    dec.T_cut = cfg.T_cut;
    dec.inner_n = cfg.inner_n;

    const long last = find_time(path.grid, N_max * tau, tol);
    if (last < 0) throw RangeError("N_max tau is not on the path grid");
    const auto integral = running_integral(path, obs);
    dec.times.assign(path.grid.begin(), path.grid.begin() + last + 1);
    dec.running_integral.assign(integral.begin(), integral.begin() + last + 1);

    std::vector<std::size_t> idx(static_cast<std::size_t>(N_max) + 1);
    for (int N = 0; N <= N_max; ++N) {
        const long k = find_time(path.grid, N * tau, tol);
        if (k < 0) throw RangeError("period boundary missing from path grid");
        idx[static_cast<std::size_t>(N)] = static_cast<std::size_t>(k);
        const auto& x = path.states[static_cast<std::size_t>(k)];
        const auto est = estimate_pi(model, x, obs, cfg, fit);
        dec.Pi_values.push_back(est.value);
        dec.tail_bound = std::max(dec.tail_bound, est.tail_bound);
    }
    const double pi0 = dec.Pi_values[0];
    for (int N = 0; N <= N_max; ++N) {
        const auto n = static_cast<std::size_t>(N);
        dec.M_values.push_back(N == 0 ? 0.0 : dec.Pi_values[n] - pi0 + integral[idx[n]]);
        dec.Z_values.push_back(N == 0 ? 0.0 : dec.M_values[n] - dec.M_values[n - 1]);
    }
    dec.residual.resize(dec.times.size());
    for (std::size_t k = 0; k < dec.times.size(); ++k) {
        const int N = std::min(N_max, static_cast<int>(std::floor(dec.times[k] / tau + 1e-9)));
        const auto n = static_cast<std::size_t>(N);
        dec.residual[k] = -dec.Pi_values[n] + pi0 + (integral[k] - integral[idx[n]]);
    }
    return dec;
}

/// n_paths fully recorded paths from xi over [0, N_max tau], each decomposed.
/// Path i uses path_seed(seed, i); its Pi estimates use inner seeds derived
/// from (seed, inner, i).
template <int Dim>
std::vector<MartingaleDecomposition> decompose_ensemble(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& xi,
                                                        const Observable<Dim>& obs, std::size_t n_paths, int N_max,
                                                        double dt_max, PiConfig cfg, const ContractionFit& fit,
                                                        std::uint64_t seed, unsigned threads = 0) {
    std::vector<MartingaleDecomposition> out(n_paths);
    parallel_for(n_paths, threads, [&](std::size_t i) {
        const auto x0 = xi.draw(initial_seed(seed, i));
        const auto path = integrate_path(model, x0, N_max * model.tau, dt_max, path_seed(seed, i));
        PiConfig c = cfg;
        c.seed = derive_seed(seed, StreamKey::inner, i);
        out[i] = martingale_decomposition(model, path, obs, N_max, c, fit);
    });
    return out;
}

struct LagCorrelation {
    int lag = 0;
    double correlation = 0.0;
    double standard_error = 0.0;
    bool within_3se = true;
};

/// Pooled correlation of (Z_N, Z_{N+k}) over paths and N.
inline std::vector<LagCorrelation> z_autocorrelation(const std::vector<MartingaleDecomposition>& decs, int max_lag) {
    std::vector<LagCorrelation> out;
    for (int k = 1; k <= max_lag; ++k) {
        std::vector<double> prod;
        long double s2a = 0.0L, s2b = 0.0L;
        for (const auto& d : decs) {
            for (int N = 1; N + k <= d.N_max; ++N) {
                const double a = d.Z(N), b = d.Z(N + k);
                prod.push_back(a * b);
                s2a += a * static_cast<long double>(a);
                s2b += b * static_cast<long double>(b);
            }
        }
        LagCorrelation lc;
        lc.lag = k;
        if (prod.size() >= 2 && s2a > 0 && s2b > 0) {
            const auto m = stats::mean_estimate(prod);
            const double scale = std::sqrt(static_cast<double>(s2a * s2b)) / static_cast<double>(prod.size());
            lc.correlation = m.mean / scale;
            lc.standard_error = m.se / scale;
            lc.within_3se = std::abs(lc.correlation) <= 3.0 * lc.standard_error;
        }
        out.push_back(lc);
    }
    return out;
}

struct MeanZeroCheck {
    std::vector<double> mean;  // ensemble mean of M_{N tau}, N = 1..N_max
    std::vector<double> standard_error;
    bool within_3se = true;
};

inline MeanZeroCheck martingale_mean_check(const std::vector<MartingaleDecomposition>& decs, int N_max) {
    MeanZeroCheck out;
    for (int N = 1; N <= N_max; ++N) {
        std::vector<double> v;
        for (const auto& d : decs) v.push_back(d.M_values.at(static_cast<std::size_t>(N)));
        const auto m = stats::mean_estimate(v);
        out.mean.push_back(m.mean);
        out.standard_error.push_back(m.se);
        if (std::abs(m.mean) > 3.0 * m.se) out.within_3se = false;
    }
    return out;
}

/// max |M_{N tau} + R_{N tau, t} - int_0^t Phi~| over the path grid.
inline double split_error(const MartingaleDecomposition& d) {
    double err = 0.0;
    for (std::size_t k = 0; k < d.times.size(); ++k) {
        const int N = std::min(d.N_max, static_cast<int>(std::floor(d.times[k] / d.tau + 1e-9)));
        err = std::max(err, std::abs(d.M_values[static_cast<std::size_t>(N)] + d.residual[k] - d.running_integral[k]));
    }
    return err;
}

// ---------------------------------------------------------------------------
// SLLN
// ---------------------------------------------------------------------------

/// int_0^t Phi~ at the given checkpoints for n_paths independent paths.
struct IntegralCurves {
    std::vector<double> times;
    std::vector<std::vector<double>> values;  // [path][checkpoint]
};

template <int Dim>
IntegralCurves observable_integrals(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& xi,
                                    const Observable<Dim>& obs, std::vector<double> checkpoints, std::size_t n_paths,
                                    double dt_max, std::uint64_t seed, unsigned threads = 0) {
    if (checkpoints.empty()) throw ParameterError("need at least one checkpoint");
    std::sort(checkpoints.begin(), checkpoints.end());
    if (checkpoints.front() <= 0.0) throw ParameterError("checkpoints must be positive");
    IntegralCurves out;
    out.times = checkpoints;
    out.values.resize(n_paths);
    const double tol = 1e-9 * std::min(dt_max, model.tau);
    GridOptions grid;
    grid.checkpoints = checkpoints;
    parallel_for(n_paths, threads, [&](std::size_t i) {
        IntegralObserver<Dim, Observable<Dim>> io(obs, checkpoints, tol);
        try {
            integrate(model, xi.draw(initial_seed(seed, i)), checkpoints.back(), dt_max, path_seed(seed, i), grid, io);
        } catch (const DivergenceError& e) {
            throw e.with_path(static_cast<long>(i));
        }
        out.values[i] = io.values();
    });
    return out;
}

struct CenterEstimate {
    double value = 0.0;           // <mu_star, phi>
    double standard_error = 0.0;  // across paths
    std::size_t n_paths = 0;
    int burn_in = 0;
    int periods = 0;
};

/// <mu_star, phi> as the post-burn-in time average of phi over whole periods,
/// averaged across independent paths. Much tighter than the mean of a
/// few-period empirical mu_star, which matters once the centered integral is
/// scaled by t^{1/2+eps} at long horizons.
template <int Dim>
CenterEstimate estimate_center(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& xi, const Observable<Dim>& obs,
                               int burn_in, int periods, std::size_t n_paths, double dt_max, std::uint64_t seed,
                               unsigned threads = 0) {
    if (burn_in < 1 || periods < 1) throw ParameterError("center estimate needs burn_in >= 1 and periods >= 1");
    if (n_paths < 2) throw ParameterError("center estimate needs at least two paths");
    Observable<Dim> raw = obs;
    raw.center = 0.0;
    const double t0 = burn_in * model.tau, t1 = (burn_in + periods) * model.tau;
    const auto curves = observable_integrals(model, xi, raw, {t0, t1}, n_paths, dt_max, seed, threads);
    std::vector<double> avg;
    for (const auto& v : curves.values) avg.push_back((v[1] - v[0]) / (t1 - t0));
    const auto m = stats::mean_estimate(avg);
    return {m.mean, m.se, n_paths, burn_in, periods};
}

template <int Dim>
Observable<Dim> center_observable(Observable<Dim> obs, const CenterEstimate& c) {
    obs.center = c.value;
    return obs;
}

struct SllnReport {
    double epsilon = 0.1;
    std::vector<double> times;
    std::vector<double> median;  // of t^{-(1/2+eps)} |int_0^t Phi~|
    std::vector<double> p90;
    std::vector<std::vector<double>> normalized;  // [path][checkpoint], signed
    double reference_time = 0.0;
    double p90_reference = 0.0;
    bool decaying = false;          // p90 at the last time below p90 at reference_time
    double sigma_hat = 0.0;
    double threshold_factor = 0.05;
    double threshold = 0.0;
    bool below_threshold = false;   // p90 at the last time below threshold_factor * sigma_hat
    // From decompositions, if supplied:
    std::vector<double> residual_N;        // N = 1..
    std::vector<double> residual_mean;     // N^{-1/2} sup_{N tau <= t <= (N+1) tau} |R|, ensemble mean
    std::vector<double> residual_p90;
    std::vector<double> ez2;               // empirical E Z_N^2
    std::vector<double> summability_partial;  // sum_{n<=N} n^{-1-2 eps} E Z_n^2
    bool summable = false;                 // last increments shrinking
};

inline SllnReport slln_check(const IntegralCurves& curves, const std::vector<MartingaleDecomposition>& decs,
                             double epsilon, double sigma_hat, double threshold_factor = 0.05,
                             double reference_time = 100.0) {
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    if (curves.values.empty()) throw ParameterError("no integral curves");
    SllnReport rep;
    rep.epsilon = epsilon;
    rep.times = curves.times;
    rep.sigma_hat = sigma_hat;
    rep.threshold_factor = threshold_factor;
    rep.threshold = threshold_factor * sigma_hat;
    const double power = 0.5 + epsilon;
    rep.normalized.resize(curves.values.size());
    for (std::size_t i = 0; i < curves.values.size(); ++i)
        for (std::size_t j = 0; j < curves.times.size(); ++j)
            rep.normalized[i].push_back(curves.values[i][j] / std::pow(curves.times[j], power));
    for (std::size_t j = 0; j < curves.times.size(); ++j) {
        std::vector<double> col;
        for (const auto& row : rep.normalized) col.push_back(std::abs(row[j]));
        rep.median.push_back(stats::quantile(col, 0.5));
        rep.p90.push_back(stats::quantile(col, 0.9));
    }
    // checkpoint closest to the reference time
    std::size_t ref = 0;
    for (std::size_t j = 0; j < rep.times.size(); ++j)
        if (std::abs(rep.times[j] - reference_time) < std::abs(rep.times[ref] - reference_time)) ref = j;
    rep.reference_time = rep.times[ref];
    rep.p90_reference = rep.p90[ref];
    rep.decaying = rep.p90.back() < rep.p90[ref];
    rep.below_threshold = rep.p90.back() < rep.threshold;

    if (!decs.empty()) {
        int n_max = decs.front().N_max;
        for (const auto& d : decs) n_max = std::min(n_max, d.N_max);
        for (int N = 1; N < n_max; ++N) {
            std::vector<double> r;
            for (const auto& d : decs) {
                double sup = 0.0;
                for (std::size_t k = 0; k < d.times.size(); ++k)
                    if (d.times[k] >= N * d.tau - 1e-9 && d.times[k] <= (N + 1) * d.tau + 1e-9)
                        sup = std::max(sup, std::abs(d.residual[k]));
                r.push_back(sup / std::sqrt(static_cast<double>(N)));
            }
            rep.residual_N.push_back(N);
            rep.residual_mean.push_back(stats::mean_estimate(r).mean);
            rep.residual_p90.push_back(stats::quantile(r, 0.9));
        }
        double partial = 0.0;
        for (int N = 1; N <= n_max; ++N) {
            long double s = 0.0L;
            for (const auto& d : decs) s += d.Z(N) * static_cast<long double>(d.Z(N));
            const double ez2 = static_cast<double>(s / decs.size());
            rep.ez2.push_back(ez2);
            partial += std::pow(static_cast<double>(N), -1.0 - 2.0 * epsilon) * ez2;
            rep.summability_partial.push_back(partial);
        }
        // Increments of a convergent p-series comparison shrink; check the tail.
        const std::size_t m = rep.summability_partial.size();
        if (m >= 4) {
            const double late = rep.summability_partial[m - 1] - rep.summability_partial[m / 2 - 1];
            const double early = rep.summability_partial[m / 2 - 1];
            rep.summable = late < early;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Variance and CLT
// ---------------------------------------------------------------------------

struct Sigma2Config {
    std::size_t n_xi = 2000;
    PiConfig pi;
    std::size_t batch_paths = 200;
    int batch_periods = 100;     // batch length in periods
    int batches_per_path = 10;
    int batch_burn_in = 10;      // periods discarded before the first batch
    double dt_max = 0.01;
};

struct Sigma2Estimate {
    double sigma2_mc = 0.0;
    double mc_se = 0.0;
    double mc_ci_lo = 0.0;  // 95%
    double mc_ci_hi = 0.0;
    double sigma2_batch = 0.0;
    double batch_se = 0.0;
    double batch_ci_lo = 0.0;
    double batch_ci_hi = 0.0;
    std::size_t n_xi = 0;
    std::size_t batch_paths = 0;
    bool agree = false;  // |mc - batch| within the combined 95% half-width
};

/// sigma^2 per period, two ways:
///  mc:    mean of M_tau^2 = (Pi(X_xi(tau)) - Pi(xi) + int_0^tau Phi~)^2, xi ~ mu_star,
///         with common inner seeds for the two Pi evaluations of a replica;
///  batch: tau * (batch-means long-run variance per unit time) from
///         independent long paths started from mu_star.
template <int Dim>
Sigma2Estimate estimate_sigma2(const PeriodicModel<Dim>& model, const EmpiricalMeasure& mu_star,
                               const Observable<Dim>& obs, const Sigma2Config& cfg, std::uint64_t seed,
                               unsigned threads = 0) {
    if (cfg.n_xi < 2 || cfg.batch_paths < 2) throw ParameterError("sigma^2 estimation needs >= 2 replicas");
    if (cfg.batch_periods < 1 || cfg.batches_per_path < 1 || cfg.batch_burn_in < 0)
        throw ParameterError("invalid batch layout");
    const double tau = model.tau;
    const double tol = 1e-9 * std::min(cfg.dt_max, tau);
    const InitialLaw<Dim> xi{mu_star};
    const double z = stats::normal_quantile(0.975);
    Sigma2Estimate est;
    est.n_xi = cfg.n_xi;
    est.batch_paths = cfg.batch_paths;

    const std::uint64_t mc_seed = derive_seed(seed, 1);
    std::vector<double> m2(cfg.n_xi);
    parallel_for(cfg.n_xi, threads, [&](std::size_t i) {
        const Vec<Dim> x0 = xi.draw(initial_seed(mc_seed, i));
        IntegralObserver<Dim, Observable<Dim>> io(obs, {}, tol);
        integrate(model, x0, tau, cfg.dt_max, path_seed(mc_seed, i), GridOptions{}, io);
        PiConfig pc = cfg.pi;
        pc.dt_max = cfg.dt_max;
        pc.seed = derive_seed(mc_seed, StreamKey::inner, i);
        const auto a = pi_samples(model, io.state(), obs, pc);
        const auto b = pi_samples(model, x0, obs, pc);
        const double pi_diff = (std::accumulate(a.begin(), a.end(), 0.0) - std::accumulate(b.begin(), b.end(), 0.0)) /
                               static_cast<double>(a.size());
        const double m = pi_diff + io.total();
        m2[i] = m * m;
    });
    const auto mc = stats::mean_estimate(m2);
    est.sigma2_mc = mc.mean;
    est.mc_se = mc.se;
    est.mc_ci_lo = std::max(0.0, mc.mean - z * mc.se);
    est.mc_ci_hi = mc.mean + z * mc.se;

    const std::uint64_t batch_seed = derive_seed(seed, 2);
    std::vector<double> checkpoints;
    for (int k = 0; k <= cfg.batches_per_path; ++k)
        checkpoints.push_back((cfg.batch_burn_in + k * cfg.batch_periods) * tau);
    if (checkpoints.front() <= 0.0) checkpoints.erase(checkpoints.begin());
    const bool from_zero = cfg.batch_burn_in == 0;
    const auto curves = observable_integrals(model, xi, obs, checkpoints, cfg.batch_paths, cfg.dt_max, batch_seed, threads);
    const double b_len = cfg.batch_periods * tau;
    std::vector<std::vector<double>> batches(cfg.batch_paths);
    long double grand = 0.0L;
    std::size_t count = 0;
    for (std::size_t i = 0; i < cfg.batch_paths; ++i) {
        std::vector<double> c = curves.values[i];
        if (from_zero) c.insert(c.begin(), 0.0);
        for (std::size_t k = 0; k + 1 < c.size(); ++k) {
            batches[i].push_back(c[k + 1] - c[k]);
            grand += batches[i].back();
            ++count;
        }
    }
    const double mean_batch = static_cast<double>(grand / count);
    std::vector<double> per_path;
    for (const auto& bs : batches) {
        long double s = 0.0L;
        for (double b : bs) s += (b - mean_batch) * static_cast<long double>(b - mean_batch);
        per_path.push_back(static_cast<double>(s / bs.size()) / b_len * tau);
    }
    // Bessel correction for the grand mean.
    const double bessel = static_cast<double>(count) / static_cast<double>(count - 1);
    const auto bt = stats::mean_estimate(per_path);
    est.sigma2_batch = bt.mean * bessel;
    est.batch_se = bt.se * bessel;
    est.batch_ci_lo = std::max(0.0, est.sigma2_batch - z * est.batch_se);
    est.batch_ci_hi = est.sigma2_batch + z * est.batch_se;
    est.agree = std::abs(est.sigma2_mc - est.sigma2_batch) <= z * std::hypot(est.mc_se, est.batch_se);
    return est;
}

struct CltTest {
    std::string normalization;  // "continuous" or "skeleton"
    std::size_t replica_count = 0;
    double horizon = 0.0;       // t_end, or N for the skeleton
    double target_variance = 0.0;
    std::vector<double> samples;
    double sample_mean = 0.0;
    double sample_se = 0.0;
    bool mean_within_3se = true;
    stats::TestResult ks;
    stats::TestResult ad;
    std::vector<std::pair<double, double>> qq;  // (theoretical, sample)
    double qq_slope = 0.0;
    double qq_intercept = 0.0;
    bool degenerate = false;
};

/// KS/AD/QQ of a sample against N(0, variance). variance == 0 with an
/// all-zero sample is reported as degenerate; any other variance <= 0 is an
/// error.
inline CltTest normality_report(std::vector<double> samples, double variance, std::string normalization,
                                double horizon) {
    CltTest out;
    out.normalization = std::move(normalization);
    out.horizon = horizon;
    out.replica_count = samples.size();
    out.target_variance = variance;
    if (samples.empty()) throw EmptySampleError("no CLT samples");
    const bool all_zero = std::all_of(samples.begin(), samples.end(), [](double v) { return v == 0.0; });
    if (!(variance > 0.0)) {
        if (variance == 0.0 && all_zero) {
            out.degenerate = true;
            out.samples = std::move(samples);
            out.ks = {0.0, 1.0};
            out.ad = {0.0, 1.0};
            return out;
        }
        throw VarianceError("target variance must be positive");
    }
    const auto m = stats::mean_estimate(samples);
    out.sample_mean = m.mean;
    out.sample_se = m.se;
    out.mean_within_3se = std::abs(m.mean) <= 3.0 * m.se;
    const double sd = std::sqrt(variance);
    auto cdf = [sd](double x) { return stats::normal_cdf(x, 0.0, sd); };
    out.ks = stats::ks_one_sample(samples, cdf);
    out.ad = stats::anderson_darling(samples, cdf);
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> th(sorted.size());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        th[i] = stats::normal_quantile((static_cast<double>(i) + 0.5) / n, 0.0, sd);
        out.qq.emplace_back(th[i], sorted[i]);
    }
    if (sorted.size() >= 2) {
        const auto fit = stats::linear_fit(th, sorted);
        out.qq_slope = fit.slope;
        out.qq_intercept = fit.intercept;
    }
    out.samples = std::move(samples);
    return out;
}

/// replicas values of t_end^{-1/2} int_0^{t_end} Phi~, tested against
/// N(0, sigma2 / tau) (sigma2 is per period).
template <int Dim>
CltTest clt_check(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& xi, const Observable<Dim>& obs,
                  double t_end, std::size_t replicas, double sigma2, double dt_max, std::uint64_t seed,
                  unsigned threads = 0) {
    if (replicas < 500) throw ParameterError("clt_check needs at least 500 replicas");
    if (!(sigma2 >= 0.0)) throw VarianceError("sigma^2 must be positive");
    const auto curves = observable_integrals(model, xi, obs, {t_end}, replicas, dt_max, seed, threads);
    std::vector<double> samples;
    for (const auto& v : curves.values) samples.push_back(v.back() / std::sqrt(t_end));
    return normality_report(std::move(samples), sigma2 / model.tau, "continuous", t_end);
}

/// M_{N tau} / sqrt(N) across decompositions against N(0, sigma2).
inline CltTest clt_skeleton_check(const std::vector<MartingaleDecomposition>& decs, int N, double sigma2) {
    if (N < 1) throw ParameterError("N must be >= 1");
    std::vector<double> samples;
    for (const auto& d : decs) {
        if (d.N_max < N) throw RangeError("decomposition shorter than N");
        samples.push_back(d.M_values[static_cast<std::size_t>(N)] / std::sqrt(static_cast<double>(N)));
    }
    return normality_report(std::move(samples), sigma2, "skeleton", N);
}

// ---------------------------------------------------------------------------
// Lindeberg-type conditions
// ---------------------------------------------------------------------------

struct ConditionCurve {
    std::string name;
    std::vector<double> index;  // N for M1, K for M2, l for M3
    std::vector<double> value;
    std::vector<double> standard_error;
    bool decreasing = false;  // |value| non-increasing along the index
    double final_value = 0.0;
    double final_ci = 0.0;    // 95% half-width
};

struct CltConditions {
    double epsilon = 0.5;
    double sigma2 = 0.0;
    ConditionCurve m1;
    ConditionCurve m2;      // signed mean block-bracket deviation
    ConditionCurve m2_abs;  // mean over blocks of |ensemble block bracket / K - sigma^2|
    ConditionCurve m3;
    int m3_block = 0;
    double sup_ez2 = 0.0;   // sup_N E Z_N^2
    bool m2_within_2ci = false;
};

namespace detail {

inline void finish_curve(ConditionCurve& c) {
    c.decreasing = true;
    for (std::size_t k = 1; k < c.value.size(); ++k)
        if (std::abs(c.value[k]) > std::abs(c.value[k - 1])) c.decreasing = false;
    if (!c.value.empty()) {
        c.final_value = c.value.back();
        c.final_ci = stats::normal_quantile(0.975) * c.standard_error.back();
    }
}

}  // namespace detail

/// Empirical M1, M2, M3 with the bracket realized as [M]_N = sum_{j<=N} Z_j^2.
/// M1 at N: (1/N) sum_{j<N} E[Z_{j+1}^2 1{|Z_{j+1}| >= eps sqrt N}].
/// M2 at K: mean over blocks m and paths of ([M]_{mK} - [M]_{(m-1)K}) / K - sigma^2.
/// M3 at l (block K = m3_block): (1/(lK)) sum_m sum_j E[(1 + Z_{j+1}^2) 1{|M_j - M_{(m-1)K}| >= eps sqrt(lK)}].
inline CltConditions verify_clt_conditions(const std::vector<MartingaleDecomposition>& decs,
                                           const std::vector<int>& m1_N, const std::vector<int>& m2_K, int m3_block,
                                           const std::vector<int>& m3_l, double epsilon, double sigma2) {
    if (decs.empty()) throw ParameterError("no decompositions");
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    int n_max = decs.front().N_max;
    for (const auto& d : decs) n_max = std::min(n_max, d.N_max);

    CltConditions out;
    out.epsilon = epsilon;
    out.sigma2 = sigma2;
    out.m3_block = m3_block;
    for (int N = 1; N <= n_max; ++N) {
        long double s = 0.0L;
        for (const auto& d : decs) s += d.Z(N) * static_cast<long double>(d.Z(N));
        out.sup_ez2 = std::max(out.sup_ez2, static_cast<double>(s / decs.size()));
    }

    auto add_point = [](ConditionCurve& c, double idx, const std::vector<double>& per_path) {
        const auto m = stats::mean_estimate(per_path);
        c.index.push_back(idx);
        c.value.push_back(m.mean);
        c.standard_error.push_back(m.se);
    };

    out.m1.name = "M1";
    for (int N : m1_N) {
        if (N < 1 || N > n_max) throw RangeError("M1 index outside the decomposition range");
        const double cut = epsilon * std::sqrt(static_cast<double>(N));
        std::vector<double> v;
        for (const auto& d : decs) {
            long double s = 0.0L;
            for (int j = 1; j <= N; ++j)
                if (std::abs(d.Z(j)) >= cut) s += d.Z(j) * static_cast<long double>(d.Z(j));
            v.push_back(static_cast<double>(s / N));
        }
        add_point(out.m1, N, v);
    }
    detail::finish_curve(out.m1);

    out.m2.name = "M2";
    out.m2_abs.name = "M2_abs";
    for (int K : m2_K) {
        if (K < 1 || K > n_max) throw RangeError("M2 block outside the decomposition range");
        const int l = n_max / K;
        std::vector<double> v;
        std::vector<std::vector<double>> per_block(static_cast<std::size_t>(l));
        for (const auto& d : decs) {
            long double s = 0.0L;
            for (int m = 1; m <= l; ++m) {
                long double bracket = 0.0L;
                for (int j = (m - 1) * K + 1; j <= m * K; ++j) bracket += d.Z(j) * static_cast<long double>(d.Z(j));
                s += bracket / K - sigma2;
                per_block[static_cast<std::size_t>(m - 1)].push_back(static_cast<double>(bracket / K));
            }
            v.push_back(static_cast<double>(s / l));
        }
        add_point(out.m2, K, v);
        // Blocks are averaged, so the mean of the per-block SEs bounds the SE.
        double a = 0.0;
        double se = 0.0;
        for (const auto& b : per_block) {
            const auto e = stats::mean_estimate(b);
            a += std::abs(e.mean - sigma2);
            se += e.se;
        }
        out.m2_abs.index.push_back(K);
        out.m2_abs.value.push_back(a / l);
        out.m2_abs.standard_error.push_back(se / l);
    }
    detail::finish_curve(out.m2);
    detail::finish_curve(out.m2_abs);
    out.m2_within_2ci = out.m2.value.empty() || std::abs(out.m2.final_value) <= 2.0 * out.m2.final_ci;

    out.m3.name = "M3";
    const int K = m3_block;
    for (int l : m3_l) {
        if (K < 1 || l < 1 || l * K > n_max) throw RangeError("M3 layout outside the decomposition range");
        const double cut = epsilon * std::sqrt(static_cast<double>(l * K));
        std::vector<double> v;
        for (const auto& d : decs) {
            long double s = 0.0L;
            for (int m = 1; m <= l; ++m) {
                const double base = d.M_values[static_cast<std::size_t>((m - 1) * K)];
                for (int j = (m - 1) * K; j < m * K; ++j)
                    if (std::abs(d.M_values[static_cast<std::size_t>(j)] - base) >= cut)
                        s += 1.0L + d.Z(j + 1) * static_cast<long double>(d.Z(j + 1));
            }
            v.push_back(static_cast<double>(s / (static_cast<long double>(l) * K)));
        }
        add_point(out.m3, l, v);
    }
    detail::finish_curve(out.m3);
    return out;
}

// ---------------------------------------------------------------------------
// Moment growth
// ---------------------------------------------------------------------------

struct MomentGrowthReport {
    int p = 1;
    double power = 2.0;                 // 2^p
    std::vector<double> N;
    std::vector<double> moment_M;       // E|M_{N tau}|^{2^p}
    std::vector<double> moment_Z;       // E|Z_N|^{2^p}
    double exponent = 0.0;              // log-log slope of moment_M
    double exponent_se = 0.0;
    double exponent_bound = 0.0;        // 2 - 2^{-p}
    bool exponent_ok = true;            // exponent <= bound + 0.1
    double z_slope = 0.0;
    double z_slope_ci_lo = 0.0;
    double z_slope_ci_hi = 0.0;
    bool z_trend_free = true;           // slope CI contains 0
};

inline MomentGrowthReport moment_growth_check(const std::vector<MartingaleDecomposition>& decs, int p) {
    if (p != 1 && p != 2) throw ParameterError("p must be 1 or 2");
    if (decs.empty()) throw ParameterError("no decompositions");
    int n_max = decs.front().N_max;
    for (const auto& d : decs) n_max = std::min(n_max, d.N_max);
    MomentGrowthReport rep;
    rep.p = p;
    rep.power = std::pow(2.0, p);
    rep.exponent_bound = 2.0 - std::pow(2.0, -p);
    std::vector<double> lx, ly;
    for (int N = 1; N <= n_max; ++N) {
        long double sm = 0.0L, sz = 0.0L;
        for (const auto& d : decs) {
            sm += std::pow(std::abs(d.M_values[static_cast<std::size_t>(N)]), rep.power);
            sz += std::pow(std::abs(d.Z(N)), rep.power);
        }
        rep.N.push_back(N);
        rep.moment_M.push_back(static_cast<double>(sm / decs.size()));
        rep.moment_Z.push_back(static_cast<double>(sz / decs.size()));
        if (rep.moment_M.back() > 0.0) {
            lx.push_back(std::log(static_cast<double>(N)));
            ly.push_back(std::log(rep.moment_M.back()));
        }
    }
    if (lx.size() >= 3) {
        const auto f = stats::linear_fit(lx, ly);
        rep.exponent = f.slope;
        rep.exponent_se = f.slope_se;
        rep.exponent_ok = rep.exponent <= rep.exponent_bound + 0.1;
    }
    if (rep.N.size() >= 3) {
        const auto f = stats::linear_fit(rep.N, rep.moment_Z);
        const double q = stats::t_quantile(0.975, static_cast<double>(rep.N.size() - 2));
        rep.z_slope = f.slope;
        rep.z_slope_ci_lo = f.slope - q * f.slope_se;
        rep.z_slope_ci_hi = f.slope + q * f.slope_se;
        rep.z_trend_free = rep.z_slope_ci_lo <= 0.0 && 0.0 <= rep.z_slope_ci_hi;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Corrector sequence
// ---------------------------------------------------------------------------

struct CorrectorResult {
    std::vector<int> n_grid;                  // 0..n_max
    std::vector<std::vector<double>> terms;   // [probe][k] P_{0,k tau} Phi~(xi)
    std::vector<std::vector<double>> a_n;     // [probe][n] partial sums
    std::vector<std::vector<double>> a_n_se;
    double lipschitz_estimate = 0.0;          // max over probe pairs at n_max
    std::vector<int> gap_n;                   // n with 2n <= n_max
    std::vector<std::vector<double>> cauchy_gaps;  // [probe] |a_{2n} - a_n|
    std::vector<std::vector<double>> cauchy_gap_se;
};

/// P_{0,k tau} Phi~(xi) = E Phi~(X_xi(k tau)) by restart Monte Carlo with
/// inner_n paths per probe. All probes share the inner seeds.
template <int Dim>
CorrectorResult corrector_sequence(const PeriodicModel<Dim>& model, const Observable<Dim>& obs,
                                   const std::vector<Vec<Dim>>& probes, int n_max, std::size_t inner_n,
                                   double dt_max, std::uint64_t seed, unsigned threads = 0) {
    if (n_max < 0 || inner_n < 2) throw ParameterError("corrector needs n_max >= 0 and inner_n >= 2");
    CorrectorResult res;
    for (int n = 0; n <= n_max; ++n) res.n_grid.push_back(n);
    for (int n = 1; 2 * n <= n_max; n *= 2) res.gap_n.push_back(n);

    for (const auto& xi : probes) {
        // per path partial sums so standard errors account for correlation in k
        std::vector<std::vector<double>> vals(inner_n, std::vector<double>(static_cast<std::size_t>(n_max) + 1));
        if (n_max == 0) {
            for (auto& v : vals) v[0] = obs(xi);
        } else {
            EnsembleOptions opt;
            opt.threads = threads;
            const auto ens = integrate_ensemble(model, InitialLaw<Dim>(xi), n_max * model.tau, dt_max, inner_n,
                                                derive_seed(seed, StreamKey::inner), opt);
            for (int k = 0; k <= n_max; ++k) {
                const auto s = shifted_segments(ens, k, 0.0);
                for (std::size_t i = 0; i < inner_n; ++i) vals[i][static_cast<std::size_t>(k)] = obs(s[i]);
            }
        }
        std::vector<double> term, a, ase;
        std::vector<std::vector<double>> partial(inner_n, std::vector<double>(static_cast<std::size_t>(n_max) + 1));
        for (std::size_t i = 0; i < inner_n; ++i) {
            double acc = 0.0;
            for (int k = 0; k <= n_max; ++k) {
                acc += vals[i][static_cast<std::size_t>(k)];
                partial[i][static_cast<std::size_t>(k)] = acc;
            }
        }
        for (int k = 0; k <= n_max; ++k) {
            std::vector<double> col, pcol;
            for (std::size_t i = 0; i < inner_n; ++i) {
                col.push_back(vals[i][static_cast<std::size_t>(k)]);
                pcol.push_back(partial[i][static_cast<std::size_t>(k)]);
            }
            term.push_back(stats::mean_estimate(col).mean);
            const auto pm = stats::mean_estimate(pcol);
            a.push_back(pm.mean);
            ase.push_back(pm.se);
        }
        std::vector<double> gaps, gap_se;
        for (int n : res.gap_n) {
            std::vector<double> diff;
            for (std::size_t i = 0; i < inner_n; ++i)
                diff.push_back(partial[i][static_cast<std::size_t>(2 * n)] - partial[i][static_cast<std::size_t>(n)]);
            const auto dm = stats::mean_estimate(diff);
            gaps.push_back(std::abs(dm.mean));
            gap_se.push_back(dm.se);
        }
        res.terms.push_back(std::move(term));
        res.a_n.push_back(std::move(a));
        res.a_n_se.push_back(std::move(ase));
        res.cauchy_gaps.push_back(std::move(gaps));
        res.cauchy_gap_se.push_back(std::move(gap_se));
    }
    for (std::size_t i = 0; i < probes.size(); ++i)
        for (std::size_t j = i + 1; j < probes.size(); ++j) {
            const double dx = (probes[i] - probes[j]).norm();
            if (dx > 0.0)
                res.lipschitz_estimate =
                    std::max(res.lipschitz_estimate, std::abs(res.a_n[i].back() - res.a_n[j].back()) / dx);
        }
    return res;
}

}  // namespace levy_periodic
