// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "levy_periodic/empirical_measure.hpp"
#include "levy_periodic/errors.hpp"
#include "levy_periodic/parallel.hpp"
#include "levy_periodic/rng.hpp"
#include "levy_periodic/sde_engine.hpp"
#include "levy_periodic/stats.hpp"

namespace levy_periodic {

// ---------------------------------------------------------------------------
// Wasserstein-1
// ---------------------------------------------------------------------------

enum class W1Method { automatic, exact, sliced };

/// Largest atom count for which automatic mode solves the transport problem
/// exactly in d > 1.
inline constexpr Eigen::Index kExactTransportLimit = 512;
inline constexpr int kDefaultProjections = 64;
inline constexpr std::uint64_t kDefaultProjectionSeed = 0x5eed5eedULL;

struct W1Result {
    double value = 0.0;
    W1Method method = W1Method::exact;
    int projections = 0;      // sliced only
    double standard_error = 0.0;  // sliced only: sd over projections / sqrt(K)
};

/// Exact W1 of two weighted point sets on the line: integral of |F1 - F2|.
inline double wasserstein1_line(std::vector<std::pair<double, double>> a, std::vector<std::pair<double, double>> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    long double fa = 0.0L, fb = 0.0L, total = 0.0L;
    double x = std::min(a.front().first, b.front().first);
    while (i < a.size() || j < b.size()) {
        const double next = std::min(i < a.size() ? a[i].first : std::numeric_limits<double>::infinity(),
                                     j < b.size() ? b[j].first : std::numeric_limits<double>::infinity());
        total += std::abs(fa - fb) * static_cast<long double>(next - x);
        while (i < a.size() && a[i].first == next) fa += a[i++].second;
        while (j < b.size() && b[j].first == next) fb += b[j++].second;
        x = next;
    }
    return static_cast<double>(total);
}

namespace detail {

inline std::vector<std::pair<double, double>> projected(const EmpiricalMeasure& mu, const Eigen::VectorXd& dir) {
    std::vector<std::pair<double, double>> out(static_cast<std::size_t>(mu.size()));
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        out[static_cast<std::size_t>(i)] = {mu.points().col(i).dot(dir), mu.weight(i)};
    return out;
}

}  // namespace detail

/// Minimum-cost transport between supplies a and demands b (equal totals) by
/// successive shortest paths with Johnson potentials. Returns the optimal
/// cost sum_ij pi_ij C_ij.
inline double transport_cost(const std::vector<double>& supply_in, const std::vector<double>& demand_in,
                             const Eigen::MatrixXd& cost) {
    const std::size_t n = supply_in.size();
    const std::size_t m = demand_in.size();
    if (static_cast<std::size_t>(cost.rows()) != n || static_cast<std::size_t>(cost.cols()) != m)
        throw DimError("cost matrix shape does not match marginals");
    const std::size_t V = n + m + 1;
    const std::size_t source = n + m;
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr double eps = 1e-15;

    std::vector<double> supply = supply_in;
    std::vector<double> demand = demand_in;
    Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    std::vector<double> pot(V, 0.0);
    std::vector<double> dist(V);
    std::vector<long> prev(V);
    std::vector<char> done(V);

    for (std::size_t iter = 0;; ++iter) {
        bool any_supply = false;
        for (double s : supply) any_supply |= s > eps;
        if (!any_supply) break;
        if (iter > 50 * (n + m) + 1000) throw Error("transport solver failed to converge");

        std::fill(dist.begin(), dist.end(), inf);
        std::fill(prev.begin(), prev.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        dist[source] = 0.0;
        auto relax = [&](std::size_t u, std::size_t v, double c) {
            const double rc = std::max(0.0, c + pot[u] - pot[v]);
            if (dist[u] + rc < dist[v]) {
                dist[v] = dist[u] + rc;
                prev[v] = static_cast<long>(u);
            }
        };
        for (std::size_t step = 0; step < V; ++step) {
            std::size_t u = V;
            double best = inf;
            for (std::size_t v = 0; v < V; ++v)
                if (!done[v] && dist[v] < best) {
                    best = dist[v];
                    u = v;
                }
            if (u == V) break;
            done[u] = 1;
            if (u == source) {
                for (std::size_t i = 0; i < n; ++i)
                    if (supply[i] > eps) relax(u, i, 0.0);
            } else if (u < n) {
                for (std::size_t j = 0; j < m; ++j)
                    relax(u, n + j, cost(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(j)));
            } else {
                const std::size_t j = u - n;
                for (std::size_t i = 0; i < n; ++i)
                    if (flow(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > eps)
                        relax(u, i, -cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            }
        }

        std::size_t target = V;
        for (std::size_t j = 0; j < m; ++j)
            if (demand[j] > eps && (target == V || dist[n + j] < dist[target])) target = n + j;
        if (target == V || dist[target] == inf) throw Error("transport problem is infeasible (unequal masses?)");
        for (std::size_t v = 0; v < V; ++v) pot[v] += std::min(dist[v], dist[target]);

        // bottleneck
        double delta = demand[target - n];
        std::size_t v = target;
        std::size_t start = V;
        while (v != source) {
            const auto u = static_cast<std::size_t>(prev[v]);
            if (u == source) {
                start = v;
            } else if (u >= n && v < n) {
                delta = std::min(delta, flow(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u - n)));
            }
            v = u;
        }
        delta = std::min(delta, supply[start]);

        v = target;
        while (v != source) {
            const auto u = static_cast<std::size_t>(prev[v]);
            if (u < n && v >= n) {
                flow(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v - n)) += delta;
            } else if (u >= n && u != source && v < n) {
                auto& f = flow(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u - n));
                f -= delta;
                if (f < eps) f = 0.0;
            }
            v = u;
        }
        supply[start] -= delta;
        demand[target - n] -= delta;
        if (supply[start] < eps) supply[start] = 0.0;
        if (demand[target - n] < eps) demand[target - n] = 0.0;
    }
    return (flow.array() * cost.array()).sum();
}

/// Euclidean cost matrix between the atoms of two measures.
inline Eigen::MatrixXd distance_matrix(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    Eigen::MatrixXd c(a.size(), b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j) c(i, j) = (a.points().col(i) - b.points().col(j)).norm();
    return c;
}

/// Sliced W1: average of the exact line W1 over K random unit directions.
inline W1Result sliced_wasserstein1(const EmpiricalMeasure& mu1, const EmpiricalMeasure& mu2,
                                    int projections = kDefaultProjections,
                                    std::uint64_t seed = kDefaultProjectionSeed) {
    if (mu1.dim() != mu2.dim()) throw DimError("measures live in different dimensions");
    if (projections < 1) throw ParameterError("need at least one projection");
    std::vector<double> values(static_cast<std::size_t>(projections));
    for (int k = 0; k < projections; ++k) {
        Engine rng = make_engine(derive_seed(seed, StreamKey::projection, static_cast<std::uint64_t>(k)));
        std::normal_distribution<double> n01;
        Eigen::VectorXd dir(mu1.dim());
        do {
            for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = n01(rng);
        } while (dir.norm() == 0.0);
        dir.normalize();
        values[static_cast<std::size_t>(k)] = wasserstein1_line(detail::projected(mu1, dir), detail::projected(mu2, dir));
    }
    const auto est = stats::mean_estimate(values);
    return {est.mean, W1Method::sliced, projections, est.se};
}

/// d_L between two empirical laws, computed as W1. In d = 1 the quantile
/// coupling is exact; in d > 1 the transport problem is solved exactly up to
/// kExactTransportLimit atoms and the sliced approximation is used above it
/// (automatic mode).
inline W1Result wasserstein1_report(const EmpiricalMeasure& mu1, const EmpiricalMeasure& mu2,
                                    W1Method method = W1Method::automatic, int projections = kDefaultProjections,
                                    std::uint64_t seed = kDefaultProjectionSeed) {
    if (mu1.dim() != mu2.dim()) throw DimError("measures live in different dimensions");
    if (mu1.dim() == 1 && method != W1Method::sliced) {
        return {wasserstein1_line(detail::projected(mu1, Eigen::VectorXd::Ones(1)),
                                  detail::projected(mu2, Eigen::VectorXd::Ones(1))),
                W1Method::exact, 0, 0.0};
    }
    const bool small = std::max(mu1.size(), mu2.size()) <= kExactTransportLimit;
    if (method == W1Method::exact || (method == W1Method::automatic && small)) {
        return {transport_cost(mu1.weights(), mu2.weights(), distance_matrix(mu1, mu2)), W1Method::exact, 0, 0.0};
    }
    return sliced_wasserstein1(mu1, mu2, projections, seed);
}

inline double wasserstein1(const EmpiricalMeasure& mu1, const EmpiricalMeasure& mu2,
                           W1Method method = W1Method::automatic) {
    return wasserstein1_report(mu1, mu2, method).value;
}

/// max over the supplied test functions of |<mu1, phi> - <mu2, phi>|.
inline double dual_lipschitz_gap(const EmpiricalMeasure& mu1, const EmpiricalMeasure& mu2,
                                 const std::vector<std::function<double(const Eigen::VectorXd&)>>& test_functions) {
    if (mu1.dim() != mu2.dim()) throw DimError("measures live in different dimensions");
    double gap = 0.0;
    for (const auto& phi : test_functions) {
        auto eval = [&](const auto& x) { return phi(Eigen::VectorXd(x)); };
        gap = std::max(gap, std::abs(mu1.expectation(eval) - mu2.expectation(eval)));
    }
    return gap;
}

// ---------------------------------------------------------------------------
// Periodic and invariant measures
// ---------------------------------------------------------------------------

struct PeriodicMeasureEstimate {
    double tau = 1.0;
    std::vector<double> phase_grid;
    std::vector<EmpiricalMeasure> measures;
    int burn_in_periods = 0;
    int averaged_periods = 0;
    /// d_L(law of X((N+1) tau), law of X(N tau)) at phase 0, N = 0, 1, ...
    std::vector<double> consecutive_distances;
    /// (1/(n+1)) sum_{N<=n} consecutive_distances[N]
    std::vector<double> cesaro_means;
    /// Same average restricted to the post-burn-in periods.
    std::vector<double> post_burn_in_cesaro;
    /// d_L between two halves of the last period's sample.
    double noise_floor = 0.0;
    /// Two-sample KS on the first coordinate at phase 0, periods B and B + 1.
    stats::TestResult periodicity_ks;
};

namespace detail {

template <int Dim>
EmpiricalMeasure measure_from(const std::vector<Vec<Dim>>& pts, std::size_t begin, std::size_t end) {
    return empirical_measure(std::vector<Vec<Dim>>(pts.begin() + static_cast<long>(begin), pts.begin() + static_cast<long>(end)));
}

}  // namespace detail

/// Pools X(t + N tau), N = burn_in .. burn_in + n_periods - 1, per phase t.
template <int Dim>
PeriodicMeasureEstimate estimate_periodic_measure(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& xi,
                                                  int phases, int burn_in, int n_periods, std::size_t n_paths,
                                                  double dt_max, std::uint64_t seed, unsigned threads = 0) {
    if (phases < 1 || burn_in < 0 || n_periods < 1) throw ParameterError("invalid periodic-measure layout");
    if (n_paths < 2) throw ParameterError("need at least two paths");
    const int total_periods = burn_in + n_periods;
    EnsembleOptions opt;
    opt.grid.phases = phases;
    opt.record = Record::aligned;
    opt.threads = threads;
    const auto ens = integrate_ensemble(model, xi, total_periods * model.tau, dt_max, n_paths, seed, opt);

    PeriodicMeasureEstimate est;
    est.tau = model.tau;
    est.burn_in_periods = burn_in;
    est.averaged_periods = n_periods;
    for (int j = 0; j < phases; ++j) {
        const double phase = model.tau * (static_cast<double>(j) / phases);
        est.phase_grid.push_back(phase);
        std::vector<Vec<Dim>> pooled;
        pooled.reserve(n_paths * static_cast<std::size_t>(n_periods));
        for (int N = burn_in; N < total_periods; ++N) {
            auto s = shifted_segments(ens, N, phase);
            pooled.insert(pooled.end(), s.begin(), s.end());
        }
        est.measures.push_back(empirical_measure(pooled));
    }

    std::vector<EmpiricalMeasure> period_laws;
    for (int N = 0; N <= total_periods; ++N) {
        if (N == total_periods) {
            // X(total tau) sits at the horizon, which is always on the grid.
            std::vector<Vec<Dim>> last;
            for (const auto& p : ens.paths) last.push_back(p.states.back());
            period_laws.push_back(empirical_measure(last));
        } else {
            period_laws.push_back(empirical_measure(shifted_segments(ens, N, 0.0)));
        }
    }
    for (int N = 0; N < total_periods; ++N) {
        est.consecutive_distances.push_back(wasserstein1(period_laws[static_cast<std::size_t>(N + 1)],
                                                         period_laws[static_cast<std::size_t>(N)]));
        const auto& d = est.consecutive_distances;
        est.cesaro_means.push_back(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()));
        if (N >= burn_in) {
            const double s = std::accumulate(d.begin() + burn_in, d.end(), 0.0);
            est.post_burn_in_cesaro.push_back(s / static_cast<double>(N - burn_in + 1));
        }
    }

    std::vector<Vec<Dim>> last;
    for (const auto& p : ens.paths) last.push_back(p.states.back());
    const std::size_t half = last.size() / 2;
    est.noise_floor = wasserstein1(detail::measure_from(last, 0, half), detail::measure_from(last, half, 2 * half));

    auto first_coord = [](const std::vector<Vec<Dim>>& v) {
        std::vector<double> out;
        for (const auto& x : v) out.push_back(x[0]);
        return out;
    };
    est.periodicity_ks = stats::ks_two_sample(first_coord(shifted_segments(ens, burn_in, 0.0)),
                                              first_coord(burn_in + 1 < total_periods
                                                              ? shifted_segments(ens, burn_in + 1, 0.0)
                                                              : last));
    return est;
}

/// mu* = (1/tau) int_0^tau mu_t dt by the left-endpoint rule on the phase grid.
inline EmpiricalMeasure invariant_measure_mu_star(const PeriodicMeasureEstimate& pm) {
    if (pm.measures.empty()) throw ParameterError("periodic-measure estimate has no phases");
    const Eigen::Index d = pm.measures.front().dim();
    Eigen::Index total = 0;
    for (const auto& m : pm.measures) total += m.size();
    Eigen::MatrixXd pts(d, total);
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(total));
    const double phase_weight = 1.0 / static_cast<double>(pm.measures.size());
    Eigen::Index col = 0;
    for (const auto& m : pm.measures) {
        pts.middleCols(col, m.size()) = m.points();
        for (double wi : m.weights()) w.push_back(wi * phase_weight);
        col += m.size();
    }
    return EmpiricalMeasure(std::move(pts), std::move(w));
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

struct ContractionFit {
    std::vector<double> times;
    std::vector<double> distances;
    std::vector<double> noise_floor;
    std::vector<bool> used;
    double initial_distance = 0.0;
    double fitted_C = 0.0;       // exp(intercept) of log d = log C - gamma t
    double contraction_C = 0.0;  // fitted_C / initial_distance
    double fitted_gamma = 0.0;
    double gamma_ci_lo = 0.0;    // 95%
    double gamma_ci_hi = 0.0;
    double r_squared = 0.0;
    std::size_t n_paths = 0;
};

/// Fits d_L(P*_{0,t} delta_x1, P*_{0,t} delta_x2) ~ C e^{-gamma t} from two
/// independent ensembles. Points not above twice the half-ensemble noise
/// floor are excluded from the regression.
template <int Dim>
ContractionFit contraction_estimate(const PeriodicModel<Dim>& model, const Vec<Dim>& x1, const Vec<Dim>& x2,
                                    double horizon, std::size_t n_paths, int n_time_points, double dt_max,
                                    std::uint64_t seed, unsigned threads = 0) {
    if (n_time_points < 3) throw ParameterError("need at least three checkpoints");
    if (n_paths < 4) throw ParameterError("need at least four paths");
    ContractionFit fit;
    fit.n_paths = n_paths;
    for (int j = 0; j < n_time_points; ++j) fit.times.push_back(horizon * j / (n_time_points - 1));

    EnsembleOptions opt;
    opt.grid.checkpoints = fit.times;
    opt.record = Record::aligned;
    opt.threads = threads;
    const auto e1 = integrate_ensemble(model, InitialLaw<Dim>(x1), horizon, dt_max, n_paths, derive_seed(seed, 1), opt);
    const auto e2 = integrate_ensemble(model, InitialLaw<Dim>(x2), horizon, dt_max, n_paths, derive_seed(seed, 2), opt);

    const double tol = 1e-9 * std::min(model.tau, dt_max);
    auto at = [&](const PathEnsemble<Dim>& e, double t) {
        std::vector<Vec<Dim>> out;
        for (const auto& p : e.paths) {
            const long k = find_time(p.grid, t, tol);
            if (k < 0) throw RangeError("checkpoint missing from grid");
            out.push_back(p.states[static_cast<std::size_t>(k)]);
        }
        return out;
    };

    std::vector<double> xs, ys;
    const std::size_t half = n_paths / 2;
    for (double t : fit.times) {
        const auto s1 = at(e1, t);
        const auto s2 = at(e2, t);
        const double d = wasserstein1(empirical_measure(s1), empirical_measure(s2));
        const double floor = wasserstein1(detail::measure_from(s1, 0, half), detail::measure_from(s1, half, 2 * half));
        fit.distances.push_back(d);
        fit.noise_floor.push_back(floor);
        const bool use = d > 0.0 && d > 2.0 * floor;
        fit.used.push_back(use);
        if (use) {
            xs.push_back(t);
            ys.push_back(std::log(d));
        }
    }
    fit.initial_distance = fit.distances.front();
    if (xs.size() < 3) throw NoSignalError("fewer than three distances above the noise floor");

    const auto lf = stats::linear_fit(xs, ys);
    fit.fitted_gamma = -lf.slope;
    fit.fitted_C = std::exp(lf.intercept);
    fit.contraction_C = fit.initial_distance > 0.0 ? fit.fitted_C / fit.initial_distance : 0.0;
    fit.r_squared = lf.r_squared;
    const double q = xs.size() > 2 ? stats::t_quantile(0.975, static_cast<double>(xs.size() - 2)) : 0.0;
    fit.gamma_ci_lo = fit.fitted_gamma - q * lf.slope_se;
    fit.gamma_ci_hi = fit.fitted_gamma + q * lf.slope_se;
    return fit;
}

}  // namespace levy_periodic
