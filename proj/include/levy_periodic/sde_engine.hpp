// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "levy_periodic/empirical_measure.hpp"
#include "levy_periodic/errors.hpp"
#include "levy_periodic/levy_noise.hpp"
#include "levy_periodic/parallel.hpp"
#include "levy_periodic/rng.hpp"
#include "levy_periodic/types.hpp"

namespace levy_periodic {

/// States whose norm exceeds this radius abort the path.
inline constexpr double kDivergenceRadius = 1e8;

/// dX = f dt + g dW + int_{|u|<1} F dN~ + int_{|u|>=1} G dN, all coefficients
/// tau-periodic in t. W has covariance Q; N has intensity dt x nu.
template <int Dim>
struct PeriodicModel {
    using State = Vec<Dim>;
    using Matrix = Mat<Dim>;
    using Drift = std::function<State(double, const State&)>;
    using Diffusion = std::function<Matrix(double, const State&)>;
    using JumpMap = std::function<State(double, const State&, const State&)>;

    double tau = 1.0;
    int dim = Dim > 0 ? Dim : 1;
    Drift drift;        // f
    Diffusion diffusion;  // g
    JumpMap small_jump;   // F, marks with |u| < 1
    JumpMap large_jump;   // G, marks with |u| >= 1
    JumpMeasureSpec<Dim> nu;
    Matrix noise_covariance = Matrix::Identity(dim, dim);
    bool additive_noise = false;  // g depends on t only
    std::string hash;             // identifies model and parameters

    bool has_small_jumps() const {
        for (const auto& a : nu.atoms)
            if (a.location.norm() < kJumpCut) return true;
        return !nu.components.empty();
    }

    void require_complete() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ModelError("tau must be positive");
        if (!drift || !diffusion || !small_jump || !large_jump) throw ModelError("model has unset coefficients");
    }
};

/// f = g = F = G = 0.
template <int Dim>
PeriodicModel<Dim> zero_model(double tau, int dim = Dim) {
    using S = Vec<Dim>;
    PeriodicModel<Dim> m;
    m.tau = tau;
    m.dim = dim;
    m.noise_covariance = Mat<Dim>::Identity(dim, dim);
    m.drift = [dim](double, const S&) { return S(S::Zero(dim)); };
    m.diffusion = [dim](double, const S&) { return Mat<Dim>(Mat<Dim>::Zero(dim, dim)); };
    m.small_jump = [dim](double, const S&, const S&) { return S(S::Zero(dim)); };
    m.large_jump = m.small_jump;
    m.additive_noise = true;
    m.hash = "zero";
    return m;
}

// ---------------------------------------------------------------------------
// Integrator
// ---------------------------------------------------------------------------

/// Extra points forced into the simulation grid. Multiples of tau/phases are
/// always grid points, as are the checkpoints and t_end.
struct GridOptions {
    int phases = 1;
    std::vector<double> checkpoints;
};

template <int Dim>
struct StepView {
    double t0;
    double t1;
    const Vec<Dim>& x0;
    const Vec<Dim>& x_left;  // X(t1-)
    const Vec<Dim>& x1;      // X(t1)
    const JumpEvent<Dim>* jump;
    bool aligned;  // t1 is a phase point, checkpoint or t_end
};

/// Wiener increments drawn in grid order from one stream.
template <int Dim>
class StreamWiener {
public:
    StreamWiener(const Mat<Dim>& covariance, std::uint64_t seed)
        : root_(covariance_root(covariance)), rng_(make_engine(seed)), dim_(static_cast<int>(covariance.rows())) {}

    Vec<Dim> increment(double t0, double t1) {
        return root_ * standard_normal<Dim>(rng_, dim_) * std::sqrt(t1 - t0);
    }

private:
    Mat<Dim> root_;
    Engine rng_;
    int dim_;
};

/// Wiener increments built from counter-based normals on a fixed lattice of
/// spacing h. Grids that only use lattice points then see the same Brownian
/// path whatever their step size, which gives common-noise refinements.
template <int Dim>
class LatticeWiener {
public:
    LatticeWiener(const Mat<Dim>& covariance, std::uint64_t seed, double spacing)
        : root_(covariance_root(covariance)), seed_(seed), h_(spacing), dim_(static_cast<int>(covariance.rows())) {}

    Vec<Dim> increment(double t0, double t1) {
        const auto k0 = cell(t0);
        const auto k1 = cell(t1);
        Vec<Dim> z = Vec<Dim>::Zero(dim_);
        for (auto k = k0; k < k1; ++k)
            for (int i = 0; i < dim_; ++i)
                z[i] += counter_normal(seed_, static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(dim_) + i);
        return root_ * z * std::sqrt(h_);
    }

private:
    long long cell(double t) const {
        const double r = t / h_;
        const long long k = std::llround(r);
        if (std::abs(r - static_cast<double>(k)) > 1e-6) throw ModelError("time is not on the noise lattice");
        return k;
    }

    Mat<Dim> root_;
    std::uint64_t seed_;
    double h_;
    int dim_;
};

namespace detail {

inline std::vector<double> alignment_times(double tau, double t_end, const GridOptions& opt, double tol) {
    if (opt.phases < 1) throw ParameterError("phases must be >= 1");
    std::vector<double> out;
    const double step_count = std::floor(t_end / tau * opt.phases + 1e-9);
    const auto n = static_cast<long long>(step_count);
    out.reserve(static_cast<std::size_t>(n) + opt.checkpoints.size() + 1);
    for (long long k = 1; k <= n; ++k)
        out.push_back(tau * (static_cast<double>(k) / static_cast<double>(opt.phases)));
    for (double c : opt.checkpoints)
        if (c > 0.0 && c < t_end) out.push_back(c);
    out.push_back(t_end);
    std::sort(out.begin(), out.end());
    std::vector<double> unique;
    for (double t : out) {
        if (t > t_end + tol) continue;
        if (!unique.empty() && t - unique.back() <= tol) {
            if (std::abs(t - t_end) <= tol) unique.back() = t_end;
            continue;
        }
        unique.push_back(std::abs(t - t_end) <= tol ? t_end : t);
    }
    return unique;
}

}  // namespace detail

/// Jump-adapted Euler-Maruyama. Between grid points the state moves by
/// (f - int_{|u|<1} F nu(du)) dt + g dW; at a jump time with mark u it moves by
/// F(t, X(t-), u) if |u| < 1 and G(t, X(t-), u) otherwise.
///
/// The grid is the union of {k dt_max}, the alignment times and the jump times.
/// Observer must provide begin(t, x) and step(const StepView&).
template <int Dim, class Wiener, class Observer>
void integrate_with(const PeriodicModel<Dim>& model, const Vec<Dim>& x0, double t_end, double dt_max,
                    const std::vector<JumpEvent<Dim>>& jumps, Wiener& wiener, const GridOptions& grid,
                    Observer& observer) {
    model.require_complete();
    if (!(t_end > 0.0)) throw ParameterError("t_end must be positive");
    if (!(dt_max > 0.0)) throw ParameterError("dt_max must be positive");
    if (x0.rows() != model.dim) throw DimError("initial state has wrong dimension");

    const double tol = 1e-9 * std::min(dt_max, model.tau);
    const std::vector<double> align = detail::alignment_times(model.tau, t_end, grid, tol);
    const bool compensate = model.has_small_jumps();
    constexpr double inf = std::numeric_limits<double>::infinity();

    double t = 0.0;
    Vec<Dim> x = x0;
    observer.begin(t, x);

    std::size_t ia = 0;
    std::size_t ij = 0;
    long long ku = 1;
    while (ia < align.size()) {
        const double ta = align[ia];
        const double tu = static_cast<double>(ku) * dt_max;
        const double tj = ij < jumps.size() ? jumps[ij].time : inf;

        double tn;
        bool aligned = false;
        const JumpEvent<Dim>* jump = nullptr;
        if (tj < std::min(ta, tu) - tol) {
            tn = tj;
            jump = &jumps[ij];
        } else {
            if (tu < ta - tol) {
                tn = tu;
            } else {
                tn = ta;
                aligned = true;
            }
            if (std::abs(tj - tn) <= tol) jump = &jumps[ij];
        }

        const double h = tn - t;
        Vec<Dim> drift = model.drift(t, x);
        if (compensate) drift -= compensator_drift(model.nu, model.small_jump, t, x);
        const Vec<Dim> x_left = x + drift * h + model.diffusion(t, x) * wiener.increment(t, tn);
        Vec<Dim> x_next = x_left;
        if (jump) {
            const auto& u = jump->mark;
            x_next += u.norm() < kJumpCut ? model.small_jump(tn, x_left, u) : model.large_jump(tn, x_left, u);
        }
        if (!x_next.allFinite() || x_next.norm() > kDivergenceRadius) {
            throw DivergenceError("state diverged after t = " + std::to_string(t), t);
        }

        observer.step(StepView<Dim>{t, tn, x, x_left, x_next, jump, aligned});

        x = x_next;
        t = tn;
        if (jump) ++ij;
        if (aligned) ++ia;
        while (static_cast<double>(ku) * dt_max <= t + tol) ++ku;
    }
}

/// Jumps on [0, t_end) from derive_seed(seed, jumps); Wiener noise from
/// derive_seed(seed, wiener).
template <int Dim, class Observer>
void integrate(const PeriodicModel<Dim>& model, const Vec<Dim>& x0, double t_end, double dt_max,
               std::uint64_t seed, const GridOptions& grid, Observer& observer) {
    if (!(t_end > 0.0)) throw ParameterError("t_end must be positive");
    Engine jump_rng = make_engine(derive_seed(seed, StreamKey::jumps));
    const auto jumps = sample_jump_events(model.nu, 0.0, t_end, jump_rng);
    StreamWiener<Dim> wiener(model.noise_covariance, derive_seed(seed, StreamKey::wiener));
    integrate_with(model, x0, t_end, dt_max, jumps, wiener, grid, observer);
}

enum class Record { full, aligned };

/// Observer that stores a SamplePath.
template <int Dim>
class PathRecorder {
public:
    explicit PathRecorder(Record mode = Record::full) : mode_(mode) {}

    void begin(double t, const Vec<Dim>& x) {
        path_.grid.push_back(t);
        path_.states.push_back(x);
        path_.left_states.push_back(x);
        path_.jump_counts.push_back(0);
    }

    void step(const StepView<Dim>& s) {
        if (s.jump) {
            path_.jumps.push_back(*s.jump);
            path_.jumps.back().time = s.t1;
            ++pending_jumps_;
        }
        if (mode_ == Record::full || s.aligned) {
            path_.grid.push_back(s.t1);
            path_.states.push_back(s.x1);
            path_.left_states.push_back(s.x_left);
            path_.jump_counts.push_back(pending_jumps_);
            pending_jumps_ = 0;
        }
    }

    SamplePath<Dim> take(std::uint64_t seed) {
        path_.seed = seed;
        return std::move(path_);
    }

private:
    Record mode_;
    SamplePath<Dim> path_;
    int pending_jumps_ = 0;
};

template <int Dim>
SamplePath<Dim> integrate_path(const PeriodicModel<Dim>& model, const Vec<Dim>& x0, double t_end, double dt_max,
                               std::uint64_t seed, const GridOptions& grid = {}, Record mode = Record::full) {
    PathRecorder<Dim> rec(mode);
    integrate(model, x0, t_end, dt_max, seed, grid, rec);
    return rec.take(seed);
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Either a fixed point or an empirical law to draw from.
template <int Dim>
class InitialLaw {
public:
    InitialLaw(const Vec<Dim>& point) : point_(point) {}  // NOLINT: implicit on purpose
    InitialLaw(std::shared_ptr<const EmpiricalMeasure> law) : law_(std::move(law)) {
        if (!law_) throw ParameterError("null initial law");
    }
    explicit InitialLaw(EmpiricalMeasure law) : law_(std::make_shared<const EmpiricalMeasure>(std::move(law))) {}

    bool is_point() const noexcept { return !law_; }

    Vec<Dim> draw(std::uint64_t seed) const {
        if (!law_) return point_;
        Engine rng = make_engine(seed);
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        return Vec<Dim>(law_->point(law_->select(u)));
    }

    Vec<Dim> mean() const {
        if (!law_) return point_;
        return Vec<Dim>(law_->mean());
    }

private:
    Vec<Dim> point_;
    std::shared_ptr<const EmpiricalMeasure> law_;
};

template <int Dim>
struct PathEnsemble {
    std::vector<SamplePath<Dim>> paths;
    std::string model_hash;
    std::uint64_t master_seed = 0;
    double tau = 1.0;
    double dt_max = 0.0;
    double horizon = 0.0;
    int phases = 1;

    std::size_t size() const noexcept { return paths.size(); }
};

struct EnsembleOptions {
    GridOptions grid;
    Record record = Record::aligned;
    unsigned threads = 0;
};

inline std::uint64_t path_seed(std::uint64_t master_seed, std::size_t index) {
    return derive_seed(master_seed, StreamKey::path, index);
}

inline std::uint64_t initial_seed(std::uint64_t master_seed, std::size_t index) {
    return derive_seed(master_seed, StreamKey::initial, index);
}

/// n_paths independent paths; path i uses path_seed(master_seed, i) and draws
/// its start from initial_seed(master_seed, i).
template <int Dim>
PathEnsemble<Dim> integrate_ensemble(const PeriodicModel<Dim>& model, const InitialLaw<Dim>& init, double t_end,
                                     double dt_max, std::size_t n_paths, std::uint64_t master_seed,
                                     const EnsembleOptions& opt = {}) {
    if (n_paths < 1) throw ParameterError("n_paths must be >= 1");
    PathEnsemble<Dim> ens;
    ens.model_hash = model.hash;
    ens.master_seed = master_seed;
    ens.tau = model.tau;
    ens.dt_max = dt_max;
    ens.horizon = t_end;
    ens.phases = opt.grid.phases;
    ens.paths.resize(n_paths);
    parallel_for(n_paths, opt.threads, [&](std::size_t i) {
        try {
            const Vec<Dim> x0 = init.draw(initial_seed(master_seed, i));
            ens.paths[i] = integrate_path(model, x0, t_end, dt_max, path_seed(master_seed, i), opt.grid, opt.record);
        } catch (const DivergenceError& e) {
            throw e.with_path(static_cast<long>(i));
        }
    });
    return ens;
}

/// Index of the grid point equal to t (within tolerance), or -1.
inline long find_time(const std::vector<double>& grid, double t, double tol) {
    auto it = std::lower_bound(grid.begin(), grid.end(), t - tol);
    if (it == grid.end() || std::abs(*it - t) > tol) return -1;
    return static_cast<long>(it - grid.begin());
}

/// Samples of Y^k(t) = X(t + k tau), one per path.
template <int Dim>
std::vector<Vec<Dim>> shifted_segments(const PathEnsemble<Dim>& ens, int k, double phase) {
    if (k < 0) throw RangeError("k must be non-negative");
    if (phase < 0.0 || phase >= ens.tau) throw RangeError("phase must lie in [0, tau)");
    const double t = phase + k * ens.tau;
    const double tol = 1e-9 * ens.tau;
    if (t > ens.horizon + tol) throw RangeError("ensemble horizon too short for the requested shift");
    std::vector<Vec<Dim>> out;
    out.reserve(ens.size());
    for (const auto& p : ens.paths) {
        const long idx = find_time(p.grid, t, tol);
        if (idx < 0) throw RangeError("time " + std::to_string(t) + " is not a grid point");
        out.push_back(p.states[static_cast<std::size_t>(idx)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hypothesis checks
// ---------------------------------------------------------------------------

/// Box [lo, hi] sampled with points_per_axis points per axis, and
/// time_points times in [0, tau).
template <int Dim>
struct HypothesisDomain {
    Vec<Dim> lo;
    Vec<Dim> hi;
    int points_per_axis = 21;
    int time_points = 16;
};

struct LambdaWindow {
    double p = 2.0;
    double M = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    bool admissible = false;  // lambda_hat > lo
};

struct HypothesisReport {
    std::string scope = "estimated over domain";
    double M_hat = 0.0;            // H4, max over p
    std::vector<double> p_list;
    std::vector<double> M_by_p;
    double L_hat = 0.0;            // H5
    double lambda_hat = 0.0;       // H9, largest lambda valid at every grid point
    double lambda_lo = 0.0;        // L + 8 M^2 + 1/8 (M at p = 2)
    double lambda_hi = 0.0;        // lambda_lo + log(2)/4
    double lambda_used = 0.0;      // lambda entering alpha
    double alpha = 0.0;            // 4 lambda - 4 L - 32 M^2 - 1/2
    bool alpha_in_range = false;   // alpha in (0, log 2)
    double e_mass = 0.0;           // nu({|u| >= 1})
    double theorem5_a = 0.0;       // moment-bound constant, p = 2
    bool feasible = false;
    bool periodic = true;          // H3
    double h3_max_violation = 0.0;
    std::vector<double> h3_worst_point;  // (t, x...)
    double h9_worst_value = 0.0;   // -(lhs)/(1+|x|^2) at the worst point
    std::vector<double> h9_worst_point;
    std::vector<LambdaWindow> sensitivity;
    std::string e_note = "the constant e in the moment bound is read as nu({|u|>=1}), not Euler's number";
};

/// Constant a of the moment bound
/// E sup_{t<=s} |X(t)|^p <= (1 + 5^{p-1} E|xi|^p) e^{a s}, s in [0, tau]:
/// a = 5^{p-1} (L^p + M^p) 2^{p/2-1} [ (1 + (2e)^{p-1}) tau^{p-1}
///     + 2 (1 + 2^{p-2}) (p^3 / (2(p-1)))^{p/2} tau^{(p-2)/2} ].
inline double theorem5_constant(double p, double tau, double L, double M, double e_mass) {
    if (p < 2.0 || p > 4.0) throw ParameterError("p must lie in [2, 4]");
    const double bracket = (1.0 + std::pow(2.0 * e_mass, p - 1.0)) * std::pow(tau, p - 1.0) +
                           2.0 * (1.0 + std::pow(2.0, p - 2.0)) * std::pow(p * p * p / (2.0 * (p - 1.0)), p / 2.0) *
                               std::pow(tau, (p - 2.0) / 2.0);
    return std::pow(5.0, p - 1.0) * (std::pow(L, p) + std::pow(M, p)) * std::pow(2.0, p / 2.0 - 1.0) * bracket;
}

namespace detail {

template <int Dim>
std::vector<Vec<Dim>> box_points(const Vec<Dim>& lo, const Vec<Dim>& hi, int n) {
    const int d = static_cast<int>(lo.rows());
    std::vector<Vec<Dim>> out;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (;;) {
        Vec<Dim> x(d);
        for (int i = 0; i < d; ++i)
            x[i] = n == 1 ? 0.5 * (lo[i] + hi[i]) : lo[i] + (hi[i] - lo[i]) * idx[static_cast<std::size_t>(i)] / (n - 1);
        out.push_back(x);
        int i = 0;
        while (i < d && ++idx[static_cast<std::size_t>(i)] == n) idx[static_cast<std::size_t>(i++)] = 0;
        if (i == d) break;
    }
    return out;
}

template <class Fn>
auto guarded(Fn&& fn, const char* what) {
    try {
        return fn();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelError(std::string(what) + " evaluation failed: " + e.what());
    }
}

}  // namespace detail

/// Grid-supremum estimates of the H3, H4, H5 and H9 constants.
template <int Dim>
HypothesisReport check_hypotheses(const PeriodicModel<Dim>& model, const HypothesisDomain<Dim>& domain,
                                  std::vector<double> p_list = {2.0, 3.0, 4.0}) {
    model.require_complete();
    if (domain.points_per_axis < 1 || domain.time_points < 1) throw ParameterError("empty hypothesis domain");
    if (p_list.empty()) throw ParameterError("p_list is empty");
    for (double p : p_list)
        if (p < 2.0 || p > 4.0) throw ParameterError("p must lie in [2, 4]");

    const int d = model.dim;
    const double tau = model.tau;
    const auto points = detail::box_points<Dim>(domain.lo, domain.hi, domain.points_per_axis);
    std::vector<double> times;
    for (int k = 0; k < domain.time_points; ++k) times.push_back(tau * k / domain.time_points);
    const Vec<Dim> origin = Vec<Dim>::Zero(d);

    auto check = [](const auto& v, const char* what) {
        if (!v.allFinite()) throw ModelError(std::string(what) + " returned a non-finite value");
        return v;
    };
    auto f = [&](double t, const Vec<Dim>& x) {
        return check(detail::guarded([&] { return Vec<Dim>(model.drift(t, x)); }, "f"), "f");
    };
    auto g = [&](double t, const Vec<Dim>& x) {
        return check(detail::guarded([&] { return Mat<Dim>(model.diffusion(t, x)); }, "g"), "g");
    };
    auto F = [&](double t, const Vec<Dim>& x, const Vec<Dim>& u) {
        return check(detail::guarded([&] { return Vec<Dim>(model.small_jump(t, x, u)); }, "F"), "F");
    };
    auto G = [&](double t, const Vec<Dim>& x, const Vec<Dim>& u) {
        return check(detail::guarded([&] { return Vec<Dim>(model.large_jump(t, x, u)); }, "G"), "G");
    };

    HypothesisReport rep;
    rep.p_list = p_list;
    rep.e_mass = validate_levy_measure(model.nu).e;

    // H4
    for (double p : p_list) {
        double m = 0.0;
        for (double t : times) {
            m = std::max(m, f(t, origin).norm());
            m = std::max(m, g(t, origin).norm());
            const double small = integrate_small(model.nu, [&](const Vec<Dim>& u) { return std::pow(F(t, origin, u).norm(), p); });
            const double large = integrate_large(model.nu, [&](const Vec<Dim>& u) { return std::pow(G(t, origin, u).norm(), p); });
            m = std::max({m, std::pow(small, 1.0 / p), std::pow(large, 1.0 / p)});
        }
        rep.M_by_p.push_back(m);
        rep.M_hat = std::max(rep.M_hat, m);
    }

    // H5: all pairs for small grids, axis neighbours otherwise.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (points.size() <= 400) {
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j) pairs.emplace_back(i, j);
    } else {
        const int n = domain.points_per_axis;
        for (std::size_t i = 0; i < points.size(); ++i) {
            std::size_t stride = 1;
            for (int axis = 0; axis < d; ++axis, stride *= static_cast<std::size_t>(n)) {
                const std::size_t coord = (i / stride) % static_cast<std::size_t>(n);
                if (coord + 1 < static_cast<std::size_t>(n)) pairs.emplace_back(i, i + stride);
            }
        }
    }
    for (double t : times) {
        for (const auto& [i, j] : pairs) {
            const auto& x1 = points[i];
            const auto& x2 = points[j];
            const double dx = (x1 - x2).norm();
            if (dx == 0.0) continue;
            double r = std::max((f(t, x1) - f(t, x2)).norm(), (g(t, x1) - g(t, x2)).norm()) / dx;
            for (double p : p_list) {
                const double small = integrate_small(model.nu, [&](const Vec<Dim>& u) {
                    return std::pow((F(t, x1, u) - F(t, x2, u)).norm(), p);
                });
                const double large = integrate_large(model.nu, [&](const Vec<Dim>& u) {
                    return std::pow((G(t, x1, u) - G(t, x2, u)).norm(), p);
                });
                r = std::max({r, std::pow(small, 1.0 / p) / dx, std::pow(large, 1.0 / p) / dx});
            }
            rep.L_hat = std::max(rep.L_hat, r);
        }
    }

    // H9
    rep.lambda_hat = std::numeric_limits<double>::infinity();
    for (double t : times) {
        for (const auto& x : points) {
            const double lhs = 2.0 * x.dot(f(t, x)) +
                               integrate_large(model.nu, [&](const Vec<Dim>& u) { return 2.0 * x.dot(G(t, x, u)); });
            const double lam = -lhs / (1.0 + x.squaredNorm());
            if (lam < rep.lambda_hat) {
                rep.lambda_hat = lam;
                rep.h9_worst_value = lam;
                rep.h9_worst_point.assign(1, t);
                for (int i = 0; i < d; ++i) rep.h9_worst_point.push_back(x[i]);
            }
        }
    }

    // H3, sampled at the grid with marks taken from the atoms.
    std::vector<Vec<Dim>> marks;
    for (const auto& a : model.nu.atoms) marks.push_back(a.location);
    if (marks.empty()) marks.push_back(Vec<Dim>::Constant(d, 0.5));
    for (double t : times) {
        for (const auto& x : points) {
            double v = std::max((f(t, x) - f(t + tau, x)).norm(), (g(t, x) - g(t + tau, x)).norm());
            for (const auto& u : marks)
                v = std::max({v, (F(t, x, u) - F(t + tau, x, u)).norm(), (G(t, x, u) - G(t + tau, x, u)).norm()});
            if (v > rep.h3_max_violation) {
                rep.h3_max_violation = v;
                rep.h3_worst_point.assign(1, t);
                for (int i = 0; i < d; ++i) rep.h3_worst_point.push_back(x[i]);
            }
        }
    }
    rep.periodic = rep.h3_max_violation <= 1e-9 * (1.0 + rep.M_hat + rep.L_hat);

    // Admissible window and alpha, M taken at p = 2 (or the smallest p given).
    const double M2 = rep.M_by_p.front();
    auto window = [&](double M) {
        const double lo = rep.L_hat + 8.0 * M * M + 0.125;
        return std::pair{lo, lo + 0.25 * std::log(2.0)};
    };
    std::tie(rep.lambda_lo, rep.lambda_hi) = window(M2);
    for (std::size_t k = 0; k < p_list.size(); ++k) {
        const auto [lo, hi] = window(rep.M_by_p[k]);
        rep.sensitivity.push_back({p_list[k], rep.M_by_p[k], lo, hi, rep.lambda_hat > lo});
    }
    // Any lambda in the window below lambda_hat satisfies H9; above the window
    // we report alpha at the window midpoint.
    rep.lambda_used = rep.lambda_hat < rep.lambda_hi ? rep.lambda_hat : 0.5 * (rep.lambda_lo + rep.lambda_hi);
    rep.alpha = 4.0 * rep.lambda_used - 4.0 * rep.L_hat - 32.0 * M2 * M2 - 0.5;
    rep.alpha_in_range = rep.alpha > 0.0 && rep.alpha < std::log(2.0);
    rep.theorem5_a = theorem5_constant(2.0, tau, rep.L_hat, rep.M_hat, rep.e_mass);
    rep.feasible = rep.lambda_hat > rep.lambda_lo && rep.alpha_in_range;
    return rep;
}

// ---------------------------------------------------------------------------
// Moment bounds
// ---------------------------------------------------------------------------

struct ExpMomentCurve {
    double eta = 0.0;
    std::vector<double> empirical;     // E exp(eta |X(s)|^2)
    std::vector<double> lemma_shape;   // E exp(eta e^{-alpha s} |xi|^2)
    double fitted_prefactor = 0.0;     // max ratio empirical / shape
    bool finite = true;
};

struct MomentBoundReport {
    double p = 2.0;
    double a = 0.0;
    double xi_moment = 0.0;  // E|xi|^p
    std::vector<double> s;
    std::vector<double> empirical_sup_moment;
    std::vector<double> standard_error;
    std::vector<double> theorem5_bound;
    double min_margin = 0.0;
    bool holds = false;
    double alpha = 0.0;
    double eta0 = 0.0;
    std::vector<ExpMomentCurve> exp_moments;
};

/// Compares E sup_{t<=s} |X(t)|^p with the moment bound on s in [0, tau], and
/// tabulates E exp(eta |X(s)|^2) against exp(eta e^{-alpha s} |xi|^2) for the
/// requested eta in (0, eta0], 4 < eta0 < 8. Paths must be fully recorded.
template <int Dim>
MomentBoundReport moment_bound_check(const PathEnsemble<Dim>& ens, double p, const HypothesisReport& hyp,
                                     double eta0 = 6.0, std::vector<double> etas = {}, int s_points = 20) {
    if (p < 2.0 || p > 4.0) throw ParameterError("p must lie in [2, 4]");
    if (!(eta0 > 4.0 && eta0 < 8.0)) throw ParameterError("eta0 must lie in (4, 8)");
    for (double eta : etas)
        if (!(eta > 0.0 && eta <= eta0)) throw ParameterError("eta must lie in (0, eta0]");
    if (ens.paths.empty()) throw ParameterError("empty ensemble");
    if (ens.horizon < ens.tau * (1.0 - 1e-12)) throw RangeError("ensemble must cover [0, tau]");

    MomentBoundReport rep;
    rep.p = p;
    rep.alpha = hyp.alpha;
    rep.eta0 = eta0;
    rep.a = theorem5_constant(p, ens.tau, hyp.L_hat, hyp.M_hat, hyp.e_mass);
    for (int j = 0; j <= s_points; ++j) rep.s.push_back(ens.tau * j / s_points);

    const std::size_t n = ens.size();
    const double tol = 1e-9 * ens.tau;
    std::vector<std::vector<double>> sup_p(n, std::vector<double>(rep.s.size()));
    std::vector<std::vector<double>> sq_at(n, std::vector<double>(rep.s.size()));
    std::vector<double> xi_sq(n);
    long double xi_moment = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& path = ens.paths[i];
        xi_sq[i] = path.states.front().squaredNorm();
        xi_moment += std::pow(path.states.front().norm(), p);
        double running = 0.0;
        std::size_t k = 0;
        for (std::size_t j = 0; j < rep.s.size(); ++j) {
            while (k < path.size() && path.grid[k] <= rep.s[j] + tol) {
                running = std::max({running, std::pow(path.states[k].norm(), p), std::pow(path.left_states[k].norm(), p)});
                ++k;
            }
            sup_p[i][j] = running;
            sq_at[i][j] = path.states[k - 1].squaredNorm();
        }
    }
    rep.xi_moment = static_cast<double>(xi_moment / n);

    rep.holds = true;
    rep.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < rep.s.size(); ++j) {
        long double sum = 0.0L, sum2 = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            sum += sup_p[i][j];
            sum2 += static_cast<long double>(sup_p[i][j]) * sup_p[i][j];
        }
        const double mean = static_cast<double>(sum / n);
        const double var = n > 1 ? std::max(0.0, static_cast<double>((sum2 - sum * sum / n) / (n - 1))) : 0.0;
        const double bound = (1.0 + std::pow(5.0, p - 1.0) * rep.xi_moment) * std::exp(rep.a * rep.s[j]);
        rep.empirical_sup_moment.push_back(mean);
        rep.standard_error.push_back(std::sqrt(var / n));
        rep.theorem5_bound.push_back(bound);
        rep.min_margin = std::min(rep.min_margin, bound - mean);
        if (!(mean <= bound)) rep.holds = false;
    }

    for (double eta : etas) {
        ExpMomentCurve c;
        c.eta = eta;
        for (std::size_t j = 0; j < rep.s.size(); ++j) {
            long double emp = 0.0L, shape = 0.0L;
            for (std::size_t i = 0; i < n; ++i) {
                emp += std::exp(static_cast<long double>(eta * sq_at[i][j]));
                shape += std::exp(static_cast<long double>(eta * std::exp(-hyp.alpha * rep.s[j]) * xi_sq[i]));
            }
            c.empirical.push_back(static_cast<double>(emp / n));
            c.lemma_shape.push_back(static_cast<double>(shape / n));
            if (!std::isfinite(c.empirical.back())) c.finite = false;
            c.fitted_prefactor = std::max(c.fitted_prefactor, c.empirical.back() / c.lemma_shape.back());
        }
        rep.exp_moments.push_back(std::move(c));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Self-convergence
// ---------------------------------------------------------------------------

struct ConvergenceStudy {
    std::vector<double> dts;        // dt_max at each level
    std::vector<double> rms_diffs;  // RMS |X_dt(t_end) - X_{dt/2}(t_end)|, one per consecutive pair
    double order = 0.0;             // least-squares slope of log2(rms) against -level
};

/// Runs `levels` step sizes dt_coarse / 2^k on common Brownian paths (a
/// lattice of spacing dt_coarse / 2^(levels-1)) and fits the strong
/// self-convergence order. Models with jumps are rejected: jump times would
/// leave the noise lattice.
template <int Dim>
ConvergenceStudy self_convergence_study(const PeriodicModel<Dim>& model, const Vec<Dim>& x0, double t_end,
                                        double dt_coarse, int levels, std::size_t replicas, std::uint64_t seed,
                                        unsigned threads = 0) {
    if (levels < 3) throw ParameterError("need at least three refinement levels");
    if (!model.nu.empty()) throw ModelError("self-convergence study requires a jump-free model");
    const double h_fine = dt_coarse / std::pow(2.0, levels - 1);
    const double ratio = model.tau / h_fine;
    if (std::abs(ratio - std::round(ratio)) > 1e-6) throw ParameterError("tau must be a multiple of the finest step");

    ConvergenceStudy study;
    for (int k = 0; k < levels; ++k) study.dts.push_back(dt_coarse / std::pow(2.0, k));

    struct Final {
        Vec<Dim> x;
        void begin(double, const Vec<Dim>& v) { x = v; }
        void step(const StepView<Dim>& s) { x = s.x1; }
    };

    std::vector<std::vector<Vec<Dim>>> finals(replicas, std::vector<Vec<Dim>>(static_cast<std::size_t>(levels)));
    parallel_for(replicas, threads, [&](std::size_t r) {
        const std::uint64_t rs = derive_seed(seed, StreamKey::replica, r);
        for (int k = 0; k < levels; ++k) {
            LatticeWiener<Dim> wiener(model.noise_covariance, rs, h_fine);
            Final obs;
            integrate_with(model, x0, t_end, study.dts[static_cast<std::size_t>(k)], {}, wiener, GridOptions{}, obs);
            finals[r][static_cast<std::size_t>(k)] = obs.x;
        }
    });

    for (int k = 0; k + 1 < levels; ++k) {
        long double acc = 0.0L;
        for (std::size_t r = 0; r < replicas; ++r)
            acc += (finals[r][static_cast<std::size_t>(k)] - finals[r][static_cast<std::size_t>(k + 1)]).squaredNorm();
        study.rms_diffs.push_back(std::sqrt(static_cast<double>(acc / replicas)));
    }
    // slope of log2(rms_k) against k, negated
    const std::size_t m = study.rms_diffs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < m; ++k) {
        const double x = static_cast<double>(k);
        const double y = std::log2(study.rms_diffs[k]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    study.order = -slope;
    return study;
}

}  // namespace levy_periodic
