// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "levy_periodic/errors.hpp"
#include "levy_periodic/rng.hpp"
#include "levy_periodic/types.hpp"

namespace levy_periodic {

/// Marks with |u| < kJumpCut are small jumps (compensated), the rest are
/// large jumps. The radius is fixed: the H4/H5/H9 constants depend on it.
inline constexpr double kJumpCut = 1.0;

/// Node count of the Gauss-Legendre rule used for continuous mark laws.
inline constexpr int kQuadratureNodes = 64;

enum class MarkFamily { uniform, normal };

inline const char* to_string(MarkFamily f) {
    return f == MarkFamily::uniform ? "uniform" : "normal";
}

template <int Dim>
struct JumpAtom {
    Vec<Dim> location = Vec<Dim>::Zero();
    double rate = 0.0;
};

/// Finite-rate continuous mark law. Marks are r * direction with r drawn
/// from U[p1, p2] (uniform) or N(p1, p2^2) (normal); direction is a unit vector.
template <int Dim>
struct MarkComponent {
    MarkFamily family = MarkFamily::uniform;
    double p1 = 0.0;
    double p2 = 0.0;
    double rate = 0.0;
    Vec<Dim> direction = Vec<Dim>::UnitX();
};

/// Finite-activity Levy measure: atoms plus parametric components.
template <int Dim>
struct JumpMeasureSpec {
    std::vector<JumpAtom<Dim>> atoms;
    std::vector<MarkComponent<Dim>> components;

    bool empty() const noexcept { return atoms.empty() && components.empty(); }

    double total_rate() const noexcept {
        double r = 0.0;
        for (const auto& a : atoms) r += a.rate;
        for (const auto& c : components) r += c.rate;
        return r;
    }

    JumpMeasureSpec merged(const JumpMeasureSpec& other) const {
        JumpMeasureSpec out = *this;
        out.atoms.insert(out.atoms.end(), other.atoms.begin(), other.atoms.end());
        out.components.insert(out.components.end(), other.components.begin(), other.components.end());
        return out;
    }
};

template <int Dim>
struct LevyTriplet {
    Vec<Dim> drift = Vec<Dim>::Zero();
    Mat<Dim> covariance = Mat<Dim>::Zero();
    JumpMeasureSpec<Dim> nu;
};

struct ValidationReport {
    double eq4_value = 0.0;        // sum of rate * (|u|^2 ^ 1), plus quadrature for components
    double e = 0.0;                // mass of nu on {|u| >= 1}
    double quadrature_error = 0.0; // |64-node - 32-node| over all component integrals
    bool ok = false;
};

namespace detail {

inline double normal_pdf(double r, double mean, double sd) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    const double z = (r - mean) / sd;
    return inv_sqrt_2pi / sd * std::exp(-0.5 * z * z);
}

inline double normal_cdf(double r, double mean, double sd) {
    return 0.5 * std::erfc(-(r - mean) / (sd * std::sqrt(2.0)));
}

template <int Dim>
double mark_density(const MarkComponent<Dim>& c, double r) {
    if (c.family == MarkFamily::uniform) return (r >= c.p1 && r <= c.p2) ? 1.0 / (c.p2 - c.p1) : 0.0;
    return normal_pdf(r, c.p1, c.p2);
}

// Support interval used for quadrature; normal laws are cut at 10 sd.
template <int Dim>
std::pair<double, double> mark_support(const MarkComponent<Dim>& c) {
    if (c.family == MarkFamily::uniform) return {c.p1, c.p2};
    return {c.p1 - 10.0 * c.p2, c.p1 + 10.0 * c.p2};
}

enum class Region { small, large };

// Pieces of the support that fall into the requested region.
template <int Dim>
std::vector<std::pair<double, double>> region_pieces(const MarkComponent<Dim>& c, Region region) {
    const auto [lo, hi] = mark_support(c);
    std::vector<std::pair<double, double>> out;
    auto add = [&](double a, double b) {
        a = std::max(a, lo);
        b = std::min(b, hi);
        if (b > a) out.emplace_back(a, b);
    };
    if (region == Region::small) {
        add(-kJumpCut, kJumpCut);
    } else {
        add(-std::numeric_limits<double>::infinity(), -kJumpCut);
        add(kJumpCut, std::numeric_limits<double>::infinity());
    }
    return out;
}

// rate * integral of h(r) * density(r) over the region, with an error estimate.
template <int Points, int Dim, class H>
double component_integral_n(const MarkComponent<Dim>& c, Region region, H&& h) {
    double total = 0.0;
    for (const auto& [a, b] : region_pieces(c, region)) {
        total += boost::math::quadrature::gauss<double, Points>::integrate(
            [&](double r) { return h(r) * mark_density(c, r); }, a, b);
    }
    return c.rate * total;
}

template <int Dim>
double large_mass(const MarkComponent<Dim>& c) {
    if (c.family == MarkFamily::uniform) {
        const double width = c.p2 - c.p1;
        double m = 0.0;
        if (c.p1 < -kJumpCut) m += std::min(c.p2, -kJumpCut) - c.p1;
        if (c.p2 > kJumpCut) m += c.p2 - std::max(c.p1, kJumpCut);
        return c.rate * std::max(0.0, m) / width;
    }
    const double p = normal_cdf(-kJumpCut, c.p1, c.p2) + (1.0 - normal_cdf(kJumpCut, c.p1, c.p2));
    return c.rate * p;
}

template <int Dim>
void check_component(const MarkComponent<Dim>& c, std::size_t index) {
    const std::string where = "component " + std::to_string(index);
    if (!(c.rate > 0.0) || !std::isfinite(c.rate)) throw InvalidRate(where + ": rate must be positive and finite");
    if (!std::isfinite(c.p1) || !std::isfinite(c.p2)) throw InvalidAtom(where + ": non-finite parameter");
    if (c.family == MarkFamily::uniform && !(c.p2 > c.p1)) throw InvalidAtom(where + ": uniform needs p2 > p1");
    if (c.family == MarkFamily::normal && !(c.p2 > 0.0)) throw InvalidAtom(where + ": normal needs sd > 0");
    if (!c.direction.allFinite() || std::abs(c.direction.norm() - 1.0) > 1e-12)
        throw InvalidAtom(where + ": direction must be a unit vector");
}

}  // namespace detail

/// Integral of h(u) nu(du) over {|u| < 1}.
template <int Dim, class H>
double integrate_small(const JumpMeasureSpec<Dim>& spec, H&& h) {
    double total = 0.0;
    for (const auto& a : spec.atoms)
        if (a.location.norm() < kJumpCut) total += a.rate * h(a.location);
    for (const auto& c : spec.components)
        total += detail::component_integral_n<kQuadratureNodes>(
            c, detail::Region::small, [&](double r) { return h(Vec<Dim>(r * c.direction)); });
    return total;
}

/// Integral of h(u) nu(du) over {|u| >= 1}.
template <int Dim, class H>
double integrate_large(const JumpMeasureSpec<Dim>& spec, H&& h) {
    double total = 0.0;
    for (const auto& a : spec.atoms)
        if (a.location.norm() >= kJumpCut) total += a.rate * h(a.location);
    for (const auto& c : spec.components)
        total += detail::component_integral_n<kQuadratureNodes>(
            c, detail::Region::large, [&](double r) { return h(Vec<Dim>(r * c.direction)); });
    return total;
}

/// Checks rates and marks, then evaluates the integrability sum and the
/// large-jump mass e.
template <int Dim>
ValidationReport validate_levy_measure(const JumpMeasureSpec<Dim>& spec) {
    ValidationReport rep;
    for (std::size_t i = 0; i < spec.atoms.size(); ++i) {
        const auto& a = spec.atoms[i];
        if (!(a.rate > 0.0) || !std::isfinite(a.rate))
            throw InvalidRate("atom " + std::to_string(i) + ": rate must be positive and finite");
        if (!a.location.allFinite()) throw InvalidAtom("atom " + std::to_string(i) + ": non-finite location");
        const double r2 = a.location.squaredNorm();
        rep.eq4_value += a.rate * std::min(r2, 1.0);
        if (a.location.norm() >= kJumpCut) rep.e += a.rate;
    }
    for (std::size_t i = 0; i < spec.components.size(); ++i) {
        const auto& c = spec.components[i];
        detail::check_component(c, i);
        auto sq = [](double r) { return r * r; };
        const double fine = detail::component_integral_n<kQuadratureNodes>(c, detail::Region::small, sq);
        const double coarse = detail::component_integral_n<kQuadratureNodes / 2>(c, detail::Region::small, sq);
        const double mass = detail::large_mass(c);
        rep.eq4_value += fine + mass;
        rep.e += mass;
        rep.quadrature_error += std::abs(fine - coarse);
    }
    rep.ok = std::isfinite(rep.eq4_value) && std::isfinite(rep.e);
    return rep;
}

/// Symmetric square root S of a PSD matrix (S S^T = Q).
/// Throws CovarianceError when Q is not symmetric PSD.
template <int Dim>
Mat<Dim> covariance_root(const Mat<Dim>& Q) {
    if (!Q.allFinite()) throw CovarianceError("covariance has non-finite entries");
    const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw CovarianceError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat<Dim>> eig(Q);
    const auto& ev = eig.eigenvalues();
    if (ev.minCoeff() < -1e-12 * scale) throw CovarianceError("covariance is not positive semidefinite");
    const Vec<Dim> root = ev.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/// Draws one N(0, I) vector.
template <int Dim>
Vec<Dim> standard_normal(Engine& rng, int dim = Dim) {
    std::normal_distribution<double> n01;
    Vec<Dim> z(dim);
    for (int i = 0; i < dim; ++i) z[i] = n01(rng);
    return z;
}

/// n increments distributed N(0, Q dt).
template <int Dim>
std::vector<Vec<Dim>> sample_wiener_increments(const Mat<Dim>& Q, double dt, std::size_t n, Engine& rng) {
    if (!(dt > 0.0)) throw ParameterError("dt must be positive");
    const Mat<Dim> root = covariance_root(Q);
    const double sdt = std::sqrt(dt);
    std::vector<Vec<Dim>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(root * standard_normal<Dim>(rng, Q.rows()) * sdt);
    return out;
}

template <int Dim>
Vec<Dim> sample_mark(const MarkComponent<Dim>& c, Engine& rng) {
    double r;
    if (c.family == MarkFamily::uniform) {
        r = std::uniform_real_distribution<double>(c.p1, c.p2)(rng);
    } else {
        r = std::normal_distribution<double>(c.p1, c.p2)(rng);
    }
    return r * c.direction;
}

/// Jump events on [t0, t1): one homogeneous Poisson process per atom and per
/// component (ids: atoms first, then components), merged by time. Consumes
/// exactly one draw from rng.
/// Zero rates produce no events; negative rates are rejected.
template <int Dim>
std::vector<JumpEvent<Dim>> sample_jump_events(const JumpMeasureSpec<Dim>& spec, double t0, double t1, Engine& rng) {
    if (!(t1 > t0)) throw IntervalError("sample_jump_events needs t0 < t1");
    std::vector<JumpEvent<Dim>> events;
    // One sub-stream per source, so the events of a source on a prefix
    // [t0, s) do not depend on t1 or on the other sources.
    const std::uint64_t base = rng();
    auto run = [&](double rate, int id, auto&& mark) {
        if (rate < 0.0 || !std::isfinite(rate)) throw InvalidRate("negative or non-finite jump rate");
        if (rate == 0.0) return;
        Engine sub = make_engine(derive_seed(base, static_cast<std::uint64_t>(id)));
        std::exponential_distribution<double> gap(rate);
        for (double t = t0 + gap(sub); t < t1; t += gap(sub)) events.push_back({t, mark(sub), id});
    };
    int id = 0;
    for (const auto& a : spec.atoms) {
        run(a.rate, id++, [&](Engine&) { return a.location; });
    }
    for (const auto& c : spec.components) {
        run(c.rate, id++, [&](Engine& sub) { return sample_mark(c, sub); });
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.time < b.time; });
    // Coincident times have probability zero; separate them if rounding produced one.
    for (std::size_t i = 1; i < events.size(); ++i) {
        if (events[i].time <= events[i - 1].time)
            events[i].time = std::nextafter(events[i - 1].time, std::numeric_limits<double>::infinity());
    }
    while (!events.empty() && events.back().time >= t1) events.pop_back();
    return events;
}

/// Integral of F(t, x, u) nu(du) over {|u| < 1}: the drift removed by
/// compensating the small-jump integral.
template <int Dim, class SmallJump>
Vec<Dim> compensator_drift(const JumpMeasureSpec<Dim>& spec, SmallJump&& F, double t, const Vec<Dim>& x) {
    Vec<Dim> out = Vec<Dim>::Zero(x.rows());
    for (const auto& a : spec.atoms)
        if (a.location.norm() < kJumpCut) out += a.rate * F(t, x, a.location);
    for (const auto& c : spec.components) {
        for (const auto& [lo, hi] : detail::region_pieces(c, detail::Region::small)) {
            // Gauss-Legendre on [lo, hi], componentwise.
            using Rule = boost::math::quadrature::gauss<double, kQuadratureNodes>;
            const auto& abscissa = Rule::abscissa();
            const auto& weights = Rule::weights();
            const double half = 0.5 * (hi - lo);
            const double mid = 0.5 * (hi + lo);
            auto node = [&](double r, double w) {
                out += (c.rate * w * half * detail::mark_density(c, r)) * F(t, x, Vec<Dim>(r * c.direction));
            };
            for (std::size_t k = 0; k < abscissa.size(); ++k) {
                if (abscissa[k] == 0.0) {
                    node(mid, weights[k]);
                } else {
                    node(mid + half * abscissa[k], weights[k]);
                    node(mid - half * abscissa[k], weights[k]);
                }
            }
        }
    }
    return out;
}

/// Mean small-jump mark rate: sum over |u|<1 of rate * u (plus components).
template <int Dim>
Vec<Dim> small_jump_mean(const JumpMeasureSpec<Dim>& spec, int dim = Dim) {
    auto identity = [](double, const Vec<Dim>&, const Vec<Dim>& u) { return u; };
    return compensator_drift(spec, identity, 0.0, Vec<Dim>(Vec<Dim>::Zero(dim)));
}

/// Levy path sampled on `grid` by the Levy-Ito construction
/// L(t) = b t + W(t) + (small jumps - t * compensator) + large jumps.
/// Jumps use the stream derive_seed(seed, jumps) on [grid.front(), grid.back()),
/// Wiener increments use derive_seed(seed, wiener), one draw per grid interval.
template <int Dim>
SamplePath<Dim> assemble_levy_path(const LevyTriplet<Dim>& triplet, const std::vector<double>& grid,
                                   std::uint64_t seed) {
    if (grid.empty()) throw ParameterError("empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw ParameterError("grid must be strictly increasing");
    if (grid.front() != 0.0) throw ParameterError("grid must start at 0");

    const int dim = static_cast<int>(triplet.drift.rows());
    const Mat<Dim> root = covariance_root(triplet.covariance);
    const Vec<Dim> comp = small_jump_mean(triplet.nu, dim);

    Engine jump_rng = make_engine(derive_seed(seed, StreamKey::jumps));
    Engine wiener_rng = make_engine(derive_seed(seed, StreamKey::wiener));

    SamplePath<Dim> path;
    path.seed = seed;
    path.grid = grid;
    if (grid.size() > 1) path.jumps = sample_jump_events(triplet.nu, grid.front(), grid.back(), jump_rng);

    Vec<Dim> w = Vec<Dim>::Zero(dim);
    Vec<Dim> jumps_sum = Vec<Dim>::Zero(dim);
    std::size_t next_jump = 0;
    auto value = [&](double t) { return Vec<Dim>(triplet.drift * t + w + jumps_sum - t * comp); };

    path.states.push_back(Vec<Dim>::Zero(dim));
    path.left_states.push_back(path.states.back());
    path.jump_counts.push_back(0);

    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double h = grid[k] - grid[k - 1];
        w += root * standard_normal<Dim>(wiener_rng, dim) * std::sqrt(h);
        int count = 0;
        const Vec<Dim> before = value(grid[k]);
        while (next_jump < path.jumps.size() && path.jumps[next_jump].time <= grid[k]) {
            jumps_sum += path.jumps[next_jump].mark;
            ++next_jump;
            ++count;
        }
        path.states.push_back(value(grid[k]));
        // Left limit is exact when the jumps sit on grid points.
        path.left_states.push_back(count > 0 ? before : path.states.back());
        path.jump_counts.push_back(count);
    }
    return path;
}

}  // namespace levy_periodic
