// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "levy_periodic/errors.hpp"
#include "levy_periodic/levy_noise.hpp"
#include "levy_periodic/sde_engine.hpp"

namespace levy_periodic {

/// Parameters of the affine periodic family
///   f(t, x) = -a x + c + (A sin(w t) + B cos(w t)) 1,   w = 2 pi / tau
///   g(t, x) = s I + s_lin diag(x)
///   F(t, x, u) = F_scale u
///   G(t, x, u) = G_scale u            (G_kind = identity)
///              = G_scale u cos(w t)   (G_kind = cos_modulated)
/// with Wiener covariance q_scale I and jump measure given by `atoms`
/// ("loc@rate; ...", loc either a scalar along e1 or "x1,x2,...") and
/// `components` ("uniform(lo,hi)@rate; normal(m,sd)@rate", direction e1).
struct ModelParams {
    std::string name = "ou_brownian";
    int dim = 1;
    double tau = 1.0;
    double a = 1.0;
    double A = 0.5;
    double B = 0.0;
    double c = 0.0;
    double s = 1.0;
    double s_lin = 0.0;
    double q_scale = 1.0;
    double F_scale = 1.0;
    double G_scale = 1.0;
    std::string G_kind = "identity";
    std::string atoms;
    std::string components;

    bool operator==(const ModelParams&) const = default;
};

inline const std::vector<std::string>& model_names() {
    static const std::vector<std::string> names{"ou_brownian", "ou_jumps", "affine"};
    return names;
}

/// Defaults of a named preset. `affine` starts from ou_brownian's values.
inline ModelParams model_preset(std::string_view name) {
    ModelParams p;
    if (name == "ou_brownian" || name == "affine") {
        p.name = std::string(name);
        return p;
    }
    if (name == "ou_jumps") {
        p.name = "ou_jumps";
        p.atoms = "0.3@2; -0.3@2; 1.5@0.4";
        p.G_kind = "cos_modulated";
        return p;
    }
    throw ModelError("unknown model '" + std::string(name) + "'");
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string canonical_string(const ModelParams& p) {
    std::ostringstream os;
    os << p.name << ";dim=" << p.dim << ";tau=" << format_double(p.tau) << ";a=" << format_double(p.a)
       << ";A=" << format_double(p.A) << ";B=" << format_double(p.B) << ";c=" << format_double(p.c)
       << ";s=" << format_double(p.s) << ";s_lin=" << format_double(p.s_lin) << ";q_scale=" << format_double(p.q_scale)
       << ";F_scale=" << format_double(p.F_scale) << ";G_scale=" << format_double(p.G_scale) << ";G_kind=" << p.G_kind
       << ";atoms=" << p.atoms << ";components=" << p.components;
    return os.str();
}

inline std::string model_hash(const ModelParams& p) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_string(p))));
    return buf;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_number(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ModelError("cannot parse number '" + s + "' in " + what);
    }
    if (used != s.size() || !std::isfinite(v)) throw ModelError("cannot parse number '" + s + "' in " + what);
    return v;
}

}  // namespace detail

/// Parses the `atoms` and `components` strings into a jump measure.
template <int Dim>
JumpMeasureSpec<Dim> parse_jump_measure(const std::string& atoms, const std::string& components, int dim) {
    JumpMeasureSpec<Dim> nu;
    const Vec<Dim> e1 = Vec<Dim>::Unit(dim, 0);
    for (const auto& item : detail::split(atoms, ';')) {
        if (item.empty()) continue;
        const auto parts = detail::split(item, '@');
        if (parts.size() != 2) throw ModelError("atom '" + item + "' must look like loc@rate");
        const auto coords = detail::split(parts[0], ',');
        JumpAtom<Dim> a;
        if (coords.size() == 1) {
            a.location = detail::parse_number(coords[0], "atom location") * e1;
        } else if (static_cast<int>(coords.size()) == dim) {
            a.location = Vec<Dim>::Zero(dim);
            for (int i = 0; i < dim; ++i) a.location[i] = detail::parse_number(coords[static_cast<std::size_t>(i)], "atom location");
        } else {
            throw DimError("atom '" + item + "' has the wrong number of coordinates");
        }
        a.rate = detail::parse_number(parts[1], "atom rate");
        nu.atoms.push_back(a);
    }
    for (const auto& item : detail::split(components, ';')) {
        if (item.empty()) continue;
        const auto parts = detail::split(item, '@');
        const auto open = parts[0].find('(');
        const auto close = parts[0].rfind(')');
        if (parts.size() != 2 || open == std::string::npos || close == std::string::npos || close < open)
            throw ModelError("component '" + item + "' must look like family(p1,p2)@rate");
        const auto family = detail::trim(std::string_view(parts[0]).substr(0, open));
        const auto args = detail::split(std::string_view(parts[0]).substr(open + 1, close - open - 1), ',');
        if (args.size() != 2) throw ModelError("component '" + item + "' needs two parameters");
        MarkComponent<Dim> c;
        if (family == "uniform") {
            c.family = MarkFamily::uniform;
        } else if (family == "normal") {
            c.family = MarkFamily::normal;
        } else {
            throw ModelError("unknown mark family '" + family + "'");
        }
        c.p1 = detail::parse_number(args[0], "component parameter");
        c.p2 = detail::parse_number(args[1], "component parameter");
        c.rate = detail::parse_number(parts[1], "component rate");
        c.direction = e1;
        nu.components.push_back(c);
    }
    validate_levy_measure(nu);
    return nu;
}

template <int Dim>
PeriodicModel<Dim> make_model(const ModelParams& p) {
    if (p.dim != (Dim > 0 ? Dim : p.dim)) throw DimError("model dimension does not match the template dimension");
    if (!(p.tau > 0.0) || !std::isfinite(p.tau)) throw ModelError("tau must be positive");
    if (!(p.q_scale >= 0.0)) throw ModelError("q_scale must be non-negative");
    if (p.G_kind != "identity" && p.G_kind != "cos_modulated") throw ModelError("G_kind must be identity or cos_modulated");
    using S = Vec<Dim>;
    using M = Mat<Dim>;
    const int d = p.dim;
    const double w = 2.0 * std::numbers::pi / p.tau;

    PeriodicModel<Dim> m;
    m.tau = p.tau;
    m.dim = d;
    m.noise_covariance = p.q_scale * M::Identity(d, d);
    m.drift = [=](double t, const S& x) {
        return S(-p.a * x + S::Constant(d, p.c + p.A * std::sin(w * t) + p.B * std::cos(w * t)));
    };
    if (p.s_lin == 0.0) {
        const M g = p.s * M::Identity(d, d);
        m.diffusion = [g](double, const S&) { return g; };
    } else {
        m.diffusion = [=](double, const S& x) { return M(p.s * M::Identity(d, d) + p.s_lin * M(x.asDiagonal())); };
    }
    m.additive_noise = p.s_lin == 0.0;
    m.small_jump = [k = p.F_scale](double, const S&, const S& u) { return S(k * u); };
    if (p.G_kind == "identity") {
        m.large_jump = [k = p.G_scale](double, const S&, const S& u) { return S(k * u); };
    } else {
        m.large_jump = [k = p.G_scale, w](double t, const S&, const S& u) { return S(k * std::cos(w * t) * u); };
    }
    m.nu = parse_jump_measure<Dim>(p.atoms, p.components, d);
    m.hash = model_hash(p);
    return m;
}

/// Calls fn(std::integral_constant<int, D>) for the runtime dimension 1..3.
template <class Fn>
decltype(auto) dispatch_dim(int dim, Fn&& fn) {
    switch (dim) {
        case 1: return fn(std::integral_constant<int, 1>{});
        case 2: return fn(std::integral_constant<int, 2>{});
        case 3: return fn(std::integral_constant<int, 3>{});
        default: throw DimError("dimension must be 1, 2 or 3");
    }
}

}  // namespace levy_periodic
