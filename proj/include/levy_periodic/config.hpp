// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "levy_periodic/errors.hpp"
#include "levy_periodic/models.hpp"

namespace levy_periodic {

/// Everything a pipeline run depends on. Defaults match the shipped
/// reference configurations.
struct ExperimentConfig {
    ModelParams model;

    // [run]
    std::uint64_t seed = 20240611;
    double dt_max = 0.01;
    std::string observable = "identity";
    std::string out = "out";
    std::size_t n_paths = 2000;
    int burn_in = 20;
    int n_periods = 5;
    int phases = 16;
    double ks_alpha = 0.01;
    std::vector<double> x1{-2.0};
    std::vector<double> x2{2.0};
    double contraction_horizon = 3.0;
    std::size_t contraction_paths = 4000;
    int contraction_points = 16;
    double r2_min = 0.95;
    double hyp_box = 3.0;
    int hyp_points = 21;
    int hyp_time_points = 16;
    std::size_t moment_paths = 1000;
    double eta0 = 6.0;
    std::size_t center_paths = 2000;
    int center_periods = 200;

    // [slln]
    double slln_epsilon = 0.1;
    double slln_horizon = 1e4;
    std::size_t slln_paths = 200;
    int checkpoints_per_decade = 10;
    double threshold_factor = 0.05;
    double reference_time = 100.0;
    std::size_t slln_decomp_paths = 50;
    int slln_decomp_periods = 64;

    // [clt]
    double clt_t_end = 200.0;
    std::size_t replicas = 2000;
    std::size_t n_xi = 2000;
    double T_cut = 8.0;
    std::size_t inner_n = 4;
    std::size_t batch_paths = 200;
    int batch_periods = 100;
    int batches_per_path = 10;
    int batch_burn_in = 10;
    double clt_epsilon = 0.5;
    std::vector<int> m1_N{16, 64, 256};
    std::vector<int> m2_K{4, 16, 64};
    int m3_block = 16;
    std::vector<int> m3_l{2, 4, 8, 16};
    std::size_t clt_decomp_paths = 100;
    double qq_tol = 0.05;
    double m1_factor = 0.05;

    /// Largest skeleton index any M1-M3 statistic needs.
    int clt_N_max() const {
        int n = m3_block * *std::max_element(m3_l.begin(), m3_l.end());
        n = std::max(n, *std::max_element(m1_N.begin(), m1_N.end()));
        n = std::max(n, *std::max_element(m2_K.begin(), m2_K.end()));
        return n;
    }

    bool operator==(const ExperimentConfig&) const = default;
};

inline const std::vector<std::string>& observable_names() {
    static const std::vector<std::string> names{"identity", "sum", "tanh", "clip"};
    return names;
}

namespace detail {

enum class FieldType { real, integer, count, seed, text, real_list, int_list };

struct Field {
    std::string section;
    std::string key;
    FieldType type;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;  // throws std::invalid_argument
    std::function<std::string(const ExperimentConfig&)> check;       // empty string when valid
};

inline double to_real(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("expected a finite real");
    return v;
}

inline long long to_integer(const std::string& s) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("expected an integer");
    return v;
}

inline std::uint64_t to_unsigned(const std::string& s) {
    if (s.empty() || s[0] == '-' || s[0] == '+') throw std::invalid_argument("expected a non-negative integer");
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("expected a non-negative integer");
    return v;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_floating_point_v<T>) {
            out += format_double(v[i]);
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

inline std::vector<double> to_real_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split(s, ',')) out.push_back(to_real(item));
    return out;
}

inline std::vector<int> to_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& item : split(s, ',')) out.push_back(static_cast<int>(to_integer(item)));
    return out;
}

#define LP_REAL(sec, name, member, cond, msg)                                                         \
    Field {                                                                                           \
        sec, name, FieldType::real, [](const ExperimentConfig& c) { return format_double(c.member); }, \
            [](ExperimentConfig& c, const std::string& v) { c.member = to_real(v); },                \
            [](const ExperimentConfig& c) { [[maybe_unused]] const auto x = c.member; return (cond) ? std::string() : std::string(msg); } \
    }
#define LP_INT(sec, name, member, cond, msg)                                                             \
    Field {                                                                                              \
        sec, name, FieldType::integer, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
            [](ExperimentConfig& c, const std::string& v) { c.member = static_cast<int>(to_integer(v)); }, \
            [](const ExperimentConfig& c) { [[maybe_unused]] const auto x = c.member; return (cond) ? std::string() : std::string(msg); } \
    }
#define LP_COUNT(sec, name, member, cond, msg)                                                         \
    Field {                                                                                            \
        sec, name, FieldType::count, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
            [](ExperimentConfig& c, const std::string& v) { c.member = static_cast<std::size_t>(to_unsigned(v)); }, \
            [](const ExperimentConfig& c) { [[maybe_unused]] const auto x = c.member; return (cond) ? std::string() : std::string(msg); } \
    }

inline const std::vector<Field>& schema() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        // [model]
        f.push_back(Field{"model", "name", FieldType::text, [](const ExperimentConfig& c) { return c.model.name; },
                          [](ExperimentConfig& c, const std::string& v) { c.model.name = v; },
                          [](const ExperimentConfig& c) {
                              const auto& n = model_names();
                              return std::find(n.begin(), n.end(), c.model.name) != n.end()
                                         ? std::string()
                                         : std::string("unknown model (expected ou_brownian, ou_jumps or affine)");
                          }});
        f.push_back(LP_INT("model", "dim", model.dim, x >= 1 && x <= 3, "must be 1, 2 or 3"));
        f.push_back(LP_REAL("model", "tau", model.tau, x > 0.0, "must be positive"));
        f.push_back(LP_REAL("model", "a", model.a, true, ""));
        f.push_back(LP_REAL("model", "A", model.A, true, ""));
        f.push_back(LP_REAL("model", "B", model.B, true, ""));
        f.push_back(LP_REAL("model", "c", model.c, true, ""));
        // [noise]
        f.push_back(LP_REAL("noise", "s", model.s, true, ""));
        f.push_back(LP_REAL("noise", "s_lin", model.s_lin, true, ""));
        f.push_back(LP_REAL("noise", "q_scale", model.q_scale, x >= 0.0, "must be non-negative"));
        f.push_back(LP_REAL("noise", "F_scale", model.F_scale, true, ""));
        f.push_back(LP_REAL("noise", "G_scale", model.G_scale, true, ""));
        f.push_back(Field{"noise", "G_kind", FieldType::text, [](const ExperimentConfig& c) { return c.model.G_kind; },
                          [](ExperimentConfig& c, const std::string& v) { c.model.G_kind = v; },
                          [](const ExperimentConfig& c) {
                              return c.model.G_kind == "identity" || c.model.G_kind == "cos_modulated"
                                         ? std::string()
                                         : std::string("must be identity or cos_modulated");
                          }});
        f.push_back(Field{"noise", "atoms", FieldType::text, [](const ExperimentConfig& c) { return c.model.atoms; },
                          [](ExperimentConfig& c, const std::string& v) { c.model.atoms = v; },
                          [](const ExperimentConfig&) { return std::string(); }});
        f.push_back(Field{"noise", "components", FieldType::text,
                          [](const ExperimentConfig& c) { return c.model.components; },
                          [](ExperimentConfig& c, const std::string& v) { c.model.components = v; },
                          [](const ExperimentConfig&) { return std::string(); }});
        // [run]
        f.push_back(Field{"run", "seed", FieldType::seed, [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                          [](ExperimentConfig& c, const std::string& v) { c.seed = to_unsigned(v); },
                          [](const ExperimentConfig&) { return std::string(); }});
        f.push_back(LP_REAL("run", "dt_max", dt_max, x > 0.0, "must be positive"));
        f.push_back(Field{"run", "observable", FieldType::text, [](const ExperimentConfig& c) { return c.observable; },
                          [](ExperimentConfig& c, const std::string& v) { c.observable = v; },
                          [](const ExperimentConfig& c) {
                              const auto& n = observable_names();
                              return std::find(n.begin(), n.end(), c.observable) != n.end()
                                         ? std::string()
                                         : std::string("unknown observable (expected identity, sum, tanh or clip)");
                          }});
        f.push_back(Field{"run", "out", FieldType::text, [](const ExperimentConfig& c) { return c.out; },
                          [](ExperimentConfig& c, const std::string& v) { c.out = v; },
                          [](const ExperimentConfig& c) { return c.out.empty() ? std::string("must not be empty") : std::string(); }});
        f.push_back(LP_COUNT("run", "n_paths", n_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_INT("run", "burn_in", burn_in, x >= 0, "must be non-negative"));
        f.push_back(LP_INT("run", "n_periods", n_periods, x >= 1, "must be >= 1"));
        f.push_back(LP_INT("run", "phases", phases, x >= 1, "must be >= 1"));
        f.push_back(LP_REAL("run", "ks_alpha", ks_alpha, x > 0.0 && x < 1.0, "must lie in (0, 1)"));
        f.push_back(Field{"run", "x1", FieldType::real_list, [](const ExperimentConfig& c) { return join(c.x1); },
                          [](ExperimentConfig& c, const std::string& v) { c.x1 = to_real_list(v); },
                          [](const ExperimentConfig& c) {
                              return static_cast<int>(c.x1.size()) == c.model.dim ? std::string()
                                                                                  : std::string("needs dim entries");
                          }});
        f.push_back(Field{"run", "x2", FieldType::real_list, [](const ExperimentConfig& c) { return join(c.x2); },
                          [](ExperimentConfig& c, const std::string& v) { c.x2 = to_real_list(v); },
                          [](const ExperimentConfig& c) {
                              return static_cast<int>(c.x2.size()) == c.model.dim ? std::string()
                                                                                  : std::string("needs dim entries");
                          }});
        f.push_back(LP_REAL("run", "contraction_horizon", contraction_horizon, x > 0.0, "must be positive"));
        f.push_back(LP_COUNT("run", "contraction_paths", contraction_paths, x >= 4, "must be >= 4"));
        f.push_back(LP_INT("run", "contraction_points", contraction_points, x >= 3, "must be >= 3"));
        f.push_back(LP_REAL("run", "r2_min", r2_min, x >= 0.0 && x <= 1.0, "must lie in [0, 1]"));
        f.push_back(LP_REAL("run", "hyp_box", hyp_box, x > 0.0, "must be positive"));
        f.push_back(LP_INT("run", "hyp_points", hyp_points, x >= 2, "must be >= 2"));
        f.push_back(LP_INT("run", "hyp_time_points", hyp_time_points, x >= 1, "must be >= 1"));
        f.push_back(LP_COUNT("run", "moment_paths", moment_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_REAL("run", "eta0", eta0, x > 4.0 && x < 8.0, "must lie in (4, 8)"));
        f.push_back(LP_COUNT("run", "center_paths", center_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_INT("run", "center_periods", center_periods, x >= 1, "must be >= 1"));
        // [slln]
        f.push_back(LP_REAL("slln", "epsilon", slln_epsilon, x > 0.0, "must be positive"));
        f.push_back(LP_REAL("slln", "horizon", slln_horizon, x > 1.0, "must exceed 1"));
        f.push_back(LP_COUNT("slln", "paths", slln_paths, x >= 10, "must be >= 10"));
        f.push_back(LP_INT("slln", "checkpoints_per_decade", checkpoints_per_decade, x >= 1, "must be >= 1"));
        f.push_back(LP_REAL("slln", "threshold_factor", threshold_factor, x > 0.0, "must be positive"));
        f.push_back(LP_REAL("slln", "reference_time", reference_time, x > 0.0, "must be positive"));
        f.push_back(LP_COUNT("slln", "decomp_paths", slln_decomp_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_INT("slln", "decomp_periods", slln_decomp_periods, x >= 4, "must be >= 4"));
        // [clt]
        f.push_back(LP_REAL("clt", "t_end", clt_t_end, x > 0.0, "must be positive"));
        f.push_back(LP_COUNT("clt", "replicas", replicas, x >= 500, "must be >= 500"));
        f.push_back(LP_COUNT("clt", "n_xi", n_xi, x >= 2, "must be >= 2"));
        f.push_back(LP_REAL("clt", "T_cut", T_cut, x > 0.0, "must be positive"));
        f.push_back(LP_COUNT("clt", "inner_n", inner_n, x >= 1, "must be >= 1"));
        f.push_back(LP_COUNT("clt", "batch_paths", batch_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_INT("clt", "batch_periods", batch_periods, x >= 1, "must be >= 1"));
        f.push_back(LP_INT("clt", "batches_per_path", batches_per_path, x >= 1, "must be >= 1"));
        f.push_back(LP_INT("clt", "batch_burn_in", batch_burn_in, x >= 0, "must be non-negative"));
        f.push_back(LP_REAL("clt", "epsilon", clt_epsilon, x > 0.0, "must be positive"));
        f.push_back(Field{"clt", "m1_N", FieldType::int_list, [](const ExperimentConfig& c) { return join(c.m1_N); },
                          [](ExperimentConfig& c, const std::string& v) { c.m1_N = to_int_list(v); },
                          [](const ExperimentConfig& c) {
                              return !c.m1_N.empty() && std::all_of(c.m1_N.begin(), c.m1_N.end(), [](int v) { return v >= 1; })
                                         ? std::string()
                                         : std::string("needs positive entries");
                          }});
        f.push_back(Field{"clt", "m2_K", FieldType::int_list, [](const ExperimentConfig& c) { return join(c.m2_K); },
                          [](ExperimentConfig& c, const std::string& v) { c.m2_K = to_int_list(v); },
                          [](const ExperimentConfig& c) {
                              return !c.m2_K.empty() && std::all_of(c.m2_K.begin(), c.m2_K.end(), [](int v) { return v >= 1; })
                                         ? std::string()
                                         : std::string("needs positive entries");
                          }});
        f.push_back(LP_INT("clt", "m3_block", m3_block, x >= 1, "must be >= 1"));
        f.push_back(Field{"clt", "m3_l", FieldType::int_list, [](const ExperimentConfig& c) { return join(c.m3_l); },
                          [](ExperimentConfig& c, const std::string& v) { c.m3_l = to_int_list(v); },
                          [](const ExperimentConfig& c) {
                              return !c.m3_l.empty() && std::all_of(c.m3_l.begin(), c.m3_l.end(), [](int v) { return v >= 1; })
                                         ? std::string()
                                         : std::string("needs positive entries");
                          }});
        f.push_back(LP_COUNT("clt", "decomp_paths", clt_decomp_paths, x >= 2, "must be >= 2"));
        f.push_back(LP_REAL("clt", "qq_tol", qq_tol, x > 0.0, "must be positive"));
        f.push_back(LP_REAL("clt", "m1_factor", m1_factor, x > 0.0, "must be positive"));
        return f;
    }();
    return fields;
}

#undef LP_REAL
#undef LP_INT
#undef LP_COUNT

inline const char* type_name(FieldType t) {
    switch (t) {
        case FieldType::real: return "a real number";
        case FieldType::integer: return "an integer";
        case FieldType::count: return "a non-negative integer";
        case FieldType::seed: return "a 64-bit unsigned integer";
        case FieldType::text: return "text";
        case FieldType::real_list: return "a comma-separated list of reals";
        case FieldType::int_list: return "a comma-separated list of integers";
    }
    return "a value";
}

}  // namespace detail

/// Parses the INI-style format: `[section]` headers, `key = value` lines,
/// `#` comments. `model.name` is applied first so that the named preset
/// provides the model defaults; every other key overrides them. Throws
/// ConfigError listing every problem with its line number.
inline ExperimentConfig parse_config(const std::string& text) {
    struct Entry {
        int line;
        std::string section, key, value;
    };
    std::vector<Entry> entries;
    std::vector<ConfigIssue> issues;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                issues.push_back({line_no, "", "malformed section header"});
                continue;
            }
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (section != "model" && section != "noise" && section != "run" && section != "slln" && section != "clt")
                issues.push_back({line_no, section, "unknown section"});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            issues.push_back({line_no, "", "expected key = value"});
            continue;
        }
        Entry e{line_no, section, detail::trim(std::string_view(line).substr(0, eq)),
                detail::trim(std::string_view(line).substr(eq + 1))};
        if (section.empty()) {
            issues.push_back({line_no, e.key, "key outside of a section"});
            continue;
        }
        const std::string full = section + "." + e.key;
        if (seen.count(full)) {
            issues.push_back({line_no, full, "duplicate key (first set on line " + std::to_string(seen[full]) + ")"});
            continue;
        }
        seen[full] = line_no;
        entries.push_back(std::move(e));
    }

    ExperimentConfig cfg;
    for (const auto& e : entries) {
        if (e.section == "model" && e.key == "name") {
            try {
                cfg.model = model_preset(e.value);
            } catch (const Error&) {
                issues.push_back({e.line, "model.name", "unknown model '" + e.value + "'"});
            }
        }
    }
    const auto& fields = detail::schema();
    for (const auto& e : entries) {
        if (e.section == "model" && e.key == "name") continue;
        const auto it = std::find_if(fields.begin(), fields.end(),
                                     [&](const detail::Field& f) { return f.section == e.section && f.key == e.key; });
        if (it == fields.end()) {
            issues.push_back({e.line, e.section + "." + e.key, "unknown key"});
            continue;
        }
        try {
            it->set(cfg, e.value);
        } catch (const std::exception&) {
            issues.push_back({e.line, e.section + "." + e.key, std::string("expected ") + detail::type_name(it->type)});
        }
    }
    // Constraint checks, attributed to the line that set the key (0 = default).
    for (const auto& f : fields) {
        const std::string msg = f.check(cfg);
        if (msg.empty()) continue;
        const std::string full = f.section + "." + f.key;
        issues.push_back({seen.count(full) ? seen[full] : 0, full, msg});
    }
    if (issues.empty()) {
        try {
            dispatch_dim(cfg.model.dim, [&](auto d) {
                (void)make_model<decltype(d)::value>(cfg.model);
                return 0;
            });
        } catch (const Error& e) {
            const int line = seen.count("noise.atoms") ? seen["noise.atoms"] : 0;
            issues.push_back({line, "model", e.what()});
        }
    }
    if (!issues.empty()) {
        std::stable_sort(issues.begin(), issues.end(),
                         [](const ConfigIssue& a, const ConfigIssue& b) { return a.line < b.line; });
        throw ConfigError(std::move(issues));
    }
    return cfg;
}

/// Canonical text form: every key in schema order, reals in %.17g.
/// parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string section;
    os << "[model]\nname = " << cfg.model.name << "\n";
    section = "model";
    for (const auto& f : detail::schema()) {
        if (f.section == "model" && f.key == "name") continue;
        if (f.section != section) {
            section = f.section;
            os << "\n[" << section << "]\n";
        }
        os << f.key << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({{0, "", "cannot open config file '" + path + "'"}});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace levy_periodic
