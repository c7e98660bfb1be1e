// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "levy_periodic/config.hpp"
#include "levy_periodic/ergodic_stats.hpp"
#include "levy_periodic/measure_tools.hpp"
#include "levy_periodic/models.hpp"
#include "levy_periodic/sde_engine.hpp"

namespace levy_periodic::pipeline {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"simulate", "hypotheses", "periodic-measure", "contraction",
                                                "slln",     "clt",        "full"};
    return names;
}

enum ExitCode : int { kOk = 0, kThresholdFailed = 1, kUsage = 2, kStageError = 3 };

/// Stage identifiers used to derive per-stage seeds from the master seed.
enum class Stage : std::uint64_t {
    simulate = 1,
    hypotheses = 2,
    periodic_measure = 3,
    contraction = 4,
    slln = 5,
    clt = 6,
    center = 7,
};

inline std::uint64_t stage_seed(std::uint64_t master, Stage s) {
    return derive_seed(master, StreamKey::stage, static_cast<std::uint64_t>(s));
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-256 computation failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return os.str();
}

struct StageRecord {
    std::string name;
    std::string status = "ok";  // ok | threshold_failed | error
    std::string message;
    json thresholds = json::object();
};

struct RunOptions {
    std::filesystem::path out_dir;
    unsigned threads = 0;
};

/// Log-spaced checkpoints 10^(k / per_decade) in [1, horizon], plus horizon.
inline std::vector<double> log_checkpoints(double horizon, int per_decade) {
    std::vector<double> out;
    const int kmax = static_cast<int>(std::floor(std::log10(horizon) * per_decade + 1e-9));
    for (int k = 0; k <= kmax; ++k) {
        const double v = std::pow(10.0, static_cast<double>(k) / per_decade);
        const double rounded = std::round(v * 1e6) / 1e6;
        if (out.empty() || rounded > out.back()) out.push_back(rounded);
    }
    if (out.back() < horizon) out.push_back(horizon);
    return out;
}

namespace detail {

template <class Derived>
std::vector<double> to_std(const Eigen::MatrixBase<Derived>& x) {
    const Eigen::VectorXd v = x;
    return std::vector<double>(v.data(), v.data() + v.size());
}

template <int Dim>
Vec<Dim> from_std(const std::vector<double>& v) {
    Vec<Dim> x(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x[static_cast<int>(i)] = v[i];
    return x;
}

inline json test_json(const stats::TestResult& t) { return {{"statistic", t.statistic}, {"p_value", t.p_value}}; }

inline json curve_json(const ConditionCurve& c) {
    return {{"name", c.name},       {"index", c.index},       {"value", c.value},
            {"standard_error", c.standard_error}, {"decreasing", c.decreasing},
            {"final_value", c.final_value},       {"final_ci95", c.final_ci}};
}

}  // namespace detail

/// Runs one subcommand for a fixed dimension. Outputs go to opt.out_dir.
template <int Dim>
class Runner {
public:
    Runner(const ExperimentConfig& cfg, RunOptions opt)
        : cfg_(cfg), opt_(std::move(opt)), model_(make_model<Dim>(cfg.model)) {}

    /// Returns the stage records; files written are collected in files().
    std::vector<StageRecord> run(const std::string& sub) {
        std::vector<std::pair<std::string, std::function<void(StageRecord&)>>> plan;
        auto add = [&](const char* name, void (Runner::*fn)(StageRecord&)) {
            plan.emplace_back(name, [this, fn](StageRecord& r) { (this->*fn)(r); });
        };
        if (sub == "simulate" || sub == "full") add("simulate", &Runner::simulate);
        if (sub == "hypotheses" || sub == "full") add("hypotheses", &Runner::hypotheses);
        if (sub == "periodic-measure" || sub == "full") add("periodic-measure", &Runner::periodic_measure);
        if (sub == "contraction" || sub == "full") add("contraction", &Runner::contraction);
        if (sub == "slln" || sub == "full") add("slln", &Runner::slln);
        if (sub == "clt" || sub == "full") add("clt", &Runner::clt);
        if (plan.empty()) throw ParameterError("unknown subcommand '" + sub + "'");

        std::vector<StageRecord> records;
        for (auto& [name, fn] : plan) {
            StageRecord rec;
            rec.name = name;
            try {
                fn(rec);
                for (const auto& v : rec.thresholds)
                    if (v.is_boolean() && !v.template get<bool>()) rec.status = "threshold_failed";
            } catch (const std::exception& e) {
                rec.status = "error";
                rec.message = e.what();
                records.push_back(std::move(rec));
                break;
            }
            records.push_back(std::move(rec));
        }
        return records;
    }

    const std::vector<std::string>& files() const { return files_; }

private:
    using V = Vec<Dim>;

    // --- shared intermediate results, computed once per run ---

    const PeriodicMeasureEstimate& periodic() {
        if (!pm_) {
            pm_ = estimate_periodic_measure(model_, InitialLaw<Dim>(V::Zero(model_.dim)), cfg_.phases, cfg_.burn_in,
                                            cfg_.n_periods, cfg_.n_paths, cfg_.dt_max,
                                            stage_seed(cfg_.seed, Stage::periodic_measure), opt_.threads);
            mu_star_ = invariant_measure_mu_star(*pm_);
        }
        return *pm_;
    }

    const EmpiricalMeasure& mu_star() {
        periodic();
        return *mu_star_;
    }

    const ContractionFit& fit() {
        if (!fit_) {
            fit_ = contraction_estimate(model_, detail::from_std<Dim>(cfg_.x1), detail::from_std<Dim>(cfg_.x2),
                                        cfg_.contraction_horizon, cfg_.contraction_paths, cfg_.contraction_points,
                                        cfg_.dt_max, stage_seed(cfg_.seed, Stage::contraction), opt_.threads);
        }
        return *fit_;
    }

    const Observable<Dim>& observable() {
        if (!obs_) {
            std::function<double(const V&)> phi;
            if (cfg_.observable == "identity") {
                phi = [](const V& x) { return x[0]; };
            } else if (cfg_.observable == "sum") {
                phi = [](const V& x) { return x.sum(); };
            } else if (cfg_.observable == "tanh") {
                phi = [](const V& x) { return std::tanh(x[0]); };
            } else {
                phi = [](const V& x) { return std::clamp(x[0], -1.0, 1.0); };
            }
            const int per_axis = Dim == 1 ? 601 : (Dim == 2 ? 61 : 21);
            const double norm = estimate_bl_gamma_norm<Dim>(phi, V::Constant(model_.dim, -3.0),
                                                            V::Constant(model_.dim, 3.0), per_axis);
            const double gamma = std::clamp(fit().fitted_gamma, 1e-6, 1.0);
            const auto raw = make_observable<Dim>(phi, norm, gamma);
            center_ = estimate_center(model_, InitialLaw<Dim>(V::Zero(model_.dim)), raw, std::max(cfg_.burn_in, 1),
                                      cfg_.center_periods, cfg_.center_paths, cfg_.dt_max,
                                      stage_seed(cfg_.seed, Stage::center), opt_.threads);
            obs_ = center_observable(raw, center_);
        }
        return *obs_;
    }

    // --- output helpers ---

    void write_file(const std::string& name, const std::string& content) {
        std::filesystem::create_directories(opt_.out_dir);
        std::ofstream out(opt_.out_dir / name, std::ios::binary);
        if (!out) throw Error("cannot write " + (opt_.out_dir / name).string());
        out << content;
        files_.push_back(name);
    }

    void write_json(const std::string& name, const json& j) { write_file(name, j.dump(2) + "\n"); }

    // --- stages ---

    void simulate(StageRecord& rec) {
        EnsembleOptions eo;
        eo.threads = opt_.threads;
        const double horizon = (cfg_.burn_in + cfg_.n_periods) * model_.tau;
        const auto ens = integrate_ensemble(model_, InitialLaw<Dim>(V::Zero(model_.dim)), horizon, cfg_.dt_max,
                                            cfg_.n_paths, stage_seed(cfg_.seed, Stage::simulate), eo);
        std::string csv = "path,t";
        for (int i = 0; i < model_.dim; ++i) csv += ",x" + std::to_string(i + 1);
        csv += "\n";
        std::size_t jumps = 0;
        for (std::size_t p = 0; p < ens.size(); ++p) {
            const auto& path = ens.paths[p];
            jumps += path.jumps.size();
            for (std::size_t k = 0; k < path.size(); ++k) {
                csv += std::to_string(p) + "," + format_double(path.grid[k]);
                for (int i = 0; i < model_.dim; ++i) csv += "," + format_double(path.states[k][i]);
                csv += "\n";
            }
        }
        write_file("ensemble.csv", csv);
        rec.message = std::to_string(ens.size()) + " paths, " + std::to_string(jumps) + " jumps";
    }

    void hypotheses(StageRecord& rec) {
        HypothesisDomain<Dim> dom{V::Constant(model_.dim, -cfg_.hyp_box), V::Constant(model_.dim, cfg_.hyp_box),
                                  cfg_.hyp_points, cfg_.hyp_time_points};
        const auto hyp = check_hypotheses(model_, dom);
        EnsembleOptions eo;
        eo.record = Record::full;
        eo.threads = opt_.threads;
        const auto ens = integrate_ensemble(model_, InitialLaw<Dim>(detail::from_std<Dim>(cfg_.x1)), model_.tau,
                                            cfg_.dt_max, cfg_.moment_paths, stage_seed(cfg_.seed, Stage::hypotheses), eo);
        json bounds = json::array();
        bool all_hold = true;
        for (double p : {2.0, 3.0, 4.0}) {
            const auto mb = moment_bound_check(ens, p, hyp, cfg_.eta0, p == 2.0 ? std::vector<double>{0.5, 1.0, cfg_.eta0}
                                                                                : std::vector<double>{});
            if (p == 2.0) all_hold = mb.holds;
            json curves = json::array();
            for (const auto& c : mb.exp_moments)
                curves.push_back({{"eta", c.eta}, {"empirical", c.empirical}, {"lemma_shape", c.lemma_shape},
                                  {"fitted_prefactor", c.fitted_prefactor}, {"finite", c.finite}});
            bounds.push_back({{"p", p},
                              {"a", mb.a},
                              {"xi_moment", mb.xi_moment},
                              {"s", mb.s},
                              {"empirical_sup_moment", mb.empirical_sup_moment},
                              {"standard_error", mb.standard_error},
                              {"bound", mb.theorem5_bound},
                              {"min_margin", mb.min_margin},
                              {"holds", mb.holds},
                              {"exp_moments", curves}});
        }
        json sens = json::array();
        for (const auto& w : hyp.sensitivity)
            sens.push_back({{"p", w.p}, {"M", w.M}, {"lambda_lo", w.lo}, {"lambda_hi", w.hi}, {"admissible", w.admissible}});
        json j = {{"scope", hyp.scope},
                  {"M_hat", hyp.M_hat},
                  {"p_list", hyp.p_list},
                  {"M_by_p", hyp.M_by_p},
                  {"L_hat", hyp.L_hat},
                  {"lambda_hat", hyp.lambda_hat},
                  {"lambda_window", {hyp.lambda_lo, hyp.lambda_hi}},
                  {"lambda_used", hyp.lambda_used},
                  {"alpha", hyp.alpha},
                  {"alpha_in_range", hyp.alpha_in_range},
                  {"e_mass", hyp.e_mass},
                  {"e_note", hyp.e_note},
                  {"theorem5_a", hyp.theorem5_a},
                  {"feasible", hyp.feasible},
                  {"periodic", hyp.periodic},
                  {"h3_max_violation", hyp.h3_max_violation},
                  {"h3_worst_point", hyp.h3_worst_point},
                  {"h9_worst_value", hyp.h9_worst_value},
                  {"h9_worst_point", hyp.h9_worst_point},
                  {"sensitivity", sens},
                  {"moment_bounds", bounds}};
        write_json("hypotheses.json", j);
        rec.thresholds["moment_bound_p2_holds"] = all_hold;
        rec.thresholds["periodic_coefficients"] = hyp.periodic;
        rec.message = hyp.feasible ? "lambda window feasible" : "lambda window not feasible on the sampled domain";
    }

    void periodic_measure(StageRecord& rec) {
        const auto& pm = periodic();
        std::string csv = "phase";
        for (int i = 0; i < model_.dim; ++i) csv += ",x" + std::to_string(i + 1);
        csv += ",weight\n";
        for (std::size_t j = 0; j < pm.measures.size(); ++j) {
            const auto& m = pm.measures[j];
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                csv += format_double(pm.phase_grid[j]);
                for (int i = 0; i < model_.dim; ++i) csv += "," + format_double(m.point(k)[i]);
                csv += "," + format_double(m.weight(k)) + "\n";
            }
        }
        write_file("phase_measures.csv", csv);
        json means = json::array();
        for (const auto& m : pm.measures) means.push_back(detail::to_std(m.mean()));
        json j = {{"tau", pm.tau},
                  {"phase_grid", pm.phase_grid},
                  {"burn_in_periods", pm.burn_in_periods},
                  {"averaged_periods", pm.averaged_periods},
                  {"phase_means", means},
                  {"mu_star_mean", detail::to_std(mu_star().mean())},
                  {"consecutive_distances", pm.consecutive_distances},
                  {"cesaro_means", pm.cesaro_means},
                  {"post_burn_in_cesaro", pm.post_burn_in_cesaro},
                  {"noise_floor", pm.noise_floor},
                  {"periodicity_ks", detail::test_json(pm.periodicity_ks)}};
        write_json("periodic_measure.json", j);
        rec.thresholds["periodicity_ks_p_above_alpha"] = pm.periodicity_ks.p_value > cfg_.ks_alpha;
    }

    void contraction(StageRecord& rec) {
        const auto& f = fit();
        json used = json::array();
        for (bool u : f.used) used.push_back(u);
        json j = {{"times", f.times},
                  {"distances", f.distances},
                  {"noise_floor", f.noise_floor},
                  {"used", used},
                  {"initial_distance", f.initial_distance},
                  {"fitted_C", f.fitted_C},
                  {"contraction_C", f.contraction_C},
                  {"fitted_gamma", f.fitted_gamma},
                  {"gamma_ci95", {f.gamma_ci_lo, f.gamma_ci_hi}},
                  {"r_squared", f.r_squared},
                  {"n_paths", f.n_paths}};
        write_json("contraction.json", j);
        rec.thresholds["r_squared_above_min"] = f.r_squared >= cfg_.r2_min;
    }

    PiConfig pi_config() const {
        PiConfig pc;
        pc.T_cut = cfg_.T_cut;
        pc.inner_n = cfg_.inner_n;
        pc.dt_max = cfg_.dt_max;
        return pc;
    }

    void slln(StageRecord& rec) {
        const auto& obs = observable();
        const std::uint64_t seed = stage_seed(cfg_.seed, Stage::slln);
        const InitialLaw<Dim> xi{mu_star()};
        const auto curves = observable_integrals(model_, xi, obs, log_checkpoints(cfg_.slln_horizon, cfg_.checkpoints_per_decade),
                                                 cfg_.slln_paths, cfg_.dt_max, derive_seed(seed, 1), opt_.threads);
        const auto decs = decompose_ensemble(model_, xi, obs, cfg_.slln_decomp_paths, cfg_.slln_decomp_periods,
                                             cfg_.dt_max, pi_config(), fit(), derive_seed(seed, 2), opt_.threads);
        // sigma^2 from the decompositions' skeleton increments
        long double z2 = 0.0L;
        std::size_t nz = 0;
        for (const auto& d : decs)
            for (int N = 1; N <= d.N_max; ++N, ++nz) z2 += d.Z(N) * static_cast<long double>(d.Z(N));
        const double sigma_hat = std::sqrt(static_cast<double>(z2 / nz));
        const auto rep = slln_check(curves, decs, cfg_.slln_epsilon, sigma_hat, cfg_.threshold_factor, cfg_.reference_time);

        std::string csv = "t,median,p90\n";
        for (std::size_t j = 0; j < rep.times.size(); ++j)
            csv += format_double(rep.times[j]) + "," + format_double(rep.median[j]) + "," + format_double(rep.p90[j]) + "\n";
        write_file("slln_curves.csv", csv);
        std::string res = "N,residual_mean,residual_p90\n";
        for (std::size_t k = 0; k < rep.residual_N.size(); ++k)
            res += format_double(rep.residual_N[k]) + "," + format_double(rep.residual_mean[k]) + "," +
                   format_double(rep.residual_p90[k]) + "\n";
        write_file("slln_residual.csv", res);
        std::string sum = "N,ez2,partial_sum\n";
        for (std::size_t k = 0; k < rep.ez2.size(); ++k)
            sum += std::to_string(k + 1) + "," + format_double(rep.ez2[k]) + "," + format_double(rep.summability_partial[k]) + "\n";
        write_file("slln_summability.csv", sum);
        double split = 0.0;
        for (const auto& d : decs) split = std::max(split, split_error(d));
        json j = {{"epsilon", rep.epsilon},
                  {"observable", cfg_.observable},
                  {"center", obs.center},
                  {"center_se", center_.standard_error},
                  {"bl_norm", obs.bl_norm},
                  {"paths", curves.values.size()},
                  {"horizon", rep.times.back()},
                  {"reference_time", rep.reference_time},
                  {"p90_reference", rep.p90_reference},
                  {"p90_final", rep.p90.back()},
                  {"median_final", rep.median.back()},
                  {"sigma_hat", rep.sigma_hat},
                  {"threshold_factor", rep.threshold_factor},
                  {"threshold", rep.threshold},
                  {"decaying", rep.decaying},
                  {"below_threshold", rep.below_threshold},
                  {"summable", rep.summable},
                  {"max_split_error", split},
                  {"pi_tail_bound", decs.empty() ? 0.0 : decs.front().tail_bound}};
        write_json("slln.json", j);
        rec.thresholds["p90_decaying"] = rep.decaying;
        rec.thresholds["p90_below_threshold"] = rep.below_threshold;
    }

    void clt(StageRecord& rec) {
        const auto& obs = observable();
        const std::uint64_t seed = stage_seed(cfg_.seed, Stage::clt);
        const InitialLaw<Dim> xi{mu_star()};
        Sigma2Config sc;
        sc.n_xi = cfg_.n_xi;
        sc.pi = pi_config();
        sc.batch_paths = cfg_.batch_paths;
        sc.batch_periods = cfg_.batch_periods;
        sc.batches_per_path = cfg_.batches_per_path;
        sc.batch_burn_in = cfg_.batch_burn_in;
        sc.dt_max = cfg_.dt_max;
        const auto s2 = estimate_sigma2(model_, mu_star(), obs, sc, derive_seed(seed, 1), opt_.threads);
        const auto test = clt_check(model_, xi, obs, cfg_.clt_t_end, cfg_.replicas, s2.sigma2_mc, cfg_.dt_max,
                                    derive_seed(seed, 2), opt_.threads);
        const int n_max = cfg_.clt_N_max();
        const auto decs = decompose_ensemble(model_, xi, obs, cfg_.clt_decomp_paths, n_max, cfg_.dt_max, pi_config(),
                                             fit(), derive_seed(seed, 3), opt_.threads);
        const auto cond = verify_clt_conditions(decs, cfg_.m1_N, cfg_.m2_K, cfg_.m3_block, cfg_.m3_l, cfg_.clt_epsilon,
                                                s2.sigma2_mc);
        const auto skel = clt_skeleton_check(decs, n_max, s2.sigma2_mc);
        const auto acf = z_autocorrelation(decs, 4);
        const auto growth = moment_growth_check(decs, 1);

        std::string qq = "theoretical,sample\n";
        for (const auto& [t, s] : test.qq) qq += format_double(t) + "," + format_double(s) + "\n";
        write_file("clt_qq.csv", qq);
        std::string cc = "condition,index,value,standard_error\n";
        for (const auto* c : {&cond.m1, &cond.m2, &cond.m2_abs, &cond.m3})
            for (std::size_t k = 0; k < c->index.size(); ++k)
                cc += c->name + "," + format_double(c->index[k]) + "," + format_double(c->value[k]) + "," +
                      format_double(c->standard_error[k]) + "\n";
        write_file("clt_conditions.csv", cc);

        auto test_json = [](const CltTest& t) {
            return json{{"normalization", t.normalization},
                        {"replica_count", t.replica_count},
                        {"horizon", t.horizon},
                        {"target_variance", t.target_variance},
                        {"sample_mean", t.sample_mean},
                        {"sample_se", t.sample_se},
                        {"mean_within_3se", t.mean_within_3se},
                        {"ks", detail::test_json(t.ks)},
                        {"anderson_darling", detail::test_json(t.ad)},
                        {"qq_slope", t.qq_slope},
                        {"qq_intercept", t.qq_intercept},
                        {"degenerate", t.degenerate}};
        };
        json lags = json::array();
        for (const auto& l : acf)
            lags.push_back({{"lag", l.lag}, {"correlation", l.correlation}, {"standard_error", l.standard_error},
                            {"within_3se", l.within_3se}});
        json j = {{"observable", cfg_.observable},
                  {"center", obs.center},
                  {"center_se", center_.standard_error},
                  {"sigma2_mc", s2.sigma2_mc},
                  {"sigma2_mc_ci95", {s2.mc_ci_lo, s2.mc_ci_hi}},
                  {"sigma2_batch", s2.sigma2_batch},
                  {"sigma2_batch_ci95", {s2.batch_ci_lo, s2.batch_ci_hi}},
                  {"sigma2_agree", s2.agree},
                  {"ks_stat", test.ks.statistic},
                  {"ks_p", test.ks.p_value},
                  {"continuous", test_json(test)},
                  {"skeleton", test_json(skel)},
                  {"m1_curve", detail::curve_json(cond.m1)},
                  {"m2_curve", detail::curve_json(cond.m2)},
                  {"m2_abs_curve", detail::curve_json(cond.m2_abs)},
                  {"m3_curve", detail::curve_json(cond.m3)},
                  {"m3_block", cond.m3_block},
                  {"sup_ez2", cond.sup_ez2},
                  {"z_autocorrelation", lags},
                  {"moment_growth_p1", {{"exponent", growth.exponent}, {"bound", growth.exponent_bound},
                                        {"ok", growth.exponent_ok}, {"z_trend_free", growth.z_trend_free}}},
                  {"replica_count", test.replica_count},
                  {"pi_tail_bound", decs.empty() ? 0.0 : decs.front().tail_bound}};
        write_json("clt.json", j);
        rec.thresholds["ks_p_above_alpha"] = test.ks.p_value > cfg_.ks_alpha;
        rec.thresholds["qq_slope_within_tol"] = std::abs(test.qq_slope - 1.0) <= cfg_.qq_tol;
        rec.thresholds["sigma2_estimators_agree"] = s2.agree;
        rec.thresholds["m1_decreasing"] = cond.m1.decreasing;
        rec.thresholds["m1_final_below_factor_sigma2"] = cond.m1.final_value < cfg_.m1_factor * s2.sigma2_mc;
        rec.thresholds["m2_within_2ci"] = cond.m2_within_2ci;
    }

    const ExperimentConfig& cfg_;
    RunOptions opt_;
    PeriodicModel<Dim> model_;
    std::optional<PeriodicMeasureEstimate> pm_;
    std::optional<EmpiricalMeasure> mu_star_;
    CenterEstimate center_;
    std::optional<ContractionFit> fit_;
    std::optional<Observable<Dim>> obs_;
    std::vector<std::string> files_;
};

/// Runs a subcommand end to end: outputs, canonical config copy and
/// manifest.json listing every file with its SHA-256. Returns the exit code.
inline int run(const ExperimentConfig& cfg, const std::string& sub, const RunOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<StageRecord> records;
    std::vector<std::string> files;
    std::string fatal;
    try {
        dispatch_dim(cfg.model.dim, [&](auto d) {
            Runner<decltype(d)::value> runner(cfg, opt);
            records = runner.run(sub);
            files = runner.files();
            return 0;
        });
    } catch (const std::exception& e) {
        fatal = e.what();
    }

    std::filesystem::create_directories(opt.out_dir);
    const std::string canonical = serialize_config(cfg);
    {
        std::ofstream out(opt.out_dir / "config.ini", std::ios::binary);
        out << canonical;
    }
    files.insert(files.begin(), "config.ini");

    int code = kOk;
    json stages = json::array();
    for (const auto& r : records) {
        if (r.status == "error") code = kStageError;
        else if (r.status == "threshold_failed" && code == kOk) code = kThresholdFailed;
        stages.push_back({{"name", r.name}, {"status", r.status}, {"message", r.message}, {"thresholds", r.thresholds}});
    }
    if (!fatal.empty()) {
        code = kStageError;
        stages.push_back({{"name", sub}, {"status", "error"}, {"message", fatal}, {"thresholds", json::object()}});
    }

    json listed = json::array();
    for (const auto& f : files) {
        std::ifstream in(opt.out_dir / f, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        const std::string data = ss.str();
        listed.push_back({{"path", f}, {"sha256", sha256_hex(data)}, {"bytes", data.size()}});
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest = {{"tool", "levy-periodic"},
                     {"subcommand", sub},
                     {"config_hash", sha256_hex(canonical)},
                     {"model_hash", model_hash(cfg.model)},
                     {"seed", cfg.seed},
                     {"versions",
                      {{"levy_periodic", kVersion},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                     std::to_string(EIGEN_MINOR_VERSION)},
                       {"boost", BOOST_LIB_VERSION}}},
                     {"threads", opt.threads == 0 ? default_threads() : opt.threads},
                     {"wall_clock_seconds", wall},
                     {"stages", stages},
                     {"files", listed},
                     {"exit_code", code}};
    std::ofstream out(opt.out_dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    return code;
}

}  // namespace levy_periodic::pipeline
