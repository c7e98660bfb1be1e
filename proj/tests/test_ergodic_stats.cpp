// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "levy_periodic/ergodic_stats.hpp"
#include "levy_periodic/models.hpp"

using namespace levy_periodic;
using Catch::Approx;

namespace {

Observable<1> identity_obs(double center = 0.0) {
    auto obs = make_observable<1>([](const Vec<1>& x) { return x[0]; }, 0.93);
    obs.center = center;
    return obs;
}

ContractionFit unit_fit() {
    ContractionFit fit;
    fit.fitted_gamma = 1.0;
    fit.contraction_C = 1.0;
    return fit;
}

// Decompositions whose increments are iid N(0, s^2); Pi is zero.
std::vector<MartingaleDecomposition> synthetic(std::size_t paths, int n, double s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, s);
    std::vector<MartingaleDecomposition> out(paths);
    for (auto& d : out) {
        d.N_max = n;
        d.M_values.push_back(0.0);
        d.Z_values.push_back(0.0);
        for (int k = 1; k <= n; ++k) {
            d.Z_values.push_back(z(rng));
            d.M_values.push_back(d.M_values.back() + d.Z_values.back());
        }
    }
    return out;
}

}  // namespace

TEST_CASE("weighted norm of the identity has a closed form", "[observable]") {
    // sup |x| e^{-x^2} = (2e)^{-1/2}; the Lipschitz ratio peaks at 1/2 near the origin.
    const double norm = estimate_bl_gamma_norm<1>([](const Vec<1>& x) { return x[0]; }, Vec<1>(-3.0), Vec<1>(3.0), 601);
    CHECK(norm == Approx(1.0 / std::sqrt(2.0 * std::numbers::e) + 0.5).epsilon(1e-3));
    CHECK(estimate_bl_gamma_norm<1>([](const Vec<1>&) { return 0.0; }, Vec<1>(-1.0), Vec<1>(1.0), 11) == 0.0);
    CHECK_THROWS_AS(make_observable<1>([](const Vec<1>& x) { return x[0]; }, 1.0, 1.5), ParameterError);
}

TEST_CASE("centering subtracts the mean under mu*", "[observable]") {
    const auto mu = empirical_measure_1d({1.0, 2.0, 6.0});
    const auto obs = center_observable(identity_obs(), mu);
    CHECK(obs.center == Approx(3.0));
    CHECK(obs(Vec<1>(3.0)) == Approx(0.0));
    CHECK(obs.raw(Vec<1>(3.0)) == Approx(3.0));
}

TEST_CASE("running integrals use left limits at jumps", "[integral]") {
    auto m = zero_model<1>(1.0);
    m.large_jump = [](double, const Vec<1>&, const Vec<1>& u) { return u; };
    m.nu = parse_jump_measure<1>("2@1", "", 1);
    const auto path = integrate_path(m, Vec<1>(0.0), 4.0, 0.1, 21);
    const auto obs = identity_obs();
    const auto ri = running_integral(path, obs);
    // X is a step function: int_0^T X = sum over jumps of 2 (T - t_j).
    double exact = 0.0;
    for (const auto& j : path.jumps) exact += 2.0 * (4.0 - j.time);
    CHECK(ri.back() == Approx(exact).margin(1e-10));

    IntegralObserver<1, Observable<1>> io(obs, {1.0, 4.0}, 1e-9);
    GridOptions grid;
    grid.checkpoints = {1.0, 4.0};
    integrate(m, Vec<1>(0.0), 4.0, 0.1, 21, grid, io);
    REQUIRE(io.values().size() == 2);
    CHECK(io.total() == Approx(exact).margin(1e-10));
    CHECK(io.values().back() == Approx(exact).margin(1e-10));
}

TEST_CASE("corrector tail bound", "[corrector]") {
    auto fit = unit_fit();
    fit.contraction_C = 2.0;
    fit.fitted_gamma = 0.5;
    CHECK(pi_tail_bound(0.9, 1.0, 10.0, fit) == Approx(0.9 * 2.0 * std::exp(2.0) * 10.0 * std::exp(-1.0)));
    CHECK(pi_tail_bound(0.0, 1.0, 10.0, fit) == 0.0);
    fit.fitted_gamma = 0.0;
    CHECK_THROWS_AS(pi_tail_bound(0.9, 1.0, 10.0, fit), ParameterError);
}

TEST_CASE("martingale split is exact and increments look like Brownian increments", "[martingale]") {
    const auto model = make_model<1>(model_preset("ou_brownian"));
    PiConfig cfg;
    cfg.T_cut = 8.0;
    cfg.inner_n = 4;
    const auto decs = decompose_ensemble(model, InitialLaw<1>(Vec<1>(0.0)), identity_obs(), 200, 8, 0.01, cfg,
                                         unit_fit(), 31);
    std::vector<double> z2;
    for (const auto& d : decs) {
        CHECK(split_error(d) < 1e-10);
        CHECK(d.M_values.front() == 0.0);
        CHECK(d.Pi_values.size() == 9);
        for (int N = 1; N <= 8; ++N) z2.push_back(d.Z(N) * d.Z(N));
    }
    // sigma^2 = s^2 / a^2 = 1 per period for the forced OU.
    CHECK(stats::mean_estimate(z2).mean == Approx(1.0).epsilon(0.12));
    CHECK(martingale_mean_check(decs, 8).within_3se);
    for (const auto& lc : z_autocorrelation(decs, 3)) CHECK(std::abs(lc.correlation) < 4.0 * lc.standard_error);
}

TEST_CASE("corrector sequence of the forced OU has Lipschitz constant 1 / (1 - e^{-1})", "[corrector]") {
    const auto model = make_model<1>(model_preset("ou_brownian"));
    const auto res = corrector_sequence<1>(model, identity_obs(), {Vec<1>(-1.0), Vec<1>(1.0)}, 12, 8, 0.01, 4);
    REQUIRE(res.a_n.size() == 2);
    // Euler contraction per period is (1 - 0.01)^100.
    const double q = std::pow(0.99, 100);
    CHECK(res.lipschitz_estimate == Approx((1.0 - std::pow(q, 13)) / (1.0 - q)).epsilon(1e-9));
    CHECK(res.gap_n == std::vector<int>{1, 2, 4});
    CHECK(res.cauchy_gaps[0].back() < res.cauchy_gaps[0].front());
}

TEST_CASE("normality report against a known normal sample", "[clt]") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> xs(3000);
    for (auto& x : xs) x = n(rng);
    const auto rep = normality_report(xs, 4.0, "continuous", 1.0);
    CHECK(rep.ks.p_value > 0.01);
    CHECK(rep.ad.p_value > 0.01);
    CHECK(rep.qq_slope == Approx(1.0).margin(0.05));
    CHECK(rep.mean_within_3se);
    CHECK(rep.qq.size() == 3000);

    const auto wrong = normality_report(xs, 1.0, "continuous", 1.0);
    CHECK(wrong.ks.p_value < 1e-6);
    CHECK(wrong.qq_slope == Approx(2.0).margin(0.1));

    const auto deg = normality_report(std::vector<double>(10, 0.0), 0.0, "continuous", 1.0);
    CHECK(deg.degenerate);
    CHECK_THROWS_AS(normality_report({1.0, 2.0}, 0.0, "continuous", 1.0), VarianceError);
    CHECK_THROWS_AS(normality_report({1.0, 2.0}, -1.0, "continuous", 1.0), VarianceError);
}

TEST_CASE("CLT check needs enough replicas", "[clt]") {
    const auto model = make_model<1>(model_preset("ou_brownian"));
    CHECK_THROWS_AS(clt_check(model, InitialLaw<1>(Vec<1>(0.0)), identity_obs(), 10.0, 100, 1.0, 0.01, 1),
                    ParameterError);
}

TEST_CASE("Lindeberg statistics on a hand-sized example", "[clt]") {
    MartingaleDecomposition d;
    d.N_max = 4;
    d.Z_values = {0.0, 3.0, -0.5, 0.2, -2.0};
    d.M_values = {0.0, 3.0, 2.5, 2.7, 0.7};
    const auto c = verify_clt_conditions({d}, {1, 4}, {2}, 2, {1, 2}, 1.0, 1.0);
    // N = 1: cut 1, only Z_1 counts: 9 / 1. N = 4: cut 2, Z_1 and Z_4 count: (9 + 4) / 4.
    CHECK(c.m1.value[0] == Approx(9.0));
    CHECK(c.m1.value[1] == Approx(13.0 / 4.0));
    CHECK(c.m1.decreasing);
    // K = 2, two blocks: (9.25 / 2 - 1 + 4.04 / 2 - 1) / 2.
    CHECK(c.m2.value[0] == Approx((9.25 / 2.0 - 1.0 + 4.04 / 2.0 - 1.0) / 2.0));
    // l = 1, K = 2, cut sqrt 2: j = 0 (|0| no), j = 1 (|3 - 0| yes, 1 + 0.25). Over 2.
    CHECK(c.m3.value[0] == Approx(1.25 / 2.0));
    CHECK(c.sup_ez2 == Approx(9.0));
}

TEST_CASE("Lindeberg statistics vanish for Gaussian increments", "[clt]") {
    const auto decs = synthetic(400, 256, 1.0, 3);
    const auto c = verify_clt_conditions(decs, {16, 64, 256}, {4, 16, 64}, 16, {2, 4, 8, 16}, 0.5, 1.0);
    CHECK(c.m1.decreasing);
    CHECK(c.m1.final_value < 0.05);
    CHECK(c.m2_within_2ci);
    CHECK(c.m2_abs.final_value < 0.1);
    CHECK(c.m3.value.size() == 4);
    CHECK_THROWS_AS(verify_clt_conditions(decs, {512}, {4}, 16, {2}, 0.5, 1.0), RangeError);
}

TEST_CASE("skeleton CLT of Gaussian increments", "[clt]") {
    const auto decs = synthetic(1000, 32, 1.5, 4);
    const auto rep = clt_skeleton_check(decs, 32, 2.25);
    CHECK(rep.ks.p_value > 0.01);
    CHECK(rep.normalization == "skeleton");
}

TEST_CASE("moment growth of a random walk", "[moments]") {
    const auto decs = synthetic(4000, 64, 1.0, 5);
    const auto p1 = moment_growth_check(decs, 1);
    CHECK(p1.exponent == Approx(1.0).margin(0.1));
    CHECK(p1.exponent_bound == Approx(1.5));
    CHECK(p1.exponent_ok);
    CHECK(p1.z_trend_free);
    // E M_N^4 = 3 N^2 for Gaussian steps: the exponent is 2, above 2 - 1/4 + 0.1.
    const auto p2 = moment_growth_check(decs, 2);
    CHECK(p2.exponent == Approx(2.0).margin(0.1));
    CHECK(p2.exponent_bound == Approx(1.75));
    CHECK_FALSE(p2.exponent_ok);
    CHECK(p2.moment_M.back() == Approx(3.0 * 64 * 64).epsilon(0.15));
}

TEST_CASE("SLLN envelope on synthetic integral curves", "[slln]") {
    IntegralCurves curves;
    curves.times = {10.0, 100.0, 1000.0, 10000.0};
    for (int i = 1; i <= 10; ++i) {
        std::vector<double> v;
        for (double t : curves.times) v.push_back(i * std::sqrt(t));
        curves.values.push_back(v);
    }
    const auto rep = slln_check(curves, {}, 0.1, 1.0, 0.05, 100.0);
    // |int| / t^{0.6} = i t^{-0.1}; the 90th percentile of i = 1..10 is 9.1.
    for (std::size_t j = 0; j < curves.times.size(); ++j)
        CHECK(rep.p90[j] == Approx(9.1 * std::pow(curves.times[j], -0.1)));
    CHECK(rep.reference_time == 100.0);
    CHECK(rep.decaying);
    CHECK_FALSE(rep.below_threshold);
    CHECK(rep.threshold == Approx(0.05));
}

TEST_CASE("SLLN summability diagnostics from decompositions", "[slln]") {
    auto decs = synthetic(200, 64, 1.0, 6);
    for (auto& d : decs) {
        d.tau = 1.0;
        for (int k = 0; k <= 64; ++k) {
            d.times.push_back(k);
            d.residual.push_back(0.0);
        }
    }
    IntegralCurves curves;
    curves.times = {1.0, 64.0};
    curves.values.assign(10, {0.0, 0.0});
    const auto rep = slln_check(curves, decs, 0.1, 1.0);
    CHECK(rep.ez2.size() == 64);
    CHECK(rep.summable);
    CHECK(rep.residual_mean.front() == 0.0);
}

TEST_CASE("sigma^2 estimators agree with s^2 / a^2 on the forced OU", "[sigma2]") {
    const auto model = make_model<1>(model_preset("ou_brownian"));
    const auto pm = estimate_periodic_measure(model, InitialLaw<1>(Vec<1>(0.0)), 4, 8, 2, 500, 0.01, 5);
    const auto mu = invariant_measure_mu_star(pm);
    const auto obs = center_observable(identity_obs(), mu);
    Sigma2Config cfg;
    cfg.n_xi = 600;
    cfg.pi.T_cut = 8.0;
    cfg.pi.inner_n = 2;
    cfg.batch_paths = 60;
    cfg.batch_periods = 20;
    cfg.batches_per_path = 10;
    cfg.batch_burn_in = 2;
    const auto est = estimate_sigma2(model, mu, obs, cfg, 9);
    CHECK(est.sigma2_mc == Approx(1.0).margin(4.0 * est.mc_se + 0.02));
    CHECK(est.sigma2_batch == Approx(1.0).margin(4.0 * est.batch_se + 0.1));
    CHECK(est.mc_ci_lo < est.sigma2_mc);
    CHECK(est.batch_ci_hi > est.sigma2_batch);
}

TEST_CASE("center estimate recovers the OU time average", "[center]") {
    const auto model = make_model<1>(model_preset("ou_brownian"));
    const std::function<double(const Vec<1>&)> phi = [](const Vec<1>& x) { return x[0]; };
    const auto obs = make_observable<1>(phi, 1.0);
    const auto c = estimate_center(model, InitialLaw<1>(Vec<1>(2.0)), obs, 5, 40, 200, 0.01, 3);
    // Forcing averages to zero over a period, so <mu_star, x> = 0.
    CHECK(c.standard_error > 0.0);
    CHECK(std::abs(c.value) <= 4.0 * c.standard_error);
    CHECK(center_observable(obs, c).center == c.value);
    CHECK_THROWS_AS(estimate_center(model, InitialLaw<1>(Vec<1>(0.0)), obs, 0, 4, 10, 0.01, 3), ParameterError);
}
