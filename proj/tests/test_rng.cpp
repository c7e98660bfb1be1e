// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cmath>
#include <set>
#include <vector>

#include "catch_amalgamated.hpp"
#include "levy_periodic/parallel.hpp"
#include "levy_periodic/rng.hpp"
#include "levy_periodic/stats.hpp"

using namespace levy_periodic;
using Catch::Approx;

TEST_CASE("derived seeds depend on the key path only", "[rng]") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(derive_seed(1, 2), 3));
    CHECK(derive_seed(1, StreamKey::path, 5) == derive_seed(derive_seed(1, StreamKey::path), 5));
    CHECK(derive_seed(1, 2) != derive_seed(2, 1));
    std::set<std::uint64_t> seen;
    for (std::uint64_t k = 0; k < 10000; ++k) seen.insert(derive_seed(42, k));
    CHECK(seen.size() == 10000);
}

TEST_CASE("counter normals are reproducible and standard", "[rng]") {
    CHECK(counter_normal(9, 17) == counter_normal(9, 17));
    std::vector<double> xs;
    for (std::uint64_t k = 0; k < 20000; ++k) xs.push_back(counter_normal(123, k));
    const auto m = stats::mean_estimate(xs);
    CHECK(std::abs(m.mean) < 4.0 * m.se);
    CHECK(m.sd == Approx(1.0).margin(0.03));
    CHECK(stats::ks_one_sample(xs, [](double x) { return stats::normal_cdf(x); }).p_value > 0.001);
}

TEST_CASE("parallel_for visits every index once and rethrows the lowest failure", "[parallel]") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);

    try {
        parallel_for(100, 4, [](std::size_t i) {
            if (i == 37 || i == 80) throw std::runtime_error(std::to_string(i));
        });
        FAIL("no exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "37");
    }
}

// References: Kolmogorov tail from the closed series; KS statistics from an
// independent implementation (scipy), p-values with the same small-sample
// correction; A^2 from the textbook sum.
TEST_CASE("goodness-of-fit statistics match reference values", "[stats]") {
    const std::vector<double> x{-1.2, -0.4, 0.1, 0.35, 0.8, 1.9, -0.05, 0.6, -2.1, 0.3};
    const std::vector<double> y{0.2, 1.1, -0.3, 0.9, 1.7, 0.4, 2.2, 0.05};
    const auto cdf = [](double v) { return stats::normal_cdf(v); };

    CHECK(stats::kolmogorov_q(1.0) == Approx(0.26999967167735456).epsilon(1e-10));
    const auto ks1 = stats::ks_one_sample(x, cdf);
    CHECK(ks1.statistic == Approx(0.18006119416162752).epsilon(1e-12));
    CHECK(ks1.p_value == Approx(0.8678712490033218).epsilon(1e-9));
    const auto ks2 = stats::ks_two_sample(x, y);
    CHECK(ks2.statistic == Approx(0.4).epsilon(1e-12));
    CHECK(ks2.p_value == Approx(0.376181584779558).epsilon(1e-9));
    const auto ad = stats::anderson_darling(x, cdf);
    CHECK(ad.statistic == Approx(0.3316732418276267).epsilon(1e-10));
    CHECK(ad.p_value > 0.5);
    CHECK(ad.p_value <= 1.0);
}

TEST_CASE("Anderson-Darling p-values are close to uniform under the null", "[stats]") {
    // Upper percentage points of A^2 for a fully specified cdf.
    CHECK(1.0 - stats::ad_inf_cdf(2.492) == Approx(0.05).margin(0.002));
    CHECK(1.0 - stats::ad_inf_cdf(3.857) == Approx(0.01).margin(0.001));
}

TEST_CASE("quantiles and linear fits", "[stats]") {
    CHECK(stats::normal_quantile(0.975) == Approx(1.959963984540054).epsilon(1e-12));
    CHECK(stats::t_quantile(0.975, 5) == Approx(2.570581835636314).epsilon(1e-10));
    CHECK(stats::quantile({4, 1, 3, 2}, 0.5) == Approx(2.5));
    CHECK(stats::quantile({4, 1, 3, 2}, 1.0) == Approx(4.0));
    const auto fit = stats::linear_fit({0, 1, 2, 3}, {1, 3, 5, 7});
    CHECK(fit.slope == Approx(2.0));
    CHECK(fit.intercept == Approx(1.0));
    CHECK(fit.r_squared == Approx(1.0));
    CHECK_THROWS(stats::linear_fit({1, 1}, {0, 1}));
}
