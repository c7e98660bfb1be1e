// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "catch_amalgamated.hpp"
#include "levy_periodic/models.hpp"

using namespace levy_periodic;
using Catch::Approx;

TEST_CASE("presets build complete periodic models", "[models]") {
    for (const auto& name : model_names()) {
        const auto p = model_preset(name);
        const auto m = make_model<1>(p);
        CHECK_NOTHROW(m.require_complete());
        CHECK(m.hash == model_hash(p));
        CHECK(m.hash.size() == 16);
    }
    CHECK_THROWS_AS(model_preset("nope"), ModelError);
}

TEST_CASE("affine coefficients evaluate as documented", "[models]") {
    ModelParams p;
    p.a = 2.0;
    p.c = 0.3;
    p.A = 0.5;
    p.B = -0.25;
    p.s = 0.7;
    p.s_lin = 0.1;
    p.tau = 2.0;
    p.G_scale = 3.0;
    p.G_kind = "cos_modulated";
    const auto m = make_model<1>(p);
    const double t = 0.3, w = std::numbers::pi;
    CHECK(m.drift(t, Vec<1>(1.5))[0] == Approx(-3.0 + 0.3 + 0.5 * std::sin(w * t) - 0.25 * std::cos(w * t)));
    CHECK(m.diffusion(t, Vec<1>(2.0))(0, 0) == Approx(0.7 + 0.2));
    CHECK_FALSE(m.additive_noise);
    CHECK(m.large_jump(t, Vec<1>(0.0), Vec<1>(2.0))[0] == Approx(6.0 * std::cos(w * t)));
    CHECK(m.drift(t + 2.0, Vec<1>(1.5))[0] == Approx(m.drift(t, Vec<1>(1.5))[0]));
}

TEST_CASE("jump measure strings", "[models]") {
    const auto nu = parse_jump_measure<2>("0.3@2; 1,1@0.5", "uniform(0.5,2)@1; normal(0,0.2)@3", 2);
    REQUIRE(nu.atoms.size() == 2);
    CHECK(nu.atoms[0].location == Vec<2>(0.3, 0.0));
    CHECK(nu.atoms[1].location == Vec<2>(1.0, 1.0));
    REQUIRE(nu.components.size() == 2);
    CHECK(nu.components[1].family == MarkFamily::normal);
    CHECK(nu.components[1].rate == 3.0);
    CHECK(parse_jump_measure<1>("", "", 1).empty());
    CHECK_THROWS_AS(parse_jump_measure<1>("0.3", "", 1), ModelError);
    CHECK_THROWS_AS(parse_jump_measure<2>("1,2,3@1", "", 2), DimError);
    CHECK_THROWS_AS(parse_jump_measure<1>("0.3@-1", "", 1), InvalidRate);
    CHECK_THROWS_AS(parse_jump_measure<1>("", "cauchy(0,1)@1", 1), ModelError);
    CHECK_THROWS_AS(parse_jump_measure<1>("abc@1", "", 1), ModelError);
}

TEST_CASE("model hash changes with every parameter", "[models]") {
    const auto base = model_preset("ou_jumps");
    auto p = base;
    p.a = 1.0000001;
    CHECK(model_hash(p) != model_hash(base));
    p = base;
    p.atoms = "0.3@2";
    CHECK(model_hash(p) != model_hash(base));
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("dimension dispatch", "[models]") {
    CHECK(dispatch_dim(2, [](auto d) { return decltype(d)::value; }) == 2);
    CHECK_THROWS_AS(dispatch_dim(4, [](auto d) { return decltype(d)::value; }), DimError);
    ModelParams p;
    p.dim = 2;
    CHECK_THROWS_AS(make_model<1>(p), DimError);
    CHECK(make_model<2>(p).dim == 2);
}
