// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "levy_periodic/pipeline.hpp"

using namespace levy_periodic;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A configuration small enough to run every stage in a couple of seconds.
ExperimentConfig tiny_config(const std::string& model = "ou_jumps") {
    return parse_config("[model]\nname = " + model +
                        "\n[run]\nseed = 11\nn_paths = 200\nburn_in = 6\nn_periods = 2\nphases = 4\n"
                        "contraction_paths = 400\ncontraction_points = 8\nmoment_paths = 100\n"
                        "center_paths = 40\ncenter_periods = 20\n"
                        "hyp_points = 7\nhyp_time_points = 4\n"
                        "[slln]\nhorizon = 200\npaths = 20\ncheckpoints_per_decade = 4\ndecomp_paths = 6\n"
                        "decomp_periods = 8\n"
                        "[clt]\nt_end = 20\nreplicas = 500\nn_xi = 100\ninner_n = 2\nT_cut = 4\nbatch_paths = 20\n"
                        "batch_periods = 10\nbatches_per_path = 4\nbatch_burn_in = 2\ndecomp_paths = 10\n"
                        "m1_N = 2, 4, 8\nm2_K = 2, 4\nm3_block = 2\nm3_l = 1, 2, 4\n");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("levy_periodic_test_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("SHA-256 of a known string", "[pipeline]") {
    CHECK(pipeline::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("log-spaced checkpoints end at the horizon", "[pipeline]") {
    const auto cp = pipeline::log_checkpoints(1000.0, 2);
    CHECK(cp.front() == 1.0);
    CHECK(cp.back() == 1000.0);
    CHECK(cp.size() == 7);
    CHECK(pipeline::log_checkpoints(50.0, 1).back() == 50.0);
}

TEST_CASE("full run writes every artifact and a consistent manifest", "[pipeline]") {
    const auto dir = scratch("full");
    const int code = pipeline::run(tiny_config(), "full", {dir, 1});
    CHECK((code == pipeline::kOk || code == pipeline::kThresholdFailed));
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["subcommand"] == "full");
    CHECK(manifest["exit_code"] == code);
    CHECK(manifest["model_hash"] == model_hash(tiny_config().model));
    CHECK(manifest["stages"].size() == 6);
    for (const auto& st : manifest["stages"]) CHECK(st["status"] != "error");
    for (const char* f : {"config.ini", "ensemble.csv", "hypotheses.json", "phase_measures.csv",
                          "periodic_measure.json", "contraction.json", "slln_curves.csv", "slln.json", "clt_qq.csv",
                          "clt_conditions.csv", "clt.json"})
        CHECK(fs::exists(dir / f));
    for (const auto& f : manifest["files"]) {
        const auto data = slurp(dir / f["path"].get<std::string>());
        CHECK(f["sha256"] == pipeline::sha256_hex(data));
        CHECK(f["bytes"] == data.size());
    }
    // The canonical config copy reproduces the run configuration.
    CHECK(parse_config(slurp(dir / "config.ini")) == tiny_config());
}

TEST_CASE("outputs do not depend on the thread count", "[pipeline]") {
    const auto a = scratch("threads1"), b = scratch("threads3");
    pipeline::run(tiny_config("ou_brownian"), "full", {a, 1});
    pipeline::run(tiny_config("ou_brownian"), "full", {b, 3});
    const auto ma = json::parse(slurp(a / "manifest.json"));
    const auto mb = json::parse(slurp(b / "manifest.json"));
    CHECK(ma["files"] == mb["files"]);
}

TEST_CASE("stage errors stop the run with exit code 3", "[pipeline]") {
    auto cfg = tiny_config("ou_brownian");
    cfg.x2 = cfg.x1;  // no contraction signal
    const auto dir = scratch("error");
    CHECK(pipeline::run(cfg, "contraction", {dir, 1}) == pipeline::kStageError);
    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["stages"].back()["status"] == "error");
    CHECK(pipeline::run(cfg, "no-such-stage", {scratch("unknown"), 1}) == pipeline::kStageError);
}
