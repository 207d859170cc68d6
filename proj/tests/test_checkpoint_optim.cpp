// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cmseg/checkpoint.hpp"
#include "cmseg/errors.hpp"
#include "cmseg/optim.hpp"
#include "test_helpers.hpp"

using namespace cmseg;

TEST_CASE("checkpoint round trip is bit-exact and byte-stable") {
    const auto dir = test::fresh_dir("checkpoint");
    Checkpoint ckpt;
    ckpt.meta.phase = "cmft";
    ckpt.meta.seed = 1234;
    ckpt.meta.step = 42;
    ckpt.meta.config_hash = "deadbeef";
    ckpt.meta.extra = {{"objective", "cyclegan"}, {"depth", 3}};
    Rng rng(5);
    Tensor t({2, 3, 1, 1, 1});
    for (auto& x : t.v) x = rng.normal();
    ckpt.params["g_ab/e0c1.w"] = t;
    Tensor b({3});
    b.v = {0.5, -0.25, 1e-300};
    ckpt.params["g_ab/e0c1.b"] = b;

    const std::string p1 = (dir / "a.cmck").string();
    const std::string p2 = (dir / "b.cmck").string();
    save_checkpoint(p1, ckpt);
    save_checkpoint(p2, ckpt);
    CHECK(test::same_bytes(p1, p2));

    const Checkpoint back = load_checkpoint(p1);
    CHECK(back.meta.phase == "cmft");
    CHECK(back.meta.seed == 1234);
    CHECK(back.meta.step == 42);
    CHECK(back.meta.config_hash == "deadbeef");
    CHECK(back.meta.extra.at("depth").get<int>() == 3);
    REQUIRE(back.params.size() == 2);
    CHECK(back.params.at("g_ab/e0c1.w").dims == t.dims);
    CHECK(back.params.at("g_ab/e0c1.w").v == t.v);
    CHECK(back.params.at("g_ab/e0c1.b").v == b.v);

    SUBCASE("corrupt files are rejected") {
        std::ofstream out(dir / "bad.cmck", std::ios::binary);
        out << "NOTACKPT" << std::string(64, '\0');
        out.close();
        CHECK_THROWS_AS(load_checkpoint((dir / "bad.cmck").string()), ValidationError);
        CHECK_THROWS_AS(load_checkpoint((dir / "missing.cmck").string()), ValidationError);
    }
}

TEST_CASE("group extraction and insertion") {
    ParamMap flat;
    flat["g_ab/x.w"] = Tensor({1});
    flat["g_ba/x.w"] = Tensor({2});
    const ParamMap sub = extract_group(flat, "g_ab/");
    REQUIRE(sub.size() == 1);
    CHECK(sub.count("x.w") == 1);
    ParamMap rebuilt;
    insert_group(rebuilt, "g_ab/", sub);
    CHECK(rebuilt.count("g_ab/x.w") == 1);
}

TEST_CASE("Adam single-step scalar oracle") {
    // p=1, g=0.5, lr=0.1: m=0.05, v=0.00025, mhat=0.5, vhat=0.25,
    // p' = 1 - 0.1*0.5/(0.5+1e-8)
    ParamMap params, grads;
    params["p"] = Tensor({1});
    params["p"].v[0] = 1.0;
    grads["p"] = Tensor({1});
    grads["p"].v[0] = 0.5;
    Adam opt(AdamConfig{0.1, 0.9, 0.999, 1e-8});
    opt.step(params, grads);
    const double want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(params.at("p").v[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(opt.t() == 1);

    SUBCASE("second step keeps following the oracle recursion") {
        opt.step(params, grads);
        // m2 = 0.9*0.05 + 0.1*0.5; v2 = 0.999*0.00025 + 0.001*0.25
        const double m2 = 0.9 * 0.05 + 0.1 * 0.5;
        const double v2 = 0.999 * 0.00025 + 0.001 * 0.25;
        const double mhat = m2 / (1 - std::pow(0.9, 2));
        const double vhat = v2 / (1 - std::pow(0.999, 2));
        const double want2 = want - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(params.at("p").v[0] == doctest::Approx(want2).epsilon(1e-14));
    }
}

TEST_CASE("Adam with zero learning rate is a bitwise no-op on parameters") {
    ParamMap params, grads;
    params["p"] = Tensor({4});
    params["p"].v = {1.0, -2.0, 3.5, 0.25};
    const std::vector<double> before = params.at("p").v;
    grads["p"] = Tensor({4});
    grads["p"].v = {0.3, -0.1, 2.0, -4.0};
    Adam opt(AdamConfig{0.0, 0.9, 0.999, 1e-8});
    opt.step(params, grads);
    CHECK(params.at("p").v == before);
}

TEST_CASE("Adam state export/import resumes identically") {
    ParamMap params_a, params_b, grads;
    params_a["p"] = Tensor({3});
    params_a["p"].v = {1, 2, 3};
    params_b = params_a;
    grads["p"] = Tensor({3});

    Adam opt_a(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    Rng rng(7);
    for (int s = 0; s < 5; ++s) {
        for (auto& g : grads.at("p").v) g = rng.normal();
        opt_a.step(params_a, grads);
    }
    ParamMap exported;
    opt_a.export_state(exported, "grp");
    Adam opt_b(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    opt_b.import_state(exported, "grp");
    CHECK(opt_b.t() == 5);

    // both must now evolve identically
    ParamMap params_a2 = params_a;
    Rng rng2(9);
    for (int s = 0; s < 3; ++s) {
        for (auto& g : grads.at("p").v) g = rng2.normal();
        opt_a.step(params_a, grads);
    }
    Rng rng3(9);
    for (int s = 0; s < 3; ++s) {
        for (auto& g : grads.at("p").v) g = rng3.normal();
        opt_b.step(params_a2, grads);
    }
    CHECK(params_a.at("p").v == params_a2.at("p").v);
}
