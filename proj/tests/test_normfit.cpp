// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gradnorm/commands.hpp"
#include "gradnorm/model_io.hpp"
#include "gradnorm/normfit.hpp"
#include "support/test_util.hpp"

using gradnorm::NormalizationModel;
using gradnorm::PowerLawModel;
using gradnorm::ScaleSample;

namespace {

std::vector<double> default_grid() {
    return gradnorm::ScaleSet::uniform(0.1, 2.0, 0.1).scales();
}

// Forward-generate zero-residual samples from a constraint-satisfying model.
std::vector<ScaleSample> generate_exact(const NormalizationModel& truth,
                                        const std::vector<double>& grid,
                                        const std::vector<double>& weights) {
    std::vector<ScaleSample> samples;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ScaleSample s;
        s.image_id = "gen";
        s.scale = grid[i];
        s.e_phi_scaled = weights[i % weights.size()];
        s.e_phi_ref = s.e_phi_scaled * truth.evaluate(grid[i]);
        samples.push_back(s);
    }
    return samples;
}

}  // namespace

TEST_CASE("constrained fit recovers exact forward-generated coefficients") {
    NormalizationModel truth;
    truth.a1 = 0.8;
    truth.b1 = 0.2;
    truth.a2 = -0.24;
    truth.b2 = 1.24;
    truth.c2 = 0.0;
    const auto samples = generate_exact(truth, default_grid(), {1.0});
    const NormalizationModel fit = gradnorm::fit_constrained(samples);

    CHECK(fit.a1 == Catch::Approx(truth.a1).margin(1e-9));
    CHECK(fit.b1 == Catch::Approx(truth.b1).margin(1e-9));
    CHECK(fit.a2 == Catch::Approx(truth.a2).margin(1e-9));
    CHECK(fit.b2 == Catch::Approx(truth.b2).margin(1e-9));
    CHECK(fit.c2 == Catch::Approx(truth.c2).margin(1e-9));
    CHECK(std::fabs(fit.lambda_up) < 1e-9);
    CHECK(std::fabs(fit.lambda_down) < 1e-9);
    CHECK(fit.rmse_total < 1e-12);
    CHECK(fit.c_used == Catch::Approx(0.62).margin(1e-9));  // implied from b2/2
}

TEST_CASE("identity ratio data yields a zero-residual constrained minimizer") {
    NormalizationModel identity;  // defaults are g == 1
    const auto samples = generate_exact(identity, default_grid(), {0.25, 1.0, 2.0});
    const NormalizationModel fit = gradnorm::fit_constrained(samples);
    // degenerate target: assert the residual and the constraint, not
    // particular coefficients
    CHECK(fit.rmse_total < 1e-9);
    CHECK(std::fabs(fit.a1 + fit.b1 - 1.0) < 1e-9);
    CHECK(std::fabs(fit.a2 + fit.b2 + fit.c2 - 1.0) < 1e-9);
    CHECK(fit.evaluate(1.0) == 1.0);
}

TEST_CASE("constraint and recovery hold over random constraint-satisfying models") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> a1_d(0.4, 1.3), a2_d(-0.6, 0.3), b2_d(0.7, 1.6),
        w_d(0.3, 3.0);
    const auto grid = default_grid();
    for (int trial = 0; trial < 50; ++trial) {
        NormalizationModel truth;
        truth.a1 = a1_d(rng);
        truth.b1 = 1.0 - truth.a1;
        truth.a2 = a2_d(rng);
        truth.b2 = b2_d(rng);
        truth.c2 = 1.0 - truth.a2 - truth.b2;
        std::vector<double> weights;
        for (int i = 0; i < 7; ++i) weights.push_back(w_d(rng));
        const auto samples = generate_exact(truth, grid, weights);
        const NormalizationModel fit = gradnorm::fit_constrained(samples);

        CHECK(std::fabs(fit.a1 + fit.b1 - 1.0) < 1e-9);
        CHECK(std::fabs(fit.a2 + fit.b2 + fit.c2 - 1.0) < 1e-9);
        CHECK(std::fabs(fit.a1 - truth.a1) < 1e-9);
        CHECK(std::fabs(fit.a2 - truth.a2) < 1e-9);
        CHECK(std::fabs(fit.b2 - truth.b2) < 1e-9);
        CHECK(gradnorm::kkt_residual(fit, samples) < 1e-6);
    }
}

TEST_CASE("noisy fit satisfies first-order optimality against perturbed candidates") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::uniform_real_distribution<double> w_d(0.5, 2.0);
    NormalizationModel truth;
    truth.a1 = 0.85;
    truth.b1 = 0.15;
    truth.a2 = -0.2;
    truth.b2 = 1.1;
    truth.c2 = 0.1;

    std::vector<ScaleSample> samples;
    for (double s : default_grid()) {
        for (int k = 0; k < 5; ++k) {
            ScaleSample sm;
            sm.image_id = "k" + std::to_string(k);
            sm.scale = s;
            sm.e_phi_scaled = w_d(rng);
            sm.e_phi_ref = std::max(1e-6, sm.e_phi_scaled * (truth.evaluate(s) + noise(rng)));
            samples.push_back(sm);
        }
    }

    const NormalizationModel fit = gradnorm::fit_constrained(samples);
    CHECK(std::fabs(fit.a1 + fit.b1 - 1.0) < 1e-9);
    CHECK(std::fabs(fit.a2 + fit.b2 + fit.c2 - 1.0) < 1e-9);
    CHECK(gradnorm::kkt_residual(fit, samples) < 1e-6);

    // No constraint-satisfying perturbation may beat the fit in the
    // residual objective (the ratio-space RMSE is a different functional
    // and is not asserted here).
    const double best = gradnorm::residual_objective(fit, samples);
    std::uniform_real_distribution<double> mag(-0.3, 0.3);
    for (int trial = 0; trial < 100; ++trial) {
        NormalizationModel cand = fit;
        const double du = mag(rng);  // null space of (1,1)
        cand.a1 += du;
        cand.b1 -= du;
        const double d1 = mag(rng), d2 = mag(rng);  // null space of (1,1,1)
        cand.a2 += d1;
        cand.b2 += d2 - d1;
        cand.c2 += -d2;
        CHECK(gradnorm::residual_objective(cand, samples) >= best - 1e-9);
    }
}

TEST_CASE("fit preconditions: scale coverage") {
    NormalizationModel identity;
    SECTION("only scales above 1") {
        const auto samples = generate_exact(identity, {1.2, 1.5, 2.0}, {1.0});
        CHECK_THROWS_WITH(gradnorm::fit_constrained(samples),
                          Catch::Matchers::ContainsSubstring("distinct scales"));
    }
    SECTION("too few distinct scales below 1") {
        const auto samples = generate_exact(identity, {0.5, 1.0, 1.5, 2.0}, {1.0});
        CHECK_THROWS_AS(gradnorm::fit_constrained(samples), gradnorm::numeric_error);
    }
    SECTION("degenerate samples are excluded before the check") {
        auto samples = generate_exact(identity, {0.4, 0.7, 1.0, 1.5, 2.0}, {1.0});
        for (auto& s : samples) s.e_phi_ref = 0.0;
        CHECK_THROWS_AS(gradnorm::fit_constrained(samples), gradnorm::numeric_error);
    }
}

TEST_CASE("fits whose g dips nonpositive inside the range are rejected") {
    // exact interpolation through (0.1, 0.01), (0.55, 0.01) with g(1)=1
    // gives a down-branch quadratic whose vertex at s ~ 0.325 is negative
    std::vector<ScaleSample> samples = {{"x", 0.1, 1.0, 0.01},
                                        {"x", 0.55, 1.0, 0.01},
                                        {"x", 1.0, 1.0, 1.0},
                                        {"x", 1.5, 1.0, 1.2},
                                        {"x", 2.0, 1.0, 1.5}};
    CHECK_THROWS_WITH(gradnorm::fit_constrained(samples),
                      Catch::Matchers::ContainsSubstring("not positive"));
}

TEST_CASE("power law on a measured ramp corpus is the identity law") {
    std::vector<std::pair<std::string, gradnorm::Image>> ramps;
    for (int k = 0; k < 3; ++k)
        ramps.emplace_back("ramp" + std::to_string(k),
                           testutil::make_ramp(64, 64, k % 2 ? testutil::RampAxis::vertical
                                                             : testutil::RampAxis::horizontal));
    const auto samples =
        gradnorm::collect_samples(ramps, gradnorm::ScaleSet::uniform(0.1, 2.0, 0.1));
    const PowerLawModel pl = gradnorm::fit_power_law(samples);
    CHECK(pl.exponent == Catch::Approx(1.0).margin(0.05));
    CHECK(pl.amp == Catch::Approx(1.0).margin(0.05));
    CHECK(pl.rmse < 0.02);
}

TEST_CASE("power-law fit fixtures") {
    NormalizationModel identity;
    SECTION("ratio exactly s") {
        NormalizationModel g_is_s;
        g_is_s.a1 = 1.0;
        g_is_s.b1 = 0.0;
        g_is_s.a2 = 0.0;
        g_is_s.b2 = 1.0;
        g_is_s.c2 = 0.0;
        const auto samples = generate_exact(g_is_s, default_grid(), {1.0, 0.5});
        const PowerLawModel pl = gradnorm::fit_power_law(samples);
        CHECK(pl.amp == Catch::Approx(1.0).margin(1e-12));
        CHECK(pl.exponent == Catch::Approx(1.0).margin(1e-12));
        CHECK(pl.rmse < 1e-12);
    }
    SECTION("ratio exactly 1") {
        const auto samples = generate_exact(identity, default_grid(), {1.0, 2.0});
        const PowerLawModel pl = gradnorm::fit_power_law(samples);
        CHECK(pl.amp == Catch::Approx(1.0).margin(1e-12));
        CHECK(pl.exponent == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("fewer than two distinct scales is an error") {
        const auto samples = generate_exact(identity, {1.0, 1.0, 1.0}, {1.0});
        CHECK_THROWS_AS(gradnorm::fit_power_law(samples), gradnorm::numeric_error);
    }
    SECTION("nonpositive expectations are filtered before the fit") {
        std::vector<ScaleSample> samples = {{"x", 0.5, 0.0, 1.0},   // no ratio
                                            {"x", 1.0, 1.0, 1.0},
                                            {"x", 2.0, 1.0, 0.0}};  // degenerate
        CHECK_THROWS_AS(gradnorm::fit_power_law(samples), gradnorm::numeric_error);
    }
}

TEST_CASE("ratio-space rmse fixtures") {
    NormalizationModel identity;
    SECTION("model identical to the generator scores zero") {
        NormalizationModel truth;
        truth.a1 = 0.9;
        truth.b1 = 0.1;
        truth.a2 = -0.1;
        truth.b2 = 1.05;
        truth.c2 = 0.05;
        const auto samples = generate_exact(truth, default_grid(), {0.8});
        CHECK(gradnorm::evaluate_rmse(truth, samples) < 1e-12);
    }
    SECTION("g == 1 against ratios 0.9 and 1.1 scores 0.1") {
        std::vector<ScaleSample> samples;
        for (double r : {0.9, 1.1}) {
            ScaleSample s;
            s.image_id = "x";
            s.scale = r;  // scale value irrelevant for g == 1
            s.e_phi_scaled = 1.0;
            s.e_phi_ref = r;
            samples.push_back(s);
        }
        CHECK(gradnorm::evaluate_rmse(identity, samples) == Catch::Approx(0.1).margin(1e-12));
    }
    SECTION("no usable samples is an error") {
        std::vector<ScaleSample> samples(3);
        CHECK_THROWS_AS(gradnorm::evaluate_rmse(identity, samples), gradnorm::numeric_error);
    }
}

TEST_CASE("model json round trip is exact") {
    testutil::TempDir dir;
    NormalizationModel m;
    m.a1 = 0.8123456789012345;
    m.b1 = 1.0 - m.a1;
    m.a2 = -0.2412345678901234;
    m.b2 = 1.2412345678901234;
    m.c2 = 1.0 - m.a2 - m.b2;
    m.lambda_up = 3.25e-14;
    m.lambda_down = -1.5e-13;
    m.rmse_up = 0.001234;
    m.rmse_down = 0.004321;
    m.rmse_total = 0.003333;
    m.c_used = 0.6206172839450617;
    PowerLawModel pl;
    pl.amp = 0.987654321;
    pl.exponent = 1.0123456789;
    pl.rmse = 0.0321;

    const std::string path = dir.file("model.json");
    gradnorm::save_model_json(m, pl, path);
    const auto [m2, pl2] = gradnorm::load_model_json(path);
    CHECK(m2.a1 == m.a1);
    CHECK(m2.b1 == m.b1);
    CHECK(m2.a2 == m.a2);
    CHECK(m2.b2 == m.b2);
    CHECK(m2.c2 == m.c2);
    CHECK(m2.lambda_up == m.lambda_up);
    CHECK(m2.lambda_down == m.lambda_down);
    CHECK(m2.rmse_up == m.rmse_up);
    CHECK(m2.rmse_down == m.rmse_down);
    CHECK(m2.rmse_total == m.rmse_total);
    CHECK(m2.c_used == m.c_used);
    CHECK(pl2.amp == pl.amp);
    CHECK(pl2.exponent == pl.exponent);
    CHECK(pl2.rmse == pl.rmse);
}

TEST_CASE("model json schema validation") {
    testutil::TempDir dir;
    SECTION("unknown version is named in the error") {
        const std::string path = dir.file("v9.json");
        std::ofstream(path) << R"({"version":9,"c":0.5,"up":{"a1":0,"b1":1},)"
                               R"("down":{"a2":0,"b2":0,"c2":1},"lambda":{"up":0,"down":0},)"
                               R"("rmse":{"up":0,"down":0,"total":0},)"
                               R"("power_law":{"amp":1,"exponent":0,"rmse":0}})";
        CHECK_THROWS_WITH(gradnorm::load_model_json(path),
                          Catch::Matchers::ContainsSubstring("version 9"));
    }
    SECTION("missing down-branch coefficients") {
        const std::string path = dir.file("nodown.json");
        std::ofstream(path) << R"({"version":1,"c":0.5,"up":{"a1":0,"b1":1},)"
                               R"("down":{"a2":0,"b2":0},"lambda":{"up":0,"down":0},)"
                               R"("rmse":{"up":0,"down":0,"total":0},)"
                               R"("power_law":{"amp":1,"exponent":0,"rmse":0}})";
        CHECK_THROWS_WITH(gradnorm::load_model_json(path),
                          Catch::Matchers::ContainsSubstring("down.c2"));
    }
    SECTION("malformed json") {
        const std::string path = dir.file("bad.json");
        std::ofstream(path) << "{not json";
        CHECK_THROWS_AS(gradnorm::load_model_json(path), gradnorm::io_error);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(gradnorm::load_model_json(dir.file("absent.json")), gradnorm::io_error);
    }
}

TEST_CASE("sample collection over a pyramid") {
    SECTION("reference-only scale set reproduces the reference expectation") {
        const auto samples = gradnorm::collect_samples(
            {{"img", testutil::synthetic_natural_image(2, 24, 24)}}, gradnorm::ScaleSet({1.0}));
        REQUIRE(samples.size() == 1);
        CHECK(samples[0].scale == 1.0);
        CHECK(samples[0].e_phi_scaled == samples[0].e_phi_ref);
        CHECK(samples[0].e_phi_ref > 0.0);
    }
    SECTION("ramp ratios across {0.5, 1, 2} follow 1/g within boundary effects") {
        const auto samples =
            gradnorm::collect_samples({{"ramp", testutil::make_ramp(64, 64)}},
                                      gradnorm::ScaleSet({0.5, 1.0, 2.0}));
        REQUIRE(samples.size() == 3);
        const double expect[] = {2.0, 1.0, 0.5};
        for (int i = 0; i < 3; ++i) {
            const double ratio = samples[i].e_phi_scaled / samples[i].e_phi_ref;
            CHECK(std::fabs(ratio - expect[i]) / expect[i] < 0.05);
        }
    }
    SECTION("constant images yield degenerate samples; all-degenerate throws") {
        CHECK_THROWS_AS(
            gradnorm::collect_samples({{"flat", gradnorm::Image::filled(16, 16, 0.5)}},
                                      gradnorm::ScaleSet({0.5, 1.0, 2.0})),
            gradnorm::numeric_error);
    }
    SECTION("empty corpus throws") {
        CHECK_THROWS_AS(gradnorm::collect_samples({}, gradnorm::ScaleSet({1.0})),
                        gradnorm::numeric_error);
    }
    SECTION("parallel collection matches serial exactly") {
        std::vector<std::pair<std::string, gradnorm::Image>> corpus;
        for (std::uint64_t k = 0; k < 6; ++k)
            corpus.emplace_back("img" + std::to_string(k),
                                testutil::synthetic_natural_image(500 + k, 32, 32));
        const auto grid = gradnorm::ScaleSet::uniform(0.5, 1.5, 0.25);
        const auto serial = gradnorm::collect_samples(corpus, grid, 1);
        const auto parallel = gradnorm::collect_samples(corpus, grid, 4);
        REQUIRE(serial.size() == parallel.size());
        for (std::size_t i = 0; i < serial.size(); ++i) {
            CHECK(serial[i].image_id == parallel[i].image_id);
            CHECK(serial[i].scale == parallel[i].scale);
            CHECK(serial[i].e_phi_scaled == parallel[i].e_phi_scaled);
            CHECK(serial[i].e_phi_ref == parallel[i].e_phi_ref);
        }
    }
}

TEST_CASE("samples csv round trip") {
    testutil::TempDir dir;
    std::vector<ScaleSample> samples;
    for (int i = 0; i < 5; ++i) {
        ScaleSample s;
        s.image_id = "img, \"quoted\" " + std::to_string(i);
        s.scale = 0.5 + 0.25 * i;
        s.e_phi_scaled = 0.01 * (i + 1);
        s.e_phi_ref = 0.02;
        samples.push_back(s);
    }
    const std::string path = dir.file("samples.csv");
    gradnorm::write_samples_csv(samples, path);
    const auto back = gradnorm::read_samples_csv(path);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(back[i].image_id == samples[i].image_id);
        CHECK(back[i].scale == Catch::Approx(samples[i].scale).margin(1e-9));
        CHECK(back[i].e_phi_scaled == Catch::Approx(samples[i].e_phi_scaled).epsilon(1e-9));
        CHECK(back[i].e_phi_ref == Catch::Approx(samples[i].e_phi_ref).epsilon(1e-9));
    }

    SECTION("wrong header is rejected") {
        const std::string bad = dir.file("bad.csv");
        std::ofstream(bad) << "a,b,c,d\n1,2,3,4\n";
        CHECK_THROWS_AS(gradnorm::read_samples_csv(bad), gradnorm::io_error);
    }
    SECTION("non-numeric field is rejected") {
        const std::string bad = dir.file("nan.csv");
        std::ofstream(bad) << "image_id,scale,e_phi_scaled,e_phi_ref\nx,abc,1,1\n";
        CHECK_THROWS_AS(gradnorm::read_samples_csv(bad), gradnorm::io_error);
    }
}

TEST_CASE("uniform grids snap the reference scale") {
    const auto grid = gradnorm::ScaleSet::uniform(0.1, 2.0, 0.1);
    bool has_exact_one = false;
    for (double s : grid.scales())
        if (s == 1.0) has_exact_one = true;
    CHECK(has_exact_one);
}
