#include <doctest.h>

#include <random>

#include "m3s/error.hpp"
#include "m3s/guidance.hpp"
#include "test_support.hpp"

using namespace m3s;
using m3s::testing::random_tensor;

TEST_CASE("combine: hand case") {
    const Shape s{1, 1, 1};
    const Tensor out = combine(Tensor(s, 1.0), Tensor(s, 2.0), Tensor(s, 3.0), 15.0, 15.0);
    CHECK(out[0] == doctest::Approx(1.0 + 15.0 * 1.0 + 15.0 * 2.0).epsilon(1e-12));
    CHECK(out[0] == doctest::Approx(46.0).epsilon(1e-12));
}

TEST_CASE("combine: zero style scale is classic CFG bitwise") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Shape s{4, 8, 8};
        const Tensor u = random_tensor(s, rng), c = random_tensor(s, rng), st = random_tensor(s, rng);
        const double w = static_cast<double>(rng() % 30) / 2.0;
        CHECK(bitwise_equal(combine(u, c, st, w, 0.0), classifier_free_guidance(u, c, w)));
    }
}

TEST_CASE("property: combine against the expanded oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> scale(0.0, 30.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Shape s{2, 3, 3};
        const Tensor u = random_tensor(s, rng), c = random_tensor(s, rng), st = random_tensor(s, rng);
        const double w1 = scale(rng), w2 = scale(rng);
        const Tensor out = combine(u, c, st, w1, w2);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double expected = u[i] + w1 * (c[i] - u[i]) + w2 * (st[i] - u[i]);
            REQUIRE(std::abs(out[i] - expected) < 1e-10 * (1.0 + std::abs(expected)));
        }
    }
}

TEST_CASE("classifier_free_guidance endpoints") {
    std::mt19937_64 rng(3);
    const Tensor u = random_tensor({4, 8, 8}, rng), c = random_tensor({4, 8, 8}, rng);
    CHECK(bitwise_equal(classifier_free_guidance(u, c, 0.0), u));
    CHECK(bitwise_equal(classifier_free_guidance(u, c, 1.0), c));
    CHECK_THROWS_AS(classifier_free_guidance(u, Tensor({4, 4, 4}), 2.0), ValidationError);
}

TEST_CASE("omega2_at: linear third ramp") {
    const GuidanceConfig cfg{15.0, 15.0, GuidanceRamp::linear_third};
    CHECK(omega2_at(cfg, 0, 100) == 5.0);
    CHECK(omega2_at(cfg, 99, 100) == 15.0);
    CHECK(omega2_at(cfg, 1, 3) == doctest::Approx(10.0).epsilon(1e-12));
    const GuidanceConfig abstract_cfg{15.0, 25.0, GuidanceRamp::linear_third};
    CHECK(omega2_at(abstract_cfg, 0, 50) == 25.0 / 3.0);
    CHECK(omega2_at(abstract_cfg, 49, 50) == 25.0);
    CHECK(omega2_at(cfg, 0, 1) == 15.0);
}

TEST_CASE("omega2_at: constant ramp") {
    const GuidanceConfig cfg{15.0, 7.0, GuidanceRamp::constant};
    for (int i = 0; i < 10; ++i) CHECK(omega2_at(cfg, i, 10) == 7.0);
}

TEST_CASE("property: omega2_at is nondecreasing and bounded") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const GuidanceConfig cfg{1.0, static_cast<double>(rng() % 40), GuidanceRamp::linear_third};
        const int n = 1 + static_cast<int>(rng() % 200);
        double prev = -1.0;
        for (int i = 0; i < n; ++i) {
            const double w = omega2_at(cfg, i, n);
            REQUIRE(w >= prev);
            REQUIRE(w >= cfg.omega2_max / 3.0);
            REQUIRE(w <= cfg.omega2_max);
            prev = w;
        }
    }
}

TEST_CASE("omega2_at and config validation errors") {
    const GuidanceConfig cfg;
    CHECK_THROWS_AS(omega2_at(cfg, 100, 100), ValidationError);
    CHECK_THROWS_AS(omega2_at(cfg, -1, 100), ValidationError);
    CHECK_THROWS_AS(omega2_at(cfg, 0, 0), ValidationError);
    CHECK_THROWS_AS((GuidanceConfig{-1.0}.validate()), ValidationError);
    CHECK_THROWS_AS((GuidanceConfig{1.0, std::nan("")}.validate()), ValidationError);
    CHECK(parse_guidance_ramp(to_string(GuidanceRamp::constant)) == GuidanceRamp::constant);
    CHECK(parse_guidance_ramp("linear_third") == GuidanceRamp::linear_third);
    CHECK_THROWS_AS(parse_guidance_ramp("cosine"), ValidationError);
}
