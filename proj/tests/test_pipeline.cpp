#include <doctest.h>

#include <random>

#include "m3s/error.hpp"
#include "m3s/pipeline.hpp"
#include "m3s/toy_backend.hpp"
#include "test_support.hpp"

using namespace m3s;
using m3s::testing::random_tensor;
using m3s::testing::soft_shadow_image;

namespace {

const LayerSelection kToyLayers{LayerPolicy::by_resolution, {{8, 8}}, {}};

std::vector<Tensor> two_references(const DenoiserBackend& b) {
    const Shape s = b.image_shape();
    return {soft_shadow_image(s.height, s.width, 5, 6, 3.0, 0.6, 3),
            soft_shadow_image(s.height, s.width, 11, 10, 2.0, 0.9, 12)};
}

RunConfig styled(int refs, int steps = 12) {
    RunConfig cfg = RunConfig::professional();
    cfg.prompt = "a sketch of a bicycle";
    for (int k = 0; k < refs; ++k) cfg.references.push_back("ref" + std::to_string(k) + ".png");
    cfg.injection.layers = kToyLayers;
    cfg.steps = steps;
    cfg.seed = 21;
    return cfg;
}

RunConfig vanilla(int steps = 12) {
    RunConfig cfg = styled(0, steps);
    cfg.injection.mode = InjectionMode::none;
    cfg.guidance.omega2_max = 0.0;
    cfg.blend.enabled = false;
    cfg.regulation.enabled = false;
    return cfg;
}

}  // namespace

TEST_CASE("brighten") {
    const Tensor img({1, 1, 5}, std::vector<double>{-1.0, 0.5, 0.7, 0.8, 1.0});
    const Tensor out = brighten(img, 0.7);
    CHECK(out[0] == -1.0);
    CHECK(out[1] == 0.5);
    CHECK(out[2] == 0.7);
    CHECK(out[3] == 1.0);
    CHECK(out[4] == 1.0);
    CHECK(bitwise_equal(brighten(out, 0.7), out));
    CHECK(bitwise_equal(brighten(img, 1.0), img));
    CHECK_THROWS_AS(brighten(img, -1.0), ValidationError);
    CHECK_THROWS_AS(brighten(img, 1.5), ValidationError);
}

TEST_CASE("initial_latent is seeded") {
    CHECK(bitwise_equal(initial_latent({4, 8, 8}, 3), initial_latent({4, 8, 8}, 3)));
    CHECK_FALSE(bitwise_equal(initial_latent({4, 8, 8}, 3), initial_latent({4, 8, 8}, 4)));
}

TEST_CASE("synthesize degenerates to vanilla CFG sampling bitwise") {
    const ToyBackend b;
    const NoiseSchedule s = default_schedule();
    for (double w : {1.0, 7.5, 15.0}) {
        RunConfig cfg = vanilla();
        cfg.guidance.omega1 = w;
        const SynthesisResult r = synthesize(cfg, b, {}, s);
        const LatentState v = sample_vanilla_cfg(b, s, cfg.prompt, cfg.steps, cfg.seed, w);
        CHECK(bitwise_equal(r.latent.data, v.data));
    }
}

TEST_CASE("synthesize is deterministic") {
    const ToyBackend b;
    const std::vector<Tensor> refs = two_references(b);
    const RunConfig cfg = styled(2);
    const SynthesisResult a = synthesize(cfg, b, refs);
    const SynthesisResult c = synthesize(cfg, b, refs);
    CHECK(bitwise_equal(a.image, c.image));
    CHECK(a.image.shape() == b.image_shape());
    for (double v : a.image.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("reference features change the output") {
    const ToyBackend b;
    const std::vector<Tensor> refs{two_references(b)[0]};
    RunConfig cfg = styled(1);
    cfg.blend.enabled = false;
    const SynthesisResult injected = synthesize(cfg, b, refs);
    cfg.injection.mode = InjectionMode::none;
    const SynthesisResult plain = synthesize(cfg, b, refs);
    CHECK(max_abs_diff(injected.latent.data, plain.latent.data) > 1e-6);
}

TEST_CASE("lambda = 1 with blending off matches the no-injection run") {
    const ToyBackend b;
    const std::vector<Tensor> refs = two_references(b);
    RunConfig cfg = styled(2, 20);
    cfg.blend.enabled = false;
    cfg.injection.lambda = 1.0;
    const SynthesisResult injected = synthesize(cfg, b, refs);
    cfg.injection.mode = InjectionMode::none;
    const SynthesisResult plain = synthesize(cfg, b, refs);
    CHECK(max_abs_diff(injected.latent.data, plain.latent.data) < 1e-5);
}

TEST_CASE("eta extremes select different styles") {
    const ToyBackend b;
    const std::vector<Tensor> refs = two_references(b);
    RunConfig cfg = styled(2);
    cfg.blend.eta = {1.0, 0.0};
    const SynthesisResult first = synthesize(cfg, b, refs);
    cfg.blend.eta = {0.0, 1.0};
    const SynthesisResult second = synthesize(cfg, b, refs);
    CHECK(max_abs_diff(first.latent.data, second.latent.data) > 1e-6);
}

TEST_CASE("eta = (1, 0) ignores the second reference's trajectory") {
    const ToyBackend b;
    const NoiseSchedule s = default_schedule();
    const std::vector<Tensor> refs = two_references(b);
    RunConfig cfg = styled(2);
    cfg.blend.eta = {1.0, 0.0};
    const PreparedReferences prepared = prepare_references(cfg, b, refs, s);
    PreparedReferences altered = prepared;
    std::mt19937_64 rng(5);
    for (auto& [t, z] : altered.bundles[1].trajectory) z.data = random_tensor(z.data.shape(), rng, 3.0);
    CHECK(bitwise_equal(synthesize(cfg, b, s, prepared).image, synthesize(cfg, b, s, altered).image));
    cfg.blend.eta = {0.5, 0.5};
    CHECK_FALSE(bitwise_equal(synthesize(cfg, b, s, prepared).image, synthesize(cfg, b, s, altered).image));
}

TEST_CASE("trace records every step") {
    const ToyBackend b;
    const std::vector<Tensor> refs{two_references(b)[0]};
    RunConfig cfg = styled(1, 9);
    cfg.trace = true;
    cfg.regulation = {true, 60.0, 0.001, {0.5, 1.0}};
    const SynthesisResult r = synthesize(cfg, b, refs);
    REQUIRE(r.trace.size() == 9);
    CHECK(r.trace.front().omega2 == cfg.guidance.omega2_max / 3.0);
    CHECK(r.trace.back().omega2 == cfg.guidance.omega2_max);
    for (const StepRecord& rec : r.trace) CHECK(rec.regulated == (rec.index >= 5));
    CHECK(r.trace[3].timestep == timestep_grid(default_schedule(), 9)[3]);
    cfg.trace = false;
    CHECK(synthesize(cfg, b, refs).trace.empty());
}

TEST_CASE("adain_qk_concat runs with an in-process cache") {
    const ToyBackend b;
    const std::vector<Tensor> refs{two_references(b)[1]};
    RunConfig cfg = styled(1, 6);
    cfg.injection.mode = InjectionMode::adain_qk_concat;
    CHECK(synthesize(cfg, b, refs).image.all_finite());
}

TEST_CASE("synthesize errors") {
    const ToyBackend b;
    const NoiseSchedule s = default_schedule();
    const std::vector<Tensor> refs = two_references(b);
    SUBCASE("reference count mismatch") { CHECK_THROWS_AS(synthesize(styled(2), b, std::span<const Tensor>(refs.data(), 1)), ValidationError); }
    SUBCASE("references required for injection") {
        RunConfig cfg = styled(0);
        CHECK_THROWS_AS(synthesize(cfg, b, {}), ValidationError);
    }
    SUBCASE("prepared grid mismatch") {
        const PreparedReferences p = prepare_references(styled(2, 6), b, refs, s);
        CHECK_THROWS_AS(synthesize(styled(2, 8), b, s, p), ValidationError);
    }
    SUBCASE("missing cache entry") {
        PreparedReferences p = prepare_references(styled(2, 6), b, refs, s);
        p.cache = FeatureCache{};
        CHECK_THROWS(synthesize(styled(2, 6), b, s, p));
    }
    SUBCASE("missing reference file") {
        RunConfig cfg = styled(1);
        cfg.references = {"/nonexistent/ref.png"};
        CHECK_THROWS_AS(synthesize(cfg, b), ValidationError);
    }
}

TEST_CASE("sweep: panel counts and order") {
    const ToyBackend b;
    const std::vector<Tensor> refs = two_references(b);
    const std::vector<Tensor> first_only{refs[0]};
    SUBCASE("lambda") {
        const RunConfig base = styled(1, 4);
        const std::vector<double> values{0.25, 0.0, 1.0, 0.05, 0.15, 0.1, 0.2};
        const SweepResult r = sweep(base, SweepAxis::lambda, values, b, first_only, 3);
        REQUIRE(r.panels.size() == 7);
        CHECK(r.values == std::vector<double>{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 1.0});
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(r.metadata[i]["index"] == i);
            CHECK(r.metadata[i]["value"] == r.values[i]);
            CHECK(r.panels[i].config_echo.injection.lambda == r.values[i]);
        }
        CHECK(r.contact_sheet.shape().width > 7 * b.image_shape().width);
    }
    SUBCASE("eta") {
        const SweepResult r = sweep(styled(2, 4), SweepAxis::eta, {0.0, 0.25, 0.5, 0.75, 1.0}, b, refs, 2);
        REQUIRE(r.panels.size() == 5);
        CHECK(r.panels[1].config_echo.blend.eta == std::vector<double>{0.25, 0.75});
    }
    SUBCASE("single value equals one synthesize call") {
        const RunConfig base = styled(1, 4);
        const SweepResult r = sweep(base, SweepAxis::lambda, {0.3}, b, first_only);
        RunConfig cell = base;
        cell.injection.lambda = 0.3;
        CHECK(bitwise_equal(r.panels[0].image, synthesize(cell, b, first_only).image));
    }
    SUBCASE("threads do not change results") {
        const RunConfig base = styled(1, 4);
        const SweepResult serial = sweep(base, SweepAxis::omega2, {5, 10, 20}, b, first_only, 1);
        const SweepResult parallel = sweep(base, SweepAxis::omega2, {5, 10, 20}, b, first_only, 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(bitwise_equal(serial.panels[i].image, parallel.panels[i].image));
    }
    SUBCASE("invalid values fail before running") {
        CHECK_THROWS_AS(sweep(styled(1, 4), SweepAxis::lambda, {0.1, 1.5}, b, first_only), ValidationError);
        CHECK_THROWS_AS(sweep(styled(1, 4), SweepAxis::eta, {0.5}, b, first_only), ValidationError);
        CHECK_THROWS_AS(sweep(styled(2, 4), SweepAxis::eta, {-0.5}, b, refs), ValidationError);
        CHECK_THROWS_AS(sweep(styled(1, 4), SweepAxis::lambda, {}, b, first_only), ValidationError);
    }
    CHECK(parse_sweep_axis("gamma") == SweepAxis::gamma);
    CHECK_THROWS_AS(parse_sweep_axis("beta"), ValidationError);
}
