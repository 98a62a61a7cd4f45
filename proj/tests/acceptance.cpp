// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "m3s/attention.hpp"
#include "m3s/evaluation.hpp"
#include "m3s/feature_cache.hpp"
#include "m3s/guidance.hpp"
#include "m3s/image_io.hpp"
#include "m3s/latent_modulation.hpp"
#include "m3s/pipeline.hpp"
#include "m3s/reference_prep.hpp"
#include "m3s/regulation.hpp"
#include "m3s/scheduler.hpp"
#include "m3s/toy_backend.hpp"
#include "test_support.hpp"

using namespace m3s;
using m3s::testing::random_matrix;
using m3s::testing::random_tensor;
using m3s::testing::soft_shadow_image;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Accumulates failed checks; the first failure message is kept.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && pass_) {
            pass_ = false;
            first_ = what;
        }
    }
    Outcome done(const std::string& summary) const { return {pass_, pass_ ? summary : first_}; }

private:
    bool pass_ = true;
    std::string first_;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

const LayerSelection kToyLayers{LayerPolicy::by_resolution, {{8, 8}}, {}};

std::vector<Tensor> reference_images(const DenoiserBackend& b) {
    const Shape s = b.image_shape();
    return {soft_shadow_image(s.height, s.width, 5, 6, 3.0, 0.6, 3),
            soft_shadow_image(s.height, s.width, 11, 10, 2.0, 0.9, 12)};
}

RunConfig styled_config(int refs, int steps) {
    RunConfig cfg = RunConfig::professional();
    cfg.prompt = "a sketch of a lighthouse";
    for (int k = 0; k < refs; ++k) cfg.references.push_back("ref" + std::to_string(k) + ".png");
    cfg.injection.layers = kToyLayers;
    cfg.steps = steps;
    cfg.seed = 1234;
    return cfg;
}

Outcome duplication_identity() {
    Checker c;
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 64);
        const int d = 1 + static_cast<int>(rng() % 16);
        const int refs = 1 + static_cast<int>(rng() % 3);
        const AttentionFeatures tgt{random_matrix(n, d, rng, 2.0), random_matrix(n, d, rng, 2.0), random_matrix(n, d, rng)};
        std::vector<ReferenceFeatures> r;
        for (int k = 0; k < refs; ++k) r.push_back({random_matrix(n, d, rng, 2.0), random_matrix(n, d, rng), std::nullopt});
        const Matrix got = injected_attention(tgt, r, InjectionMode::concat_smoothed, 1.0);
        const double err = (got - standard_attention(tgt)).cwiseAbs().maxCoeff();
        worst = std::max(worst, err);
        c.expect(err < 1e-6, "attention instance " + std::to_string(trial) + " off by " + fmt(err));
    }

    const ToyBackend b;
    const std::vector<Tensor> images = reference_images(b);
    RunConfig cfg = styled_config(2, 30);
    cfg.blend.enabled = false;
    cfg.injection.lambda = 1.0;
    const SynthesisResult injected = synthesize(cfg, b, images);
    cfg.injection.mode = InjectionMode::none;
    const SynthesisResult plain = synthesize(cfg, b, images);
    const double pipe_err = max_abs_diff(injected.latent.data, plain.latent.data);
    c.expect(pipe_err < 1e-5, "pipeline off by " + fmt(pipe_err));
    return c.done("100 instances max err " + fmt(worst) + ", pipeline " + fmt(pipe_err));
}

Outcome cfg_degeneration() {
    Checker c;
    std::mt19937_64 rng(202);
    for (int trial = 0; trial < 50; ++trial) {
        const Shape s{4, 8, 8};
        const Tensor u = random_tensor(s, rng), k = random_tensor(s, rng), st = random_tensor(s, rng);
        const double w = static_cast<double>(rng() % 200) / 8.0;
        c.expect(bitwise_equal(combine(u, k, st, w, 0.0), classifier_free_guidance(u, k, w)),
                 "combine differs from CFG at omega1 = " + std::to_string(w));
    }
    const ToyBackend b;
    const NoiseSchedule sched = default_schedule();
    RunConfig cfg = styled_config(0, 50);
    cfg.injection.mode = InjectionMode::none;
    cfg.guidance.omega2_max = 0.0;
    cfg.blend.enabled = false;
    cfg.regulation.enabled = false;
    const SynthesisResult r = synthesize(cfg, b, {}, sched);
    const LatentState v = sample_vanilla_cfg(b, sched, cfg.prompt, cfg.steps, cfg.seed, cfg.guidance.omega1);
    c.expect(bitwise_equal(r.latent.data, v.data),
             "pipeline differs from vanilla sampler by " + fmt(max_abs_diff(r.latent.data, v.data)));
    return c.done("combine and 50-step pipeline bitwise equal to vanilla CFG");
}

std::pair<double, double> stats_oracle(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()) + kAdainEpsilon)};
}

Outcome adain_statistics() {
    Checker c;
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> scale(0.5, 2.0), shift(-2.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Shape s{4, 8, 8};
        const Tensor x = random_tensor(s, rng, scale(rng), shift(rng));
        const Tensor y = random_tensor(s, rng, scale(rng), shift(rng));
        const Tensor out = adain(x, y);
        for (int ch = 0; ch < s.channels; ++ch) {
            const auto [mo, so] = stats_oracle(out.channel(ch));
            const auto [my, sy] = stats_oracle(y.channel(ch));
            worst = std::max({worst, std::abs(mo - my), std::abs(so - sy)});
        }
        const double self = max_abs_diff(adain(x, x), x);
        c.expect(self < 1e-9, "adain(x, x) differs from x by " + fmt(self));
    }
    c.expect(worst < 1e-5, "statistics off by " + fmt(worst));

    const LatentState tar{random_tensor({4, 8, 8}, rng), 400};
    const std::vector<LatentState> refs{{random_tensor({4, 8, 8}, rng, 1.5, 0.5), 400},
                                        {random_tensor({4, 8, 8}, rng, 0.7, -0.5), 400}};
    c.expect(bitwise_equal(joint_adain(tar, refs, {{1.0, 0.0}}).data, adain(tar.data, refs[0].data)),
             "joint_adain at (1, 0) differs from adain");
    c.expect(bitwise_equal(joint_adain(tar, refs, {{0.0, 1.0}}).data, adain(tar.data, refs[1].data)),
             "joint_adain at (0, 1) differs from adain");
    return c.done("max stat err " + fmt(worst) + ", boundaries bitwise");
}

Outcome inversion_round_trip() {
    Checker c;
    const ToyBackend b;
    const NoiseSchedule sched = default_schedule();
    const TimestepGrid grid = timestep_grid(sched, 100);
    double worst = 0.0;
    for (const Tensor& img : reference_images(b)) {
        const ReferenceBundle bundle = invert_reference(img, b, sched, grid);
        const double err = max_abs_diff(resample_with_stored_noise(bundle, sched, grid).data,
                                        bundle.at(kCleanTimestep).data);
        worst = std::max(worst, err);
    }
    c.expect(worst < 1e-4, "round trip off by " + fmt(worst));

    // Re-sampling with fresh model calls, after fixed-point refined inversion.
    double fresh_worst = 0.0;
    for (const Tensor& img : reference_images(b)) {
        const ReferenceBundle bundle = invert_reference(img, b, sched, grid, {5});
        LatentState z = bundle.at(grid[0]);
        for (int i = 0; i < grid.size(); ++i) {
            const Tensor eps = b.predict_noise(z.data, grid[i], b.null_conditioning());
            z = ddim_step(z, eps, grid[i], grid.next_lower(i), sched);
        }
        fresh_worst = std::max(fresh_worst, max_abs_diff(z.data, bundle.at(kCleanTimestep).data));
    }
    c.expect(fresh_worst < 1e-4, "fresh-prediction round trip off by " + fmt(fresh_worst));

    std::mt19937_64 rng(404);
    double step_worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int i = static_cast<int>(rng() % 99);
        const int t = grid[i + 1];
        const int t_next = grid[i];
        const LatentState z{random_tensor(b.latent_shape(), rng), t};
        const Tensor eps = b.predict_noise(z.data, t, b.null_conditioning());
        const LatentState back = ddim_step(ddim_invert_step(z, eps, t, t_next, sched), eps, t_next, t, sched);
        step_worst = std::max(step_worst, max_abs_diff(back.data, z.data));
    }
    c.expect(step_worst < 1e-6, "single step off by " + fmt(step_worst));
    return c.done("100-step grid err " + fmt(worst) + " (fresh predictions " + fmt(fresh_worst) +
                  "), single step " + fmt(step_worst));
}

Outcome tweedie_exactness() {
    Checker c;
    const NoiseSchedule sched = default_schedule();
    std::mt19937_64 rng(505);
    double worst = 0.0;
    for (int n : {100, 1000}) {
        const TimestepGrid grid = timestep_grid(sched, n);
        for (int t : grid.steps) {
            const LatentState z0{random_tensor({4, 8, 8}, rng), kCleanTimestep};
            const Tensor eps = random_tensor({4, 8, 8}, rng);
            const double err = max_abs_diff(tweedie_estimate(add_noise(z0, eps, t, sched), eps, sched).data, z0.data);
            worst = std::max(worst, err);
            c.expect(err < 1e-6, "timestep " + std::to_string(t) + " off by " + fmt(err));
        }
    }
    return c.done("every timestep of the 100- and 1000-step grids, max err " + fmt(worst));
}

Outcome regulation_descent() {
    Checker c;
    const ToyBackend b;
    const Shape is = b.image_shape();
    const RegulationConfig cfg{true, 60.0, 0.001};
    double min_gain = INFINITY;
    for (int k = 0; k < 5; ++k) {
        const Tensor img = soft_shadow_image(is.height, is.width, 4.0 + 2.0 * k, 10.0 - k, 2.0 + 0.5 * k,
                                             0.2 + 0.1 * k, 3 + 2 * k);
        const LatentState z = b.encode(img);
        const LatentState after = regulate(z, b, cfg);
        const SobelGradients g0 = sobel_gradients(b.decode(z));
        const SobelGradients g1 = sobel_gradients(b.decode(after));
        const double before_loss = edge_loss(g0.gx, g0.gy);
        const double after_loss = edge_loss(g1.gx, g1.gy);
        min_gain = std::min(min_gain, before_loss - after_loss);
        c.expect(after_loss <= before_loss + 1e-9,
                 "image " + std::to_string(k) + " edge loss rose from " + fmt(before_loss) + " to " + fmt(after_loss));

        const SobelGradients clamped = clamp_gradients(g0, cfg.clamp);
        for (std::size_t i = 0; i < clamped.gx.size(); ++i) {
            c.expect(std::abs(clamped.gx[i]) <= cfg.clamp && std::abs(clamped.gy[i]) <= cfg.clamp,
                     "clamped gradient exceeds the bound on image " + std::to_string(k));
        }
        c.expect(bitwise_equal(regulate(z, b, {true, 0.0, 0.001}).data, z.data),
                 "gamma = 0 changed image " + std::to_string(k));
    }
    return c.done("5 images, smallest loss decrease " + fmt(min_gain));
}

Outcome omega2_ramp() {
    Checker c;
    for (double w : {15.0, 25.0}) {
        const GuidanceConfig cfg{15.0, w, GuidanceRamp::linear_third};
        for (int n : {2, 50, 100}) {
            c.expect(omega2_at(cfg, 0, n) == w / 3.0, "first step of omega2 = " + fmt(w));
            c.expect(omega2_at(cfg, n - 1, n) == w, "last step of omega2 = " + fmt(w));
        }
    }
    return c.done("omega2/3 at step 0 and omega2 at the last step, exactly, for 15 and 25");
}

Outcome brightening() {
    Checker c;
    Tensor grid({1, 1, 41});
    for (int k = 0; k <= 40; ++k) grid[static_cast<std::size_t>(k)] = (k - 20) / 20.0;
    const Tensor out = brighten(grid, 0.7);
    for (int k = 0; k <= 40; ++k) {
        // 0.7 sits at k = 34; only strictly larger pixels turn white.
        const double expected = k > 34 ? 1.0 : grid[static_cast<std::size_t>(k)];
        c.expect(out[static_cast<std::size_t>(k)] == expected, "pixel " + fmt(grid[static_cast<std::size_t>(k)]));
    }
    c.expect(bitwise_equal(brighten(out, 0.7), out), "not idempotent");
    return c.done("41-pixel grid over [-1, 1] matches, idempotent");
}

Outcome determinism() {
    Checker c;
    const ToyBackend b;
    const std::vector<Tensor> images = reference_images(b);
    const RunConfig cfg = styled_config(2, 25);
    const std::vector<std::uint8_t> first = encode_png(synthesize(cfg, b, images).image);
    const std::vector<std::uint8_t> second = encode_png(synthesize(cfg, b, images).image);
    c.expect(first == second, "PNG bytes differ between runs");

    const PreparedReferences prep = prepare_references(cfg, b, images, default_schedule());
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_feature_cache(buf, prep.cache);
    const std::string bytes = buf.str();
    const FeatureCache back = read_feature_cache(buf);
    std::ostringstream again(std::ios::binary);
    write_feature_cache(again, back);
    c.expect(back == prep.cache, "cache contents differ after reading back");
    c.expect(again.str() == bytes, "cache bytes differ after re-serializing");
    return c.done("identical PNGs (" + std::to_string(first.size()) + " bytes), cache of " +
                  std::to_string(prep.cache.entry_count()) + " entries round-trips");
}

Outcome sweep_structure() {
    Checker c;
    const ToyBackend b;
    const std::vector<Tensor> images = reference_images(b);
    auto check = [&](SweepAxis axis, const RunConfig& base, std::span<const Tensor> refs,
                     const std::vector<double>& values) {
        const SweepResult r = sweep(base, axis, values, b, refs, 4);
        c.expect(r.panels.size() == values.size(), to_string(axis) + " panel count " + std::to_string(r.panels.size()));
        c.expect(r.metadata.size() == values.size(), to_string(axis) + " metadata count");
        for (std::size_t i = 0; i < r.metadata.size(); ++i) {
            c.expect(r.metadata[i]["index"] == i && r.metadata[i]["value"] == values[i],
                     to_string(axis) + " metadata out of order at " + std::to_string(i));
        }
    };
    check(SweepAxis::lambda, styled_config(1, 5), std::span<const Tensor>(images.data(), 1),
          {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 1.0});
    check(SweepAxis::eta, styled_config(2, 5), images, {0.0, 0.25, 0.5, 0.75, 1.0});
    return c.done("lambda sweep 7 panels, eta sweep 5 panels, metadata ordered");
}

Outcome metric_sanity() {
    Checker c;
    const RandomConvExtractor fx(17);
    const Tensor a = soft_shadow_image(16, 16, 6, 6, 3, 0.7, 4);
    const Tensor bimg = soft_shadow_image(16, 16, 10, 9, 2, 0.4, 11);
    c.expect(gram_distance(a, a, fx) == 0.0, "gram_distance(x, x) != 0");
    c.expect(std::abs(gram_distance(a, bimg, fx) - gram_distance(bimg, a, fx)) < 1e-12, "gram_distance asymmetric");
    c.expect(gram_matrix(Tensor({1, 2, 2}, 1.0))(0, 0) == 1.0, "ones map Gram != [[1]]");

    // Two channels [1, 2] and [3, 4] against [0, 1] and [-1, 2]; Grams are divided by c h w = 4.
    const Matrix gx = gram_matrix(Tensor({2, 1, 2}, std::vector<double>{1, 2, 3, 4}));
    const Matrix gy = gram_matrix(Tensor({2, 1, 2}, std::vector<double>{0, 1, -1, 2}));
    const double d00 = 1.0, d01 = 2.25, d11 = 5.0;
    const double hand = (d00 * d00 + 2 * d01 * d01 + d11 * d11) / 4.0;
    c.expect(std::abs((gx - gy).array().square().mean() - hand) < 1e-12, "hand Gram case mismatch");

    c.expect(std::abs(embedding_similarity(a, a, fx) - 1.0) < 1e-6, "self similarity != 1");
    const std::vector<double> e{0.5, -1.0, 2.0};
    c.expect(std::abs(cosine_similarity(e, {-0.5, 1.0, -2.0}) + 1.0) < 1e-12, "negation != -1");
    c.expect(cosine_similarity({1.0, 0.0}, {0.0, 3.0}) == 0.0, "orthogonal != 0");
    return c.done("identity, symmetry, hand case, cosine endpoints");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"duplication identity", duplication_identity},
        {"CFG degeneration", cfg_degeneration},
        {"AdaIN statistics", adain_statistics},
        {"inversion round trip", inversion_round_trip},
        {"Tweedie exactness", tweedie_exactness},
        {"regulation descent", regulation_descent},
        {"omega2 ramp", omega2_ramp},
        {"brightening", brightening},
        {"determinism", determinism},
        {"sweep structure", sweep_structure},
        {"metric sanity", metric_sanity},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("%s %2zu %-22s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
