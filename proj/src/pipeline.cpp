#include "m3s/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "m3s/error.hpp"
#include "m3s/guidance.hpp"
#include "m3s/image_io.hpp"
#include "m3s/latent_modulation.hpp"
#include "m3s/regulation.hpp"

namespace m3s {

std::optional<Matrix> InjectionHooks::on_self_attention(const LayerDescriptor& layer, const AttentionFeatures& f) {
    if (cfg_.mode == InjectionMode::none || !cfg_.layer_ids.contains(layer.layer_id)) return std::nullopt;
    const std::vector<ReferenceFeatures> refs = cache_.references(layer.layer_id, timestep_);
    return multi_head_injected_attention(f, refs, cfg_.mode, cfg_.lambda, layer.num_heads);
}

Tensor brighten(const Tensor& image, double threshold) {
    if (!(threshold > -1.0 && threshold <= 1.0)) throw ValidationError("brighten_threshold", "must lie in (-1, 1]");
    Tensor out = image;
    for (double& v : out.values()) {
        if (v > threshold) v = 1.0;
    }
    return out;
}

Tensor initial_latent(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor z(shape);
    for (double& v : z.values()) v = dist(rng);
    return z;
}

std::vector<Tensor> load_reference_images(const RunConfig& cfg) {
    std::vector<Tensor> out;
    for (const auto& p : cfg.reference_paths()) {
        if (!std::filesystem::exists(p)) throw ValidationError("references", "no such file " + p.string());
        out.push_back(read_png_gray(p));
    }
    return out;
}

PreparedReferences prepare_references(const RunConfig& cfg, const DenoiserBackend& backend,
                                      std::span<const Tensor> images, const NoiseSchedule& sched) {
    PreparedReferences prep;
    prep.grid = timestep_grid(sched, cfg.steps);
    prep.layer_ids = select_layers(backend, cfg.injection.layers);
    for (std::size_t k = 0; k < images.size(); ++k) {
        ReferenceBundle b = invert_reference(images[k], backend, sched, prep.grid);
        b.cache_index = static_cast<int>(k);
        prep.bundles.push_back(std::move(b));
    }
    if (!prep.bundles.empty() && !prep.layer_ids.empty() && cfg.injection.mode != InjectionMode::none) {
        prep.cache = build_feature_cache(prep.bundles, backend, prep.layer_ids, prep.grid,
                                         cfg.injection.mode == InjectionMode::adain_qk_concat);
    }
    return prep;
}

SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend, const NoiseSchedule& sched,
                           const PreparedReferences& prepared) {
    cfg.validate();
    if (prepared.bundles.size() != cfg.references.size()) {
        throw ValidationError("references", "prepared " + std::to_string(prepared.bundles.size()) +
                                                " references, config lists " + std::to_string(cfg.references.size()));
    }
    const TimestepGrid& grid = prepared.grid;
    if (grid.size() != cfg.steps) throw ValidationError("steps", "prepared references use a different step count");

    const Conditioning null = backend.null_conditioning();
    const Conditioning text = backend.text_conditioning(cfg.prompt);
    const InjectionConfig injection{cfg.injection.lambda, cfg.injection.mode, prepared.layer_ids};
    const bool injecting = !prepared.bundles.empty() && injection.mode != InjectionMode::none &&
                           !injection.layer_ids.empty();
    const bool blending = cfg.blend_active();
    const StyleBlendConfig blend = blending ? cfg.blend_config(prepared.bundles.size()) : StyleBlendConfig{};

    SynthesisResult result;
    result.config_echo = cfg;
    LatentState z{initial_latent(backend.latent_shape(), cfg.seed), grid[0], LatentRole::target};

    for (int i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        StepRecord rec{i, t, 0.0, false, 0.0, 0.0};

        if (blending && blend.active_at(i, grid.size())) {
            std::vector<LatentState> refs;
            refs.reserve(prepared.bundles.size());
            for (const ReferenceBundle& b : prepared.bundles) refs.push_back(b.at(t));
            z = joint_adain(z, refs, blend);
        }

        const Tensor eps_uncond = backend.predict_noise(z.data, t, null);
        Tensor eps_content;
        Tensor eps_style;
        if (injecting) {
            InjectionHooks content_hooks(prepared.cache, t, injection);
            InjectionHooks style_hooks(prepared.cache, t, injection);
            eps_content = backend.predict_noise(z.data, t, text, &content_hooks);
            eps_style = backend.predict_noise(z.data, t, null, &style_hooks);
        } else {
            eps_content = backend.predict_noise(z.data, t, text);
            eps_style = eps_uncond;
        }

        rec.omega2 = omega2_at(cfg.guidance, i, grid.size());
        const Tensor eps = combine(eps_uncond, eps_content, eps_style, cfg.guidance.omega1, rec.omega2);

        LatentState z0 = tweedie_estimate(z, eps, sched);
        if (cfg.regulation.active_at(i, grid.size())) {
            RegulationOutcome reg = regulate_with_report(z0, backend, cfg.regulation);
            rec.regulated = true;
            rec.edge_loss_before = reg.edge_loss_before;
            rec.edge_loss_after = reg.edge_loss_after;
            z0 = std::move(reg.latent);
        }
        z = ddim_step_from_estimate(z0, eps, grid.next_lower(i), sched);
        if (!z.data.all_finite()) {
            throw std::runtime_error("latent became non-finite at step " + std::to_string(i));
        }
        if (cfg.trace) result.trace.push_back(rec);
    }

    z.role = LatentRole::z0_estimate;
    Tensor image = backend.decode(z);
    for (double& v : image.values()) v = std::clamp(v, -1.0, 1.0);
    result.image = brighten(image, cfg.brighten_threshold);
    result.latent = std::move(z);
    return result;
}

SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend,
                           std::span<const Tensor> reference_images, const NoiseSchedule& sched) {
    cfg.validate();
    if (reference_images.size() != cfg.references.size()) {
        throw ValidationError("references", "config lists " + std::to_string(cfg.references.size()) +
                                                " references but " + std::to_string(reference_images.size()) +
                                                " images were supplied");
    }
    return synthesize(cfg, backend, sched, prepare_references(cfg, backend, reference_images, sched));
}

SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend) {
    cfg.validate();
    const std::vector<Tensor> images = load_reference_images(cfg);
    return synthesize(cfg, backend, images);
}

LatentState sample_vanilla_cfg(const DenoiserBackend& backend, const NoiseSchedule& sched, const std::string& prompt,
                               int steps, std::uint64_t seed, double guidance_scale) {
    const TimestepGrid grid = timestep_grid(sched, steps);
    const Conditioning null = backend.null_conditioning();
    const Conditioning text = backend.text_conditioning(prompt);
    LatentState z{initial_latent(backend.latent_shape(), seed), grid[0], LatentRole::target};
    for (int i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        const Tensor eps_uncond = backend.predict_noise(z.data, t, null);
        const Tensor eps_cond = backend.predict_noise(z.data, t, text);
        z = ddim_step(z, classifier_free_guidance(eps_uncond, eps_cond, guidance_scale), t, grid.next_lower(i), sched);
    }
    z.role = LatentRole::z0_estimate;
    return z;
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::lambda: return "lambda";
        case SweepAxis::eta: return "eta";
        case SweepAxis::omega1: return "omega1";
        case SweepAxis::omega2: return "omega2";
        case SweepAxis::gamma: return "gamma";
    }
    return "unknown";
}

SweepAxis parse_sweep_axis(const std::string& s) {
    for (SweepAxis a : {SweepAxis::lambda, SweepAxis::eta, SweepAxis::omega1, SweepAxis::omega2, SweepAxis::gamma}) {
        if (to_string(a) == s) return a;
    }
    throw ValidationError("--axis", "unknown sweep axis '" + s + "'");
}

RunConfig with_axis_value(const RunConfig& base, SweepAxis axis, double value) {
    RunConfig cfg = base;
    switch (axis) {
        case SweepAxis::lambda: cfg.injection.lambda = value; break;
        case SweepAxis::eta:
            if (base.references.size() != 2) {
                throw ValidationError("references", "an eta sweep needs exactly two references");
            }
            if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("blend.eta", "sweep values must lie in [0, 1]");
            cfg.blend.enabled = true;
            cfg.blend.eta = {value, 1.0 - value};
            break;
        case SweepAxis::omega1: cfg.guidance.omega1 = value; break;
        case SweepAxis::omega2: cfg.guidance.omega2_max = value; break;
        case SweepAxis::gamma:
            cfg.regulation.enabled = true;
            cfg.regulation.gamma = value;
            break;
    }
    return cfg;
}

SweepResult sweep(const RunConfig& base, SweepAxis axis, std::vector<double> values, const DenoiserBackend& backend,
                  std::span<const Tensor> reference_images, int jobs, const NoiseSchedule& sched) {
    if (values.empty()) throw ValidationError("--values", "sweep needs at least one value");
    std::stable_sort(values.begin(), values.end());
    std::vector<RunConfig> cells;
    cells.reserve(values.size());
    for (double v : values) {
        cells.push_back(with_axis_value(base, axis, v));
        cells.back().validate();
    }
    if (reference_images.size() != base.references.size()) {
        throw ValidationError("references", "reference image count does not match the config");
    }

    // None of the sweepable axes changes reference inversion or caching.
    const PreparedReferences prepared = prepare_references(base, backend, reference_images, sched);

    SweepResult result{axis, values, std::vector<SynthesisResult>(cells.size()), {}, nlohmann::json::array()};
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                result.panels[i] = synthesize(cells[i], backend, sched, prepared);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int threads = std::clamp(jobs, 1, static_cast<int>(cells.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<Tensor> images;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        images.push_back(result.panels[i].image);
        result.metadata.push_back({{"index", i}, {"axis", to_string(axis)}, {"value", values[i]},
                                   {"config", to_json(cells[i])}});
    }
    result.contact_sheet = contact_sheet(images);
    return result;
}

}  // namespace m3s
