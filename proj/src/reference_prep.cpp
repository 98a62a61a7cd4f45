#include "m3s/reference_prep.hpp"

#include <stdexcept>

#include "m3s/error.hpp"
#include "m3s/image_io.hpp"

namespace m3s {

const LatentState& ReferenceBundle::at(int timestep) const {
    const auto it = trajectory.find(timestep);
    if (it == trajectory.end()) {
        throw std::runtime_error("reference trajectory has no latent at timestep " + std::to_string(timestep));
    }
    return it->second;
}

ReferenceBundle invert_latent(const LatentState& z0, const DenoiserBackend& backend, const NoiseSchedule& sched,
                              const TimestepGrid& grid, const InversionOptions& options) {
    if (z0.data.shape() != backend.latent_shape()) {
        throw ValidationError("reference", "latent shape " + z0.data.shape().str() + " does not match backend " +
                                               backend.latent_shape().str());
    }
    const Conditioning null = backend.null_conditioning();
    ReferenceBundle bundle;
    LatentState current = z0;
    current.timestep = kCleanTimestep;
    current.role = LatentRole::reference;
    bundle.trajectory.emplace(kCleanTimestep, current);

    for (int i = grid.size() - 1; i >= 0; --i) {
        const int t_next = grid[i];
        const int t = current.timestep;
        Tensor eps = backend.predict_noise(current.data, model_timestep(t), null);
        LatentState next = ddim_invert_step(current, eps, t, t_next, sched);
        for (int it = 0; it < options.fixed_point_iterations; ++it) {
            eps = backend.predict_noise(next.data, t_next, null);
            next = ddim_invert_step(current, eps, t, t_next, sched);
        }
        next.role = LatentRole::reference;
        bundle.inversion_noise.emplace(t_next, std::move(eps));
        bundle.trajectory.emplace(t_next, next);
        current = std::move(next);
    }
    return bundle;
}

ReferenceBundle invert_reference(const Tensor& image, const DenoiserBackend& backend, const NoiseSchedule& sched,
                                 const TimestepGrid& grid, const InversionOptions& options) {
    const Shape target = backend.image_shape();
    Tensor img = image;
    if (img.shape().channels != target.channels) {
        throw ValidationError("reference", "image has " + std::to_string(img.shape().channels) +
                                               " channels, backend expects " + std::to_string(target.channels));
    }
    if (img.shape() != target) img = resize_image(img, target.height, target.width);
    ReferenceBundle bundle = invert_latent(backend.encode(img), backend, sched, grid, options);
    bundle.image = std::move(img);
    return bundle;
}

LatentState resample_with_stored_noise(const ReferenceBundle& bundle, const NoiseSchedule& sched,
                                       const TimestepGrid& grid) {
    LatentState z = bundle.at(grid[0]);
    for (int i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        const auto eps = bundle.inversion_noise.find(t);
        if (eps == bundle.inversion_noise.end()) {
            throw std::runtime_error("no stored inversion noise at timestep " + std::to_string(t));
        }
        z = ddim_step(z, eps->second, t, grid.next_lower(i), sched);
    }
    return z;
}

std::optional<Matrix> CaptureHooks::on_self_attention(const LayerDescriptor& layer, const AttentionFeatures& f) {
    if (layer_ids_.contains(layer.layer_id)) captured_[layer.layer_id] = f;
    return std::nullopt;
}

FeatureCache build_feature_cache(std::span<const ReferenceBundle> bundles, const DenoiserBackend& backend,
                                 const std::set<int>& layer_ids, const TimestepGrid& grid, bool capture_queries) {
    if (bundles.empty()) throw ValidationError("references", "feature cache needs at least one reference");
    const Conditioning null = backend.null_conditioning();
    FeatureCache cache;
    for (int i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        for (const ReferenceBundle& b : bundles) {
            CaptureHooks hooks(layer_ids);
            backend.predict_noise(b.at(t).data, t, null, &hooks);
            for (int id : layer_ids) {
                const auto it = hooks.captured().find(id);
                if (it == hooks.captured().end()) {
                    throw ValidationError("injection.layers", "backend never reached layer " + std::to_string(id));
                }
                CacheEntry e{FloatMatrix::from(it->second.k), FloatMatrix::from(it->second.v), std::nullopt};
                if (capture_queries) e.q = FloatMatrix::from(it->second.q);
                cache.put(id, t, b.cache_index, std::move(e));
            }
        }
    }
    return cache;
}

}  // namespace m3s
