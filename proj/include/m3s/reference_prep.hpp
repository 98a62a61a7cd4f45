#pragma once

#include <map>
#include <set>
#include <span>
#include <vector>

#include "m3s/backend.hpp"
#include "m3s/feature_cache.hpp"
#include "m3s/scheduler.hpp"

namespace m3s {

struct ReferenceBundle {
    Tensor image;
    // Inverted latents keyed by timestep: every grid step plus kCleanTimestep.
    std::map<int, LatentState> trajectory;
    // Null-conditioned noise prediction used to reach each grid timestep.
    std::map<int, Tensor> inversion_noise;
    int cache_index = 0;

    const LatentState& at(int timestep) const;
};

struct InversionOptions {
    // Extra passes that re-evaluate the prediction at the upper timestep and
    // redo the step. Zero is plain DDIM inversion.
    int fixed_point_iterations = 0;
};

// Encodes `image` (resized to the backend's image size if needed) and walks the
// grid upward with null-conditioned DDIM inversion.
ReferenceBundle invert_reference(const Tensor& image, const DenoiserBackend& backend, const NoiseSchedule& sched,
                                 const TimestepGrid& grid, const InversionOptions& options = {});

// Same walk starting from an already-encoded clean latent.
ReferenceBundle invert_latent(const LatentState& z0, const DenoiserBackend& backend, const NoiseSchedule& sched,
                              const TimestepGrid& grid, const InversionOptions& options = {});

// Runs the grid back down using the stored inversion predictions and
// returns the reconstructed clean latent.
LatentState resample_with_stored_noise(const ReferenceBundle& bundle, const NoiseSchedule& sched,
                                       const TimestepGrid& grid);

// Timestep handed to the backbone for a latent at `t` (the clean endpoint maps to 0).
inline int model_timestep(int t) { return t < 0 ? 0 : t; }

// Hooks that record Q/K/V of the selected layers and leave attention untouched.
class CaptureHooks final : public AttentionHooks {
public:
    explicit CaptureHooks(std::set<int> layer_ids) : layer_ids_(std::move(layer_ids)) {}

    std::optional<Matrix> on_self_attention(const LayerDescriptor& layer, const AttentionFeatures& f) override;

    const std::map<int, AttentionFeatures>& captured() const { return captured_; }

private:
    std::set<int> layer_ids_;
    std::map<int, AttentionFeatures> captured_;
};

// One null-conditioned prediction per (grid timestep, reference) on the
// stored inverted latent, capturing K/V on `layer_ids`.
FeatureCache build_feature_cache(std::span<const ReferenceBundle> bundles, const DenoiserBackend& backend,
                                 const std::set<int>& layer_ids, const TimestepGrid& grid,
                                 bool capture_queries = false);

}  // namespace m3s
