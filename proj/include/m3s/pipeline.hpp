#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3s/backend.hpp"
#include "m3s/feature_cache.hpp"
#include "m3s/reference_prep.hpp"
#include "m3s/run_config.hpp"
#include "m3s/scheduler.hpp"

namespace m3s {

struct StepRecord {
    int index = 0;
    int timestep = 0;
    double omega2 = 0.0;
    bool regulated = false;
    double edge_loss_before = 0.0;
    double edge_loss_after = 0.0;
};

struct SynthesisResult {
    Tensor image;          // decoded, clamped to [-1, 1], brightened
    LatentState latent;    // final clean latent
    std::vector<StepRecord> trace;
    RunConfig config_echo;
};

// Reference-side state shared by every synthesis that uses the same
// references, layer selection and step count.
struct PreparedReferences {
    TimestepGrid grid;
    std::set<int> layer_ids;
    std::vector<ReferenceBundle> bundles;
    FeatureCache cache;
};

// Injects cached reference features into the selected layers at one timestep.
class InjectionHooks final : public AttentionHooks {
public:
    InjectionHooks(const FeatureCache& cache, int timestep, const InjectionConfig& cfg)
        : cache_(cache), timestep_(timestep), cfg_(cfg) {}

    std::optional<Matrix> on_self_attention(const LayerDescriptor& layer, const AttentionFeatures& f) override;

private:
    const FeatureCache& cache_;
    int timestep_;
    const InjectionConfig& cfg_;
};

// Pixels strictly above `threshold` become 1.
Tensor brighten(const Tensor& image, double threshold);

// Standard-normal starting latent drawn from `seed`.
Tensor initial_latent(Shape shape, std::uint64_t seed);

std::vector<Tensor> load_reference_images(const RunConfig& cfg);

PreparedReferences prepare_references(const RunConfig& cfg, const DenoiserBackend& backend,
                                      std::span<const Tensor> images, const NoiseSchedule& sched);

// Full sampling loop. `prepared` must come from prepare_references with a
// compatible config (or be empty when the config has no references).
SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend, const NoiseSchedule& sched,
                           const PreparedReferences& prepared);

SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend,
                           std::span<const Tensor> reference_images,
                           const NoiseSchedule& sched = default_schedule());

// Loads references from cfg.references.
SynthesisResult synthesize(const RunConfig& cfg, const DenoiserBackend& backend);

// Plain classifier-free-guided DDIM sampling; the baseline the full loop
// degenerates to without references, style guidance or regulation.
LatentState sample_vanilla_cfg(const DenoiserBackend& backend, const NoiseSchedule& sched, const std::string& prompt,
                               int steps, std::uint64_t seed, double guidance_scale);

enum class SweepAxis { lambda, eta, omega1, omega2, gamma };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& s);

// `base` with one axis replaced; eta values v map to the weights (v, 1 - v).
RunConfig with_axis_value(const RunConfig& base, SweepAxis axis, double value);

struct SweepResult {
    SweepAxis axis;
    std::vector<double> values;  // ascending, panel order
    std::vector<SynthesisResult> panels;
    Tensor contact_sheet;
    nlohmann::json metadata;
};

// One synthesis per value; every cell config is validated before any runs.
// Cells run on up to `jobs` threads and share one reference preparation.
SweepResult sweep(const RunConfig& base, SweepAxis axis, std::vector<double> values, const DenoiserBackend& backend,
                  std::span<const Tensor> reference_images, int jobs = 1,
                  const NoiseSchedule& sched = default_schedule());

}  // namespace m3s
