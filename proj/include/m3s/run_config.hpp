#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "m3s/attention.hpp"
#include "m3s/guidance.hpp"
#include "m3s/latent_modulation.hpp"
#include "m3s/regulation.hpp"

namespace m3s {

struct InjectionSettings {
    InjectionMode mode = InjectionMode::concat_smoothed;
    double lambda = 0.1;
    LayerSelection layers;
};

struct BlendSettings {
    bool enabled = true;
    // One weight per reference; empty means uniform weights.
    std::vector<double> eta;
    std::pair<double, double> active_window{0.0, 1.0};
};

struct RunConfig {
    std::string prompt = "a sketch of a cat";
    // Reference image paths; relative paths resolve against `base_dir`.
    std::vector<std::string> references;
    InjectionSettings injection;
    BlendSettings blend;
    GuidanceConfig guidance;
    RegulationConfig regulation;
    int steps = 100;
    std::uint64_t seed = 0;
    double brighten_threshold = 0.7;
    bool trace = false;

    std::filesystem::path base_dir;

    // Professional-style defaults: omega1 = omega2 = 15, lambda = 0.1.
    static RunConfig professional();
    // Abstract-style defaults: omega2 = 25, lambda = 0.05, regulation on at gamma = 60.
    static RunConfig abstract_style();

    void validate() const;
    StyleBlendConfig blend_config(std::size_t num_refs) const;
    bool blend_active() const { return blend.enabled && !references.empty(); }
    std::vector<std::filesystem::path> reference_paths() const;
};

RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
// Strict: unknown keys and ill-typed values raise ValidationError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = RunConfig::professional());

// Applies "dotted.key=value" to a run-spec document. Values parse as JSON
// when possible and fall back to strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                          RunConfig base = RunConfig::professional());

}  // namespace m3s
