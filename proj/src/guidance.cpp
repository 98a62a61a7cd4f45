#include "m3s/guidance.hpp"

#include <cmath>

#include "m3s/error.hpp"

namespace m3s {

std::string to_string(GuidanceRamp ramp) {
    return ramp == GuidanceRamp::constant ? "constant" : "linear_third";
}

GuidanceRamp parse_guidance_ramp(const std::string& s) {
    if (s == "constant") return GuidanceRamp::constant;
    if (s == "linear_third") return GuidanceRamp::linear_third;
    throw ValidationError("guidance.ramp", "unknown ramp '" + s + "'");
}

void GuidanceConfig::validate() const {
    if (!(std::isfinite(omega1) && omega1 >= 0.0)) throw ValidationError("guidance.omega1", "must be finite and >= 0");
    if (!(std::isfinite(omega2_max) && omega2_max >= 0.0)) {
        throw ValidationError("guidance.omega2", "must be finite and >= 0");
    }
}

Tensor classifier_free_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "guidance");
    Tensor out(eps_uncond.shape());
    const double keep = 1.0 - scale;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * eps_uncond[i] + scale * eps_cond[i];
    return out;
}

Tensor combine(const Tensor& eps_uncond, const Tensor& eps_content, const Tensor& eps_style,
               double omega1, double omega2) {
    require_same_shape(eps_uncond, eps_style, "guidance");
    if (omega2 == 0.0) return classifier_free_guidance(eps_uncond, eps_content, omega1);
    require_same_shape(eps_uncond, eps_content, "guidance");
    // Expanded affine form: exact at the (1, 0) and (0, 0) corners.
    const double keep = 1.0 - omega1 - omega2;
    Tensor out(eps_uncond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = keep * eps_uncond[i] + omega1 * eps_content[i] + omega2 * eps_style[i];
    }
    return out;
}

double omega2_at(const GuidanceConfig& cfg, int step_index, int total_steps) {
    if (total_steps < 1 || step_index < 0 || step_index >= total_steps) {
        throw ValidationError("step_index", std::to_string(step_index) + " outside [0, " +
                                                std::to_string(total_steps) + ")");
    }
    if (cfg.ramp == GuidanceRamp::constant || total_steps == 1) return cfg.omega2_max;
    const double frac = static_cast<double>(step_index) / static_cast<double>(total_steps - 1);
    // std::lerp is exact at both endpoints.
    return std::lerp(cfg.omega2_max / 3.0, cfg.omega2_max, frac);
}

}  // namespace m3s
