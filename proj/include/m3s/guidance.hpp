#pragma once

#include <string>

#include "m3s/tensor.hpp"

namespace m3s {

enum class GuidanceRamp { constant, linear_third };

std::string to_string(GuidanceRamp ramp);
GuidanceRamp parse_guidance_ramp(const std::string& s);

struct GuidanceConfig {
    double omega1 = 15.0;      // content scale
    double omega2_max = 15.0;  // style scale at the end of the ramp
    GuidanceRamp ramp = GuidanceRamp::linear_third;

    void validate() const;
};

// uncond + omega1 (content - uncond) + omega2 (style - uncond).
// eps_content and eps_style are the injected text / null predictions;
// eps_uncond is the plain null prediction. A zero omega2 leaves the style
// term out entirely, so the result is classic classifier-free guidance.
Tensor combine(const Tensor& eps_uncond, const Tensor& eps_content, const Tensor& eps_style,
               double omega1, double omega2);

// Classifier-free guidance: uncond + scale (cond - uncond), evaluated as
// (1 - scale) uncond + scale cond.
Tensor classifier_free_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double scale);

// Style scale at a position of the inference grid. linear_third ramps from
// omega2/3 at the first step to omega2 at the last.
double omega2_at(const GuidanceConfig& cfg, int step_index, int total_steps);

}  // namespace m3s
