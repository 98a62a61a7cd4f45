#pragma once

#include <array>
#include <utility>

#include "m3s/backend.hpp"
#include "m3s/tensor.hpp"

namespace m3s {

using Kernel3 = std::array<std::array<double, 3>, 3>;

inline constexpr Kernel3 kSobelX{{{-1.0, 0.0, 1.0}, {-2.0, 0.0, 2.0}, {-1.0, 0.0, 1.0}}};
inline constexpr Kernel3 kSobelY{{{-1.0, -2.0, -1.0}, {0.0, 0.0, 0.0}, {1.0, 2.0, 1.0}}};

struct RegulationConfig {
    bool enabled = false;
    double gamma = 60.0;
    double clamp = 0.001;
    // Fraction of the inference grid [start, end) on which the step runs.
    std::pair<double, double> window{0.0, 1.0};

    void validate() const;
    bool active_at(int step_index, int total_steps) const;
};

struct SobelGradients {
    Tensor gx;
    Tensor gy;
};

// Per-channel 3x3 cross-correlation with the Sobel pair; borders replicate
// the edge pixel so flat images have zero response everywhere.
SobelGradients sobel_gradients(const Tensor& image);

// Adjoint of one Sobel cross-correlation (including border replication).
Tensor sobel_adjoint(const Tensor& upstream, const Kernel3& kernel);

// -sum|gx| - sum|gy|.
double edge_loss(const Tensor& gx, const Tensor& gy);

// The gradient values as seen by the loss: clamped to [-bound, bound].
SobelGradients clamp_gradients(const SobelGradients& g, double bound);

// Backward signal of the edge loss pulled back to image space. Each Sobel
// response contributes -sign(g) * min(|g|, bound) upstream, so no pixel's
// signal exceeds the clamp bound.
Tensor edge_loss_image_gradient(const SobelGradients& g, double bound);

struct RegulationOutcome {
    LatentState latent;
    double edge_loss_before = 0.0;
    double edge_loss_after = 0.0;
};

// One clamped gradient step on the clean-latent estimate:
// z0 - gamma * d L_edge / d z0, differentiated through the decoder.
RegulationOutcome regulate_with_report(const LatentState& z0_hat, const DenoiserBackend& backend,
                                       const RegulationConfig& cfg);

LatentState regulate(const LatentState& z0_hat, const DenoiserBackend& backend, const RegulationConfig& cfg);

}  // namespace m3s
