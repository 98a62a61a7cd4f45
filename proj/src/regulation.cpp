#include "m3s/regulation.hpp"

#include <algorithm>
#include <cmath>

#include "m3s/error.hpp"

namespace m3s {

void RegulationConfig::validate() const {
    if (!std::isfinite(gamma) || gamma < 0.0) throw ValidationError("regulation.gamma", "must be finite and >= 0");
    if (!(clamp > 0.0) || !std::isfinite(clamp)) throw ValidationError("regulation.clamp", "must be finite and > 0");
    const auto [start, end] = window;
    if (!(start >= 0.0 && start < end && end <= 1.0)) {
        throw ValidationError("regulation.window", "require 0 <= start < end <= 1");
    }
}

bool RegulationConfig::active_at(int step_index, int total_steps) const {
    if (!enabled) return false;
    const double pos = static_cast<double>(step_index) / static_cast<double>(total_steps);
    return pos >= window.first && pos < window.second;
}

namespace {

Tensor correlate(const Tensor& image, const Kernel3& k) {
    const Shape& s = image.shape();
    Tensor out(s);
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                // Positive and negative taps summed apart so a flat patch cancels exactly.
                double pos = 0.0;
                double neg = 0.0;
                for (int i = 0; i < 3; ++i) {
                    const int yy = std::clamp(y + i - 1, 0, s.height - 1);
                    for (int j = 0; j < 3; ++j) {
                        const int xx = std::clamp(x + j - 1, 0, s.width - 1);
                        const double w = k[i][j];
                        if (w > 0.0) pos += w * image.at(c, yy, xx);
                        if (w < 0.0) neg -= w * image.at(c, yy, xx);
                    }
                }
                out.at(c, y, x) = pos - neg;
            }
        }
    }
    return out;
}

}  // namespace

SobelGradients sobel_gradients(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.height < 3 || s.width < 3) {
        throw ValidationError("sobel_gradients", "image must be at least 3x3, got " + s.str());
    }
    return {correlate(image, kSobelX), correlate(image, kSobelY)};
}

Tensor sobel_adjoint(const Tensor& upstream, const Kernel3& k) {
    const Shape& s = upstream.shape();
    Tensor out(s);
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const double g = upstream.at(c, y, x);
                if (g == 0.0) continue;
                for (int i = 0; i < 3; ++i) {
                    const int yy = std::clamp(y + i - 1, 0, s.height - 1);
                    for (int j = 0; j < 3; ++j) {
                        const int xx = std::clamp(x + j - 1, 0, s.width - 1);
                        out.at(c, yy, xx) += k[i][j] * g;
                    }
                }
            }
        }
    }
    return out;
}

double edge_loss(const Tensor& gx, const Tensor& gy) {
    require_same_shape(gx, gy, "edge_loss");
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        sx += std::abs(gx[i]);
        sy += std::abs(gy[i]);
    }
    return -sx - sy;
}

SobelGradients clamp_gradients(const SobelGradients& g, double bound) {
    SobelGradients out{g.gx, g.gy};
    for (double& v : out.gx.values()) v = std::clamp(v, -bound, bound);
    for (double& v : out.gy.values()) v = std::clamp(v, -bound, bound);
    return out;
}

Tensor edge_loss_image_gradient(const SobelGradients& g, double bound) {
    // Upstream signal of -|g| with its magnitude capped at the clamp bound:
    // -sign(g) * min(|g|, bound), which is -clamp(g).
    auto upstream = [bound](const Tensor& t) {
        Tensor u(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) u[i] = -std::clamp(t[i], -bound, bound);
        return u;
    };
    Tensor grad = sobel_adjoint(upstream(g.gx), kSobelX);
    grad += sobel_adjoint(upstream(g.gy), kSobelY);
    return grad;
}

RegulationOutcome regulate_with_report(const LatentState& z0_hat, const DenoiserBackend& backend,
                                       const RegulationConfig& cfg) {
    cfg.validate();
    RegulationOutcome out{z0_hat, 0.0, 0.0};
    if (!cfg.enabled || cfg.gamma == 0.0) return out;
    if (!backend.has_decode_vjp()) {
        throw CapabilityError("regulation needs decode_vjp, which backend '" + backend.name() + "' lacks");
    }
    const SobelGradients before = sobel_gradients(backend.decode(z0_hat));
    out.edge_loss_before = edge_loss(before.gx, before.gy);

    const Tensor image_grad = edge_loss_image_gradient(before, cfg.clamp);
    const Tensor latent_grad = backend.decode_vjp(z0_hat, image_grad);
    for (std::size_t i = 0; i < latent_grad.size(); ++i) out.latent.data[i] -= cfg.gamma * latent_grad[i];

    const SobelGradients after = sobel_gradients(backend.decode(out.latent));
    out.edge_loss_after = edge_loss(after.gx, after.gy);
    return out;
}

LatentState regulate(const LatentState& z0_hat, const DenoiserBackend& backend, const RegulationConfig& cfg) {
    return regulate_with_report(z0_hat, backend, cfg).latent;
}

}  // namespace m3s
