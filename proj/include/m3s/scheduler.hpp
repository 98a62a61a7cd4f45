#pragma once

#include <vector>

#include "m3s/tensor.hpp"

namespace m3s {

// Timestep value for a fully denoised latent (alpha_bar == 1). Training
// timesteps run 0..T-1; the clean endpoint sits just below them.
inline constexpr int kCleanTimestep = -1;

enum class LatentRole { target, reference, z0_estimate };

struct LatentState {
    Tensor data;
    int timestep = kCleanTimestep;
    LatentRole role = LatentRole::target;
};

enum class BetaSchedule { linear };

class NoiseSchedule {
public:
    NoiseSchedule(int num_train_steps, double beta_start, double beta_end,
                  BetaSchedule kind = BetaSchedule::linear);

    int num_train_steps() const { return static_cast<int>(betas_.size()); }
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    // alpha_bar for t in [kCleanTimestep, T-1]; the clean endpoint is 1.
    double alpha_bar(int t) const;
    void check_timestep(int t, const char* what) const;

private:
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

// Latent-diffusion convention: linear betas 1e-4..0.02 over 1000 steps.
NoiseSchedule default_schedule();

NoiseSchedule build_schedule(int num_train_steps, double beta_start, double beta_end,
                             BetaSchedule kind = BetaSchedule::linear);

// Strictly decreasing inference timesteps, evenly strided over [0, T-1].
struct TimestepGrid {
    std::vector<int> steps;

    int size() const { return static_cast<int>(steps.size()); }
    int operator[](int i) const { return steps[static_cast<std::size_t>(i)]; }
    // Timestep that follows step i when denoising; kCleanTimestep after the last.
    int next_lower(int i) const {
        return i + 1 < size() ? steps[static_cast<std::size_t>(i) + 1] : kCleanTimestep;
    }
};

TimestepGrid timestep_grid(const NoiseSchedule& sched, int num_inference_steps);

LatentState add_noise(const LatentState& z0, const Tensor& eps, int t, const NoiseSchedule& sched);

// Tweedie / DDIM clean-latent estimate: (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t).
LatentState tweedie_estimate(const LatentState& z_t, const Tensor& eps_hat,
                             const NoiseSchedule& sched);

// Re-noises a clean estimate to t_prev along eps_hat (deterministic DDIM).
LatentState ddim_step_from_estimate(const LatentState& z0_hat, const Tensor& eps_hat, int t_prev,
                                    const NoiseSchedule& sched);

LatentState ddim_step(const LatentState& z_t, const Tensor& eps_hat, int t, int t_prev,
                      const NoiseSchedule& sched);

// Inverse of ddim_step under the same eps_hat. t_next == t is the identity.
LatentState ddim_invert_step(const LatentState& z_t, const Tensor& eps_hat, int t, int t_next,
                             const NoiseSchedule& sched);

}  // namespace m3s
