#include "m3s/scheduler.hpp"

#include <cmath>
#include <string>

#include "m3s/error.hpp"

namespace m3s {

NoiseSchedule::NoiseSchedule(int num_train_steps, double beta_start, double beta_end,
                             BetaSchedule kind) {
    if (num_train_steps < 1) {
        throw ValidationError("num_train_steps", "must be >= 1");
    }
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end)) {
        throw ValidationError("beta", "require 0 < beta_start <= beta_end < 1");
    }
    const auto n = static_cast<std::size_t>(num_train_steps);
    betas_.resize(n);
    switch (kind) {
        case BetaSchedule::linear:
            for (std::size_t i = 0; i < n; ++i) {
                const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
                betas_[i] = beta_start + frac * (beta_end - beta_start);
            }
            break;
    }
    alphas_.resize(n);
    alpha_bars_.resize(n);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        alphas_[i] = 1.0 - betas_[i];
        running *= alphas_[i];
        if (!(running > 0.0)) {
            throw ValidationError("beta", "cumulative alpha underflows to zero at step " + std::to_string(i));
        }
        alpha_bars_[i] = running;
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    check_timestep(t, "timestep");
    return t == kCleanTimestep ? 1.0 : alpha_bars_[static_cast<std::size_t>(t)];
}

void NoiseSchedule::check_timestep(int t, const char* what) const {
    if (t < kCleanTimestep || t >= num_train_steps()) {
        throw ValidationError(what, "timestep " + std::to_string(t) + " outside [" +
                                        std::to_string(kCleanTimestep) + ", " +
                                        std::to_string(num_train_steps() - 1) + "]");
    }
}

NoiseSchedule default_schedule() { return NoiseSchedule(1000, 1e-4, 0.02); }

NoiseSchedule build_schedule(int num_train_steps, double beta_start, double beta_end,
                             BetaSchedule kind) {
    return NoiseSchedule(num_train_steps, beta_start, beta_end, kind);
}

TimestepGrid timestep_grid(const NoiseSchedule& sched, int num_inference_steps) {
    const int T = sched.num_train_steps();
    if (num_inference_steps < 1 || num_inference_steps > T) {
        throw ValidationError("steps", "inference steps must lie in [1, " + std::to_string(T) + "]");
    }
    // Integer stride, offset so the grid ends at 0 and starts near T-1.
    const int stride = T / num_inference_steps;
    TimestepGrid grid;
    grid.steps.reserve(static_cast<std::size_t>(num_inference_steps));
    const int offset = T - 1 - stride * (num_inference_steps - 1);
    for (int i = num_inference_steps - 1; i >= 0; --i) grid.steps.push_back(offset + i * stride);
    return grid;
}

namespace {

void require_finite_pair(const Tensor& z, const Tensor& eps, const char* what) {
    require_same_shape(z, eps, what);
}

}  // namespace

LatentState add_noise(const LatentState& z0, const Tensor& eps, int t, const NoiseSchedule& sched) {
    require_finite_pair(z0.data, eps, "add_noise");
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    LatentState out{Tensor(z0.data.shape()), t, z0.role};
    for (std::size_t i = 0; i < eps.size(); ++i) out.data[i] = a * z0.data[i] + b * eps[i];
    return out;
}

LatentState tweedie_estimate(const LatentState& z_t, const Tensor& eps_hat,
                             const NoiseSchedule& sched) {
    require_finite_pair(z_t.data, eps_hat, "tweedie_estimate");
    const double ab = sched.alpha_bar(z_t.timestep);
    if (!(ab > 0.0)) {
        throw std::domain_error("tweedie_estimate: alpha_bar is zero at timestep " +
                                std::to_string(z_t.timestep));
    }
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    LatentState out{Tensor(z_t.data.shape()), kCleanTimestep, LatentRole::z0_estimate};
    for (std::size_t i = 0; i < eps_hat.size(); ++i) out.data[i] = (z_t.data[i] - sb * eps_hat[i]) / sa;
    return out;
}

LatentState ddim_step_from_estimate(const LatentState& z0_hat, const Tensor& eps_hat, int t_prev,
                                    const NoiseSchedule& sched) {
    require_finite_pair(z0_hat.data, eps_hat, "ddim_step");
    const double ab = sched.alpha_bar(t_prev);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    LatentState out{Tensor(z0_hat.data.shape()), t_prev, LatentRole::target};
    for (std::size_t i = 0; i < eps_hat.size(); ++i) out.data[i] = a * z0_hat.data[i] + b * eps_hat[i];
    return out;
}

LatentState ddim_step(const LatentState& z_t, const Tensor& eps_hat, int t, int t_prev,
                      const NoiseSchedule& sched) {
    if (!(t > t_prev)) {
        throw ValidationError("ddim_step", "require t > t_prev, got t=" + std::to_string(t) +
                                               " t_prev=" + std::to_string(t_prev));
    }
    LatentState at_t = z_t;
    at_t.timestep = t;
    LatentState out = ddim_step_from_estimate(tweedie_estimate(at_t, eps_hat, sched), eps_hat, t_prev, sched);
    out.role = z_t.role;
    return out;
}

LatentState ddim_invert_step(const LatentState& z_t, const Tensor& eps_hat, int t, int t_next,
                             const NoiseSchedule& sched) {
    if (t_next < t) {
        throw ValidationError("ddim_invert_step", "require t_next >= t, got t=" + std::to_string(t) +
                                                      " t_next=" + std::to_string(t_next));
    }
    if (t_next == t) {
        LatentState same = z_t;
        same.timestep = t;
        return same;
    }
    // Same algebra as ddim_step with the roles of t and t_next exchanged.
    LatentState at_t = z_t;
    at_t.timestep = t;
    LatentState out = ddim_step_from_estimate(tweedie_estimate(at_t, eps_hat, sched), eps_hat, t_next, sched);
    out.role = z_t.role;
    return out;
}

}  // namespace m3s
