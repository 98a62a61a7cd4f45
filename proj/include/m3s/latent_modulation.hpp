#pragma once

#include <span>
#include <utility>
#include <vector>

#include "m3s/backend.hpp"
#include "m3s/scheduler.hpp"
#include "m3s/tensor.hpp"

namespace m3s {

// Added inside the square root of the per-channel variance.
inline constexpr double kAdainEpsilon = 1e-6;
// Channels whose population standard deviation falls below this are degenerate.
inline constexpr double kAdainStdFloor = 1e-6;

struct ChannelStats {
    double mean = 0.0;
    double std = 0.0;  // population std, epsilon included
};

ChannelStats channel_stats(std::span<const double> values);

// Per-channel AdaIN over spatial positions: std(y) * (x - mean(x)) / std(x) + mean(y).
Tensor adain(const Tensor& x, const Tensor& y);

// The same statistics alignment over matrix columns (feature channels),
// taken across rows (tokens).
Matrix adain_columns(const Matrix& x, const Matrix& y);

struct StyleBlendConfig {
    std::vector<double> eta{1.0};
    // Fraction of the inference grid [start, end) on which modulation runs.
    std::pair<double, double> active_window{0.0, 1.0};

    void validate() const;
    bool active_at(int step_index, int total_steps) const;
};

// sum_k eta_k * adain(z_tar, ref_k). References with zero weight are skipped,
// so boundary weights reduce exactly to a single adain.
LatentState joint_adain(const LatentState& z_tar, std::span<const LatentState> refs,
                        const StyleBlendConfig& cfg);

}  // namespace m3s
