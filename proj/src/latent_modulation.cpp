#include "m3s/latent_modulation.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "m3s/error.hpp"

namespace m3s {

namespace {

struct RawStats {
    double mean;
    double var;
};

template <typename Get>
RawStats raw_stats(std::size_t n, Get get) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += get(i);
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = get(i) - mean;
        sq += d * d;
    }
    return {mean, sq / static_cast<double>(n)};
}

void check_floor(const RawStats& s, int channel, const char* what) {
    if (!(std::sqrt(s.var) >= kAdainStdFloor)) {
        throw ValidationError(what, "channel " + std::to_string(channel) +
                                        " has degenerate standard deviation " +
                                        std::to_string(std::sqrt(s.var)));
    }
}

}  // namespace

ChannelStats channel_stats(std::span<const double> values) {
    const RawStats s = raw_stats(values.size(), [&](std::size_t i) { return values[i]; });
    return {s.mean, std::sqrt(s.var + kAdainEpsilon)};
}

Tensor adain(const Tensor& x, const Tensor& y) {
    if (x.shape().channels != y.shape().channels) {
        throw ValidationError("adain", "channel counts differ: " + x.shape().str() + " vs " + y.shape().str());
    }
    Tensor out(x.shape());
    for (int c = 0; c < x.shape().channels; ++c) {
        const auto xc = x.channel(c);
        const auto yc = y.channel(c);
        const RawStats sx = raw_stats(xc.size(), [&](std::size_t i) { return xc[i]; });
        check_floor(sx, c, "adain");
        const ChannelStats ty = channel_stats(yc);
        const double scale = ty.std / std::sqrt(sx.var + kAdainEpsilon);
        auto oc = out.channel(c);
        for (std::size_t i = 0; i < xc.size(); ++i) oc[i] = scale * (xc[i] - sx.mean) + ty.mean;
    }
    return out;
}

Matrix adain_columns(const Matrix& x, const Matrix& y) {
    if (x.cols() != y.cols()) {
        throw ValidationError("adain", "feature widths differ");
    }
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const RawStats sx = raw_stats(static_cast<std::size_t>(x.rows()),
                                      [&](std::size_t i) { return x(static_cast<Eigen::Index>(i), c); });
        check_floor(sx, static_cast<int>(c), "adain");
        const RawStats sy = raw_stats(static_cast<std::size_t>(y.rows()),
                                      [&](std::size_t i) { return y(static_cast<Eigen::Index>(i), c); });
        const double scale = std::sqrt(sy.var + kAdainEpsilon) / std::sqrt(sx.var + kAdainEpsilon);
        for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, c) = scale * (x(r, c) - sx.mean) + sy.mean;
    }
    return out;
}

void StyleBlendConfig::validate() const {
    if (eta.empty()) throw ValidationError("blend.eta", "needs at least one weight");
    double sum = 0.0;
    for (double w : eta) {
        if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("blend.eta", "weights must lie in [0, 1]");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("blend.eta", "weights must sum to 1");
    const auto [start, end] = active_window;
    if (!(start >= 0.0 && start < end && end <= 1.0)) {
        throw ValidationError("blend.active_window", "require 0 <= start < end <= 1");
    }
}

bool StyleBlendConfig::active_at(int step_index, int total_steps) const {
    const double pos = static_cast<double>(step_index) / static_cast<double>(total_steps);
    return pos >= active_window.first && pos < active_window.second;
}

LatentState joint_adain(const LatentState& z_tar, std::span<const LatentState> refs,
                        const StyleBlendConfig& cfg) {
    cfg.validate();
    if (refs.size() != cfg.eta.size()) {
        throw ValidationError("blend.eta", "expected " + std::to_string(refs.size()) +
                                               " weights, got " + std::to_string(cfg.eta.size()));
    }
    for (const LatentState& r : refs) {
        require_same_shape(z_tar.data, r.data, "joint_adain");
        if (r.timestep != z_tar.timestep) {
            throw ValidationError("joint_adain", "reference timestep " + std::to_string(r.timestep) +
                                                     " differs from target " + std::to_string(z_tar.timestep));
        }
    }
    std::optional<Tensor> acc;
    for (std::size_t k = 0; k < refs.size(); ++k) {
        if (cfg.eta[k] == 0.0) continue;
        Tensor term = adain(z_tar.data, refs[k].data);
        if (cfg.eta[k] != 1.0) term *= cfg.eta[k];
        if (acc) {
            *acc += term;
        } else {
            acc = std::move(term);
        }
    }
    return LatentState{std::move(*acc), z_tar.timestep, z_tar.role};
}

}  // namespace m3s
