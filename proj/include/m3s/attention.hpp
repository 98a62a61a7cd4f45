#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3s/backend.hpp"

namespace m3s {

enum class InjectionMode { none, kv_swap, concat, concat_smoothed, adain_qk_concat };

std::string to_string(InjectionMode mode);
InjectionMode parse_injection_mode(const std::string& s);

struct InjectionConfig {
    double lambda = 0.1;
    InjectionMode mode = InjectionMode::concat_smoothed;
    std::set<int> layer_ids;

    void validate() const;
};

// Reference key/value features for one layer and timestep. `q` is only
// required by the adain_qk_concat mode.
struct ReferenceFeatures {
    Matrix k;
    Matrix v;
    std::optional<Matrix> q;
};

// Row-wise softmax of q k^T / sqrt(d_k).
Matrix attention_weights(const Matrix& q, const Matrix& k);

Matrix standard_attention(const AttentionFeatures& f);

// Standard attention applied independently on each of `num_heads` column
// blocks.
Matrix multi_head_attention(const AttentionFeatures& f, int num_heads);

// lambda * target + (1 - lambda) * reference, elementwise.
Matrix smooth_features(const Matrix& target, const Matrix& reference, double lambda);

// Single-head attention with reference features folded in according to `mode`.
Matrix injected_attention(const AttentionFeatures& target, std::span<const ReferenceFeatures> refs,
                          InjectionMode mode, double lambda);

inline Matrix injected_attention(const AttentionFeatures& target,
                                 std::span<const ReferenceFeatures> refs,
                                 const InjectionConfig& cfg) {
    return injected_attention(target, refs, cfg.mode, cfg.lambda);
}

// Per-head injection: features are split into head column blocks and each
// head stacks its own slice of the reference keys/values.
Matrix multi_head_injected_attention(const AttentionFeatures& target,
                                     std::span<const ReferenceFeatures> refs, InjectionMode mode,
                                     double lambda, int num_heads);

enum class LayerPolicy { by_resolution, explicit_ids };

struct LayerSelection {
    LayerPolicy policy = LayerPolicy::by_resolution;
    std::vector<std::pair<int, int>> resolutions{{32, 32}, {64, 64}};
    std::vector<int> layer_ids;

    bool operator==(const LayerSelection&) const = default;
};

// by_resolution keeps decoder layers whose (h, w) is listed; explicit_ids
// returns the ids verbatim after checking they exist.
std::set<int> select_layers(const DenoiserBackend& backend, const LayerSelection& selection);

// Self-attention layer indices the SDXL decoder uses for injection.
inline const std::vector<int> kSdxlInjectionLayers{1, 9, 17, 25, 33, 41, 49, 57, 69, 71};

}  // namespace m3s
