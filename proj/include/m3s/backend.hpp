#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "m3s/scheduler.hpp"
#include "m3s/tensor.hpp"

namespace m3s {

using Matrix = Eigen::MatrixXd;

// Per-layer self-attention projections over flattened spatial tokens
// (tokens x key_dim). All heads are packed side by side along the columns.
struct AttentionFeatures {
    Matrix q;
    Matrix k;
    Matrix v;
};

enum class LayerLocation { encoder, middle, decoder };

struct LayerDescriptor {
    int layer_id = 0;
    int height = 0;
    int width = 0;
    LayerLocation location = LayerLocation::decoder;
    int key_dim = 0;
    int num_heads = 1;

    int tokens() const { return height * width; }
};

// Interception point for every self-attention layer of a noise prediction.
// Returning a value replaces the layer's attention output (tokens x key_dim);
// returning nullopt lets the backend compute standard attention.
class AttentionHooks {
public:
    virtual ~AttentionHooks() = default;
    virtual std::optional<Matrix> on_self_attention(const LayerDescriptor& layer,
                                                    const AttentionFeatures& features) = 0;
};

// Hooks that neither capture nor inject.
class IdentityHooks final : public AttentionHooks {
public:
    std::optional<Matrix> on_self_attention(const LayerDescriptor&, const AttentionFeatures&) override {
        return std::nullopt;
    }
};

enum class ConditioningKind { text, null };

struct Conditioning {
    ConditioningKind kind = ConditioningKind::null;
    std::vector<double> embedding;

    bool operator==(const Conditioning&) const = default;
};

// Contract every denoising backbone satisfies. Implementations are immutable
// after construction; predict_noise may be called concurrently as long as each
// call gets its own hooks object.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    virtual std::string name() const = 0;
    virtual Shape latent_shape() const = 0;
    virtual Shape image_shape() const = 0;
    virtual std::vector<LayerDescriptor> attention_layers() const = 0;

    virtual Tensor predict_noise(const Tensor& z, int timestep, const Conditioning& cond,
                                 AttentionHooks* hooks = nullptr) const = 0;

    virtual Conditioning null_conditioning() const = 0;
    virtual Conditioning text_conditioning(std::string_view prompt) const = 0;

    // Images are channels x H x W with values in [-1, 1].
    virtual LatentState encode(const Tensor& image) const = 0;
    virtual Tensor decode(const LatentState& z0) const = 0;

    virtual bool has_decode_vjp() const { return false; }
    // Vector-Jacobian product of decode at z0 applied to an image-space gradient.
    virtual Tensor decode_vjp(const LatentState& z0, const Tensor& upstream) const;

    // Max abs error decode(encode(img)) may show against img.
    virtual double reconstruction_tolerance() const = 0;
};

Conditioning null_conditioning(const DenoiserBackend& backend);

}  // namespace m3s
