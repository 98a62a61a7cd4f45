#pragma once

#include <cstdint>
#include <memory>

#include "m3s/backend.hpp"

namespace m3s {

struct ToyBackendOptions {
    std::uint64_t seed = 0;
    Shape latent{4, 8, 8};
    int num_attention_layers = 2;
    int model_dim = 16;
    int num_heads = 2;
    int text_dim = 16;
    // Weight of the attention network relative to the analytic denoiser.
    double residual_gain = 0.1;
    // Variance of the Gaussian data model behind the analytic term.
    double data_variance = 1.0;
};

// Desk-scale denoiser. The prediction is the exact noise estimate for
// zero-mean Gaussian data under the default schedule plus a bounded residual
// from a small network: per-pixel linear mixing interleaved with genuine
// multi-head softmax self-attention over the latent's spatial tokens, a
// sinusoidal timestep embedding, and the conditioning added as a bias. All
// weights come from a seeded generator.
//
// The decoder maps every latent pixel (a channel vector) to a patch of a
// single-channel image through a fixed invertible matrix, so encode/decode are
// exact inverses and decode_vjp is the matrix transpose.
class ToyBackend final : public DenoiserBackend {
public:
    explicit ToyBackend(const ToyBackendOptions& options = {});

    std::string name() const override { return "toy"; }
    Shape latent_shape() const override { return options_.latent; }
    Shape image_shape() const override;
    std::vector<LayerDescriptor> attention_layers() const override { return layers_; }

    Tensor predict_noise(const Tensor& z, int timestep, const Conditioning& cond,
                         AttentionHooks* hooks = nullptr) const override;

    Conditioning null_conditioning() const override;
    Conditioning text_conditioning(std::string_view prompt) const override;

    LatentState encode(const Tensor& image) const override;
    Tensor decode(const LatentState& z0) const override;
    bool has_decode_vjp() const override { return true; }
    Tensor decode_vjp(const LatentState& z0, const Tensor& upstream) const override;
    double reconstruction_tolerance() const override { return 1e-9; }

    const ToyBackendOptions& options() const { return options_; }
    // Side length of the image patch each latent pixel decodes to.
    int patch() const { return patch_; }

private:
    struct Layer {
        Matrix wq, wk, wv, wo, w1, w2;
    };

    Matrix time_embedding(int timestep) const;

    ToyBackendOptions options_;
    NoiseSchedule schedule_;
    int patch_ = 0;
    std::vector<LayerDescriptor> layers_;
    Matrix w_in_;
    Eigen::RowVectorXd b_in_;
    Matrix positional_;
    Matrix w_time_;
    Matrix w_text_;
    std::vector<Layer> blocks_;
    Matrix w_out_;
    Matrix decoder_;
    Matrix encoder_;
};

std::unique_ptr<DenoiserBackend> toy_backend(std::uint64_t seed, Shape latent_shape,
                                             int num_attention_layers);

}  // namespace m3s
