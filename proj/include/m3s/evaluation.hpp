#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "m3s/backend.hpp"
#include "m3s/tensor.hpp"

namespace m3s {

// Pluggable feature source for the metric suite (the role VGG, DINO and CLIP
// play for pretrained backbones).
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<Tensor> features(const Tensor& image) const = 0;
    virtual std::vector<double> embed(const Tensor& image) const = 0;
    virtual std::vector<double> embed_text(std::string_view prompt) const = 0;
};

// Stack of seeded random 3x3 convolutions with ReLU. embed() pools the last
// feature map per channel; embed_text() hashes the prompt into a seeded
// vector of the same width.
class RandomConvExtractor final : public FeatureExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed, std::vector<int> channels = {8, 16});

    std::vector<Tensor> features(const Tensor& image) const override;
    std::vector<double> embed(const Tensor& image) const override;
    std::vector<double> embed_text(std::string_view prompt) const override;

private:
    struct Conv {
        int in = 0;
        int out = 0;
        std::vector<double> weights;  // out x in x 3 x 3
        std::vector<double> bias;
    };

    std::uint64_t seed_;
    std::vector<Conv> convs_;
};

// G[i][j] = sum_p F_i(p) F_j(p) / (c h w).
Matrix gram_matrix(const Tensor& feature_map);

// Mean over extractor layers of the mean squared Gram difference.
double gram_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

double embedding_similarity(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);

double text_alignment(const Tensor& image, std::string_view prompt, const FeatureExtractor& fx);

struct MetricRow {
    std::string run_id;
    std::string metric;
    double value = 0.0;
};

// "run_id,metric,value" with a header line.
std::string metrics_csv(const std::vector<MetricRow>& rows);

}  // namespace m3s
