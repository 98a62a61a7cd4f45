#include "m3s/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "m3s/error.hpp"

namespace m3s {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::vector<int> channels) : seed_(seed) {
    if (channels.empty()) throw ValidationError("extractor", "needs at least one layer");
    std::mt19937_64 rng(seed);
    int in = 1;
    for (int out : channels) {
        if (out < 1) throw ValidationError("extractor", "layer widths must be positive");
        Conv conv{in, out, std::vector<double>(static_cast<std::size_t>(out) * in * 9),
                  std::vector<double>(static_cast<std::size_t>(out))};
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(9.0 * in));
        for (double& w : conv.weights) w = dist(rng);
        for (double& b : conv.bias) b = 0.1 * dist(rng);
        convs_.push_back(std::move(conv));
        in = out;
    }
}

std::vector<Tensor> RandomConvExtractor::features(const Tensor& image) const {
    if (image.shape().channels != 1) throw ValidationError("extractor", "expects single-channel images");
    std::vector<Tensor> maps;
    const Tensor* input = &image;
    for (const Conv& conv : convs_) {
        const Shape s = input->shape();
        Tensor out({conv.out, s.height, s.width});
        for (int o = 0; o < conv.out; ++o) {
            for (int y = 0; y < s.height; ++y) {
                for (int x = 0; x < s.width; ++x) {
                    double acc = conv.bias[static_cast<std::size_t>(o)];
                    for (int c = 0; c < conv.in; ++c) {
                        for (int i = 0; i < 3; ++i) {
                            const int yy = y + i - 1;
                            if (yy < 0 || yy >= s.height) continue;
                            for (int j = 0; j < 3; ++j) {
                                const int xx = x + j - 1;
                                if (xx < 0 || xx >= s.width) continue;
                                acc += conv.weights[((static_cast<std::size_t>(o) * conv.in + c) * 3 + i) * 3 + j] *
                                       input->at(c, yy, xx);
                            }
                        }
                    }
                    out.at(o, y, x) = std::max(acc, 0.0);
                }
            }
        }
        maps.push_back(std::move(out));
        input = &maps.back();
    }
    return maps;
}

std::vector<double> RandomConvExtractor::embed(const Tensor& image) const {
    const Tensor last = features(image).back();
    std::vector<double> e(static_cast<std::size_t>(last.shape().channels));
    for (int c = 0; c < last.shape().channels; ++c) {
        double sum = 0.0;
        for (double v : last.channel(c)) sum += v;
        e[static_cast<std::size_t>(c)] = sum / last.shape().plane();
    }
    return e;
}

std::vector<double> RandomConvExtractor::embed_text(std::string_view prompt) const {
    std::mt19937_64 rng(fnv1a(prompt) ^ seed_);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> e(static_cast<std::size_t>(convs_.back().out));
    for (double& v : e) v = dist(rng);
    return e;
}

Matrix gram_matrix(const Tensor& f) {
    const Shape& s = f.shape();
    if (s.channels < 1 || s.height < 1 || s.width < 1) throw ValidationError("gram_matrix", "empty feature map");
    const double norm = static_cast<double>(s.numel());
    Matrix g(s.channels, s.channels);
    for (int i = 0; i < s.channels; ++i) {
        const auto fi = f.channel(i);
        for (int j = i; j < s.channels; ++j) {
            const auto fj = f.channel(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < fi.size(); ++p) acc += fi[p] * fj[p];
            g(i, j) = g(j, i) = acc / norm;
        }
    }
    return g;
}

double gram_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
    const std::vector<Tensor> fa = fx.features(a);
    const std::vector<Tensor> fb = fx.features(b);
    if (fa.size() != fb.size() || fa.empty()) throw ValidationError("gram_distance", "extractor layer counts differ");
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        if (fa[l].shape().channels != fb[l].shape().channels) {
            throw ValidationError("gram_distance", "feature channel counts differ");
        }
        const Matrix d = gram_matrix(fa[l]) - gram_matrix(fb[l]);
        total += d.array().square().mean();
    }
    return total / static_cast<double>(fa.size());
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("cosine_similarity", "embedding widths differ");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine_similarity", "zero-norm embedding");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double embedding_similarity(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
    return cosine_similarity(fx.embed(a), fx.embed(b));
}

double text_alignment(const Tensor& image, std::string_view prompt, const FeatureExtractor& fx) {
    return cosine_similarity(fx.embed(image), fx.embed_text(prompt));
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    os << "run_id,metric,value\n" << std::setprecision(17);
    for (const MetricRow& r : rows) os << r.run_id << ',' << r.metric << ',' << r.value << '\n';
    return os.str();
}

}  // namespace m3s
