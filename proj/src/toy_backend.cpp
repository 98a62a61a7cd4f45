#include "m3s/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "m3s/attention.hpp"
#include "m3s/error.hpp"

namespace m3s {

Tensor DenoiserBackend::decode_vjp(const LatentState&, const Tensor&) const {
    throw CapabilityError("backend '" + name() + "' does not provide decode_vjp");
}

Conditioning null_conditioning(const DenoiserBackend& backend) { return backend.null_conditioning(); }

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double gain) {
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(rows)));
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

ToyBackend::ToyBackend(const ToyBackendOptions& options)
    : options_(options), schedule_(default_schedule()) {
    const Shape& s = options_.latent;
    if (s.channels < 1 || s.height < 1 || s.width < 1) {
        throw ValidationError("latent_shape", "all dimensions must be >= 1, got " + s.str());
    }
    if (options_.num_attention_layers < 1) {
        throw ValidationError("num_attention_layers", "must be >= 1");
    }
    if (options_.num_heads < 1 || options_.model_dim % options_.num_heads != 0) {
        throw ValidationError("num_heads", "must divide model_dim");
    }
    patch_ = static_cast<int>(std::floor(std::sqrt(static_cast<double>(s.channels))));

    std::mt19937_64 rng(options_.seed);
    const int d = options_.model_dim;
    w_in_ = random_matrix(rng, s.channels, d, 1.0);
    b_in_ = random_matrix(rng, 1, d, 0.1).row(0);
    positional_ = random_matrix(rng, s.plane(), d, 0.5 * std::sqrt(static_cast<double>(s.plane())));
    w_time_ = random_matrix(rng, d, d, 0.5);
    w_text_ = random_matrix(rng, options_.text_dim, d, 0.5);
    for (int l = 0; l < options_.num_attention_layers; ++l) {
        Layer layer;
        layer.wq = random_matrix(rng, d, d, 1.0);
        layer.wk = random_matrix(rng, d, d, 1.0);
        layer.wv = random_matrix(rng, d, d, 1.0);
        layer.wo = random_matrix(rng, d, d, 0.5);
        layer.w1 = random_matrix(rng, d, d, 1.0);
        layer.w2 = random_matrix(rng, d, d, 0.5);
        blocks_.push_back(std::move(layer));
        layers_.push_back(LayerDescriptor{l, s.height, s.width, LayerLocation::decoder, d,
                                          options_.num_heads});
    }
    w_out_ = random_matrix(rng, d, s.channels, 1.0);

    // Decoder rows: one per patch pixel; full row rank with probability one.
    // An orthonormalized draw keeps its conditioning well-behaved.
    const int patch_pixels = patch_ * patch_;
    Matrix raw = random_matrix(rng, s.channels, s.channels, 1.0);
    Eigen::HouseholderQR<Matrix> qr(raw);
    Matrix q = qr.householderQ();
    decoder_ = q.topRows(patch_pixels);
    encoder_ = decoder_.completeOrthogonalDecomposition().pseudoInverse();
}

Shape ToyBackend::image_shape() const {
    return Shape{1, options_.latent.height * patch_, options_.latent.width * patch_};
}

Matrix ToyBackend::time_embedding(int timestep) const {
    const int d = options_.model_dim;
    const int half = d / 2;
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(d);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e(i) = std::sin(timestep * freq);
        e(half + i) = std::cos(timestep * freq);
    }
    return e * w_time_;
}

Tensor ToyBackend::predict_noise(const Tensor& z, int timestep, const Conditioning& cond,
                                 AttentionHooks* hooks) const {
    const Shape& s = options_.latent;
    if (z.shape() != s) {
        throw ValidationError("predict_noise", "latent shape " + z.shape().str() +
                                                   " does not match backend " + s.str());
    }
    if (cond.embedding.size() != static_cast<std::size_t>(options_.text_dim)) {
        throw ValidationError("conditioning", "embedding width must be " +
                                                  std::to_string(options_.text_dim));
    }
    const int tokens = s.plane();
    Matrix x(tokens, s.channels);
    for (int c = 0; c < s.channels; ++c)
        for (int i = 0; i < tokens; ++i) x(i, c) = z[static_cast<std::size_t>(c) * tokens + i];

    const Eigen::Map<const Eigen::RowVectorXd> text(cond.embedding.data(), options_.text_dim);
    const Eigen::RowVectorXd bias = b_in_ + time_embedding(timestep).row(0) + text * w_text_;

    Matrix h = x * w_in_ + positional_;
    h.rowwise() += bias;

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Layer& blk = blocks_[l];
        AttentionFeatures f{h * blk.wq, h * blk.wk, h * blk.wv};
        std::optional<Matrix> injected;
        if (hooks != nullptr) injected = hooks->on_self_attention(layers_[l], f);
        const Matrix attn = injected ? std::move(*injected) : multi_head_attention(f, options_.num_heads);
        if (attn.rows() != tokens || attn.cols() != options_.model_dim) {
            throw ValidationError("attention hook", "returned output of wrong shape");
        }
        h += attn * blk.wo;
        h += (h * blk.w1).array().tanh().matrix() * blk.w2;
    }

    const Matrix out = (h * w_out_).array().tanh().matrix();

    // Posterior-mean noise for z_t = sqrt(ab) x0 + sqrt(1 - ab) eps with x0 ~ N(0, var).
    const int tt = std::clamp(timestep, 0, schedule_.num_train_steps() - 1);
    const double ab = schedule_.alpha_bar(tt);
    const double var = options_.data_variance;
    const double skip = std::sqrt(1.0 - ab) / (ab * var + 1.0 - ab);

    Tensor eps(s);
    for (int c = 0; c < s.channels; ++c) {
        for (int i = 0; i < tokens; ++i) {
            const auto idx = static_cast<std::size_t>(c) * tokens + i;
            eps[idx] = skip * z[idx] + options_.residual_gain * out(i, c);
        }
    }
    return eps;
}

Conditioning ToyBackend::null_conditioning() const {
    return Conditioning{ConditioningKind::null,
                        std::vector<double>(static_cast<std::size_t>(options_.text_dim), 0.0)};
}

Conditioning ToyBackend::text_conditioning(std::string_view prompt) const {
    std::mt19937_64 rng(fnv1a(prompt) ^ (options_.seed * 0x9E3779B97F4A7C15ull));
    std::normal_distribution<double> dist(0.0, 1.0);
    Conditioning c{ConditioningKind::text, std::vector<double>(static_cast<std::size_t>(options_.text_dim))};
    for (double& v : c.embedding) v = dist(rng);
    return c;
}

LatentState ToyBackend::encode(const Tensor& image) const {
    const Shape img = image_shape();
    if (image.shape() != img) {
        throw ValidationError("encode", "image shape " + image.shape().str() + " does not match " + img.str());
    }
    const Shape& s = options_.latent;
    Tensor z(s);
    Eigen::VectorXd px(patch_ * patch_);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            for (int py = 0; py < patch_; ++py)
                for (int pxx = 0; pxx < patch_; ++pxx)
                    px(py * patch_ + pxx) = image.at(0, y * patch_ + py, x * patch_ + pxx);
            const Eigen::VectorXd lat = encoder_ * px;
            for (int c = 0; c < s.channels; ++c) z.at(c, y, x) = lat(c);
        }
    }
    return LatentState{std::move(z), kCleanTimestep, LatentRole::target};
}

Tensor ToyBackend::decode(const LatentState& z0) const {
    const Shape& s = options_.latent;
    if (z0.data.shape() != s) {
        throw ValidationError("decode", "latent shape " + z0.data.shape().str() + " does not match " + s.str());
    }
    Tensor image(image_shape());
    Eigen::VectorXd lat(s.channels);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            for (int c = 0; c < s.channels; ++c) lat(c) = z0.data.at(c, y, x);
            const Eigen::VectorXd px = decoder_ * lat;
            for (int py = 0; py < patch_; ++py)
                for (int pxx = 0; pxx < patch_; ++pxx)
                    image.at(0, y * patch_ + py, x * patch_ + pxx) = px(py * patch_ + pxx);
        }
    }
    return image;
}

Tensor ToyBackend::decode_vjp(const LatentState& z0, const Tensor& upstream) const {
    const Shape& s = options_.latent;
    if (z0.data.shape() != s || upstream.shape() != image_shape()) {
        throw ValidationError("decode_vjp", "shape mismatch");
    }
    Tensor grad(s);
    Eigen::VectorXd px(patch_ * patch_);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            for (int py = 0; py < patch_; ++py)
                for (int pxx = 0; pxx < patch_; ++pxx)
                    px(py * patch_ + pxx) = upstream.at(0, y * patch_ + py, x * patch_ + pxx);
            const Eigen::VectorXd g = decoder_.transpose() * px;
            for (int c = 0; c < s.channels; ++c) grad.at(c, y, x) = g(c);
        }
    }
    return grad;
}

std::unique_ptr<DenoiserBackend> toy_backend(std::uint64_t seed, Shape latent_shape,
                                             int num_attention_layers) {
    ToyBackendOptions opt;
    opt.seed = seed;
    opt.latent = latent_shape;
    opt.num_attention_layers = num_attention_layers;
    return std::make_unique<ToyBackend>(opt);
}

}  // namespace m3s
