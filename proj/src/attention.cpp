#include "m3s/attention.hpp"

#include <cmath>
#include <sstream>

#include "m3s/error.hpp"
#include "m3s/latent_modulation.hpp"

namespace m3s {

std::string to_string(InjectionMode mode) {
    switch (mode) {
        case InjectionMode::none: return "none";
        case InjectionMode::kv_swap: return "kv_swap";
        case InjectionMode::concat: return "concat";
        case InjectionMode::concat_smoothed: return "concat_smoothed";
        case InjectionMode::adain_qk_concat: return "adain_qk_concat";
    }
    return "unknown";
}

InjectionMode parse_injection_mode(const std::string& s) {
    for (InjectionMode m : {InjectionMode::none, InjectionMode::kv_swap, InjectionMode::concat,
                            InjectionMode::concat_smoothed, InjectionMode::adain_qk_concat}) {
        if (to_string(m) == s) return m;
    }
    throw ValidationError("injection.mode", "unknown mode '" + s + "'");
}

void InjectionConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ValidationError("injection.lambda", "must lie in [0, 1]");
    }
}

Matrix attention_weights(const Matrix& q, const Matrix& k) {
    if (q.cols() == 0) throw ValidationError("attention", "key dimension is zero");
    if (q.cols() != k.cols()) throw ValidationError("attention", "Q and K key dimensions differ");
    Matrix logits = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - m).exp().matrix();
        logits.row(r) /= logits.row(r).sum();
    }
    return logits;
}

Matrix standard_attention(const AttentionFeatures& f) {
    if (f.k.rows() != f.v.rows()) throw ValidationError("attention", "K and V token counts differ");
    return attention_weights(f.q, f.k) * f.v;
}

namespace {

Matrix vstack(const std::vector<const Matrix*>& parts) {
    Eigen::Index rows = 0;
    for (const Matrix* p : parts) rows += p->rows();
    Matrix out(rows, parts.front()->cols());
    Eigen::Index r = 0;
    for (const Matrix* p : parts) {
        if (p->cols() != out.cols()) throw ValidationError("attention", "stacked features differ in width");
        out.middleRows(r, p->rows()) = *p;
        r += p->rows();
    }
    return out;
}

void check_reference(const AttentionFeatures& target, const ReferenceFeatures& ref) {
    if (ref.k.cols() != target.k.cols() || ref.v.cols() != target.v.cols() ||
        ref.k.rows() != ref.v.rows()) {
        throw ValidationError("attention", "reference features are not shape-compatible with the target");
    }
}

}  // namespace

Matrix smooth_features(const Matrix& target, const Matrix& reference, double lambda) {
    if (target.rows() != reference.rows() || target.cols() != reference.cols()) {
        throw ValidationError("smooth_features", "target and reference shapes differ");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("injection.lambda", "must lie in [0, 1]");
    return lambda * target + (1.0 - lambda) * reference;
}

Matrix injected_attention(const AttentionFeatures& target, std::span<const ReferenceFeatures> refs,
                          InjectionMode mode, double lambda) {
    for (const ReferenceFeatures& r : refs) check_reference(target, r);
    switch (mode) {
        case InjectionMode::none:
            return standard_attention(target);
        case InjectionMode::kv_swap:
            if (refs.size() != 1) {
                throw ValidationError("injection.mode", "kv_swap takes exactly one reference, got " +
                                                            std::to_string(refs.size()));
            }
            return standard_attention({target.q, refs[0].k, refs[0].v});
        case InjectionMode::concat:
        case InjectionMode::concat_smoothed:
        case InjectionMode::adain_qk_concat: {
            Matrix q = target.q;
            Matrix k_tar = target.k;
            if (mode == InjectionMode::adain_qk_concat && !refs.empty()) {
                if (!refs[0].q) {
                    throw ValidationError("injection.mode", "adain_qk_concat needs cached reference queries");
                }
                q = adain_columns(target.q, *refs[0].q);
                k_tar = adain_columns(target.k, refs[0].k);
            }
            std::vector<Matrix> smoothed_k;
            std::vector<Matrix> smoothed_v;
            std::vector<const Matrix*> ks{&k_tar};
            std::vector<const Matrix*> vs{&target.v};
            if (mode == InjectionMode::concat_smoothed) {
                smoothed_k.reserve(refs.size());
                smoothed_v.reserve(refs.size());
                for (const ReferenceFeatures& r : refs) {
                    smoothed_k.push_back(smooth_features(target.k, r.k, lambda));
                    smoothed_v.push_back(smooth_features(target.v, r.v, lambda));
                }
                for (std::size_t i = 0; i < refs.size(); ++i) {
                    ks.push_back(&smoothed_k[i]);
                    vs.push_back(&smoothed_v[i]);
                }
            } else {
                for (const ReferenceFeatures& r : refs) {
                    ks.push_back(&r.k);
                    vs.push_back(&r.v);
                }
            }
            return standard_attention({q, vstack(ks), vstack(vs)});
        }
    }
    throw ValidationError("injection.mode", "unhandled mode");
}

Matrix multi_head_attention(const AttentionFeatures& f, int num_heads) {
    return multi_head_injected_attention(f, {}, InjectionMode::none, 1.0, num_heads);
}

Matrix multi_head_injected_attention(const AttentionFeatures& target,
                                     std::span<const ReferenceFeatures> refs, InjectionMode mode,
                                     double lambda, int num_heads) {
    const Eigen::Index width = target.q.cols();
    if (num_heads < 1 || width % num_heads != 0 || target.v.cols() != width) {
        throw ValidationError("attention", "feature width not divisible into heads");
    }
    if (num_heads == 1) return injected_attention(target, refs, mode, lambda);

    // AdaIN statistics are per column, so aligning before the head split is
    // the same as aligning each head.
    AttentionFeatures aligned;
    const AttentionFeatures* tgt = &target;
    InjectionMode head_mode = mode;
    if (mode == InjectionMode::adain_qk_concat && !refs.empty()) {
        if (!refs[0].q) throw ValidationError("injection.mode", "adain_qk_concat needs cached reference queries");
        aligned = {adain_columns(target.q, *refs[0].q), adain_columns(target.k, refs[0].k), target.v};
        tgt = &aligned;
        head_mode = InjectionMode::concat;
    }

    const Eigen::Index hd = width / num_heads;
    Matrix out(target.q.rows(), width);
    std::vector<ReferenceFeatures> head_refs(refs.size());
    for (int h = 0; h < num_heads; ++h) {
        const Eigen::Index c0 = h * hd;
        AttentionFeatures head{tgt->q.middleCols(c0, hd), tgt->k.middleCols(c0, hd),
                               tgt->v.middleCols(c0, hd)};
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].k.cols() != width || refs[i].v.cols() != width) {
                throw ValidationError("attention", "reference features are not shape-compatible with the target");
            }
            head_refs[i].k = refs[i].k.middleCols(c0, hd);
            head_refs[i].v = refs[i].v.middleCols(c0, hd);
        }
        out.middleCols(c0, hd) = injected_attention(head, head_refs, head_mode, lambda);
    }
    return out;
}

std::set<int> select_layers(const DenoiserBackend& backend, const LayerSelection& selection) {
    const std::vector<LayerDescriptor> layers = backend.attention_layers();
    std::set<int> out;
    if (selection.policy == LayerPolicy::explicit_ids) {
        std::set<int> valid;
        for (const LayerDescriptor& d : layers) valid.insert(d.layer_id);
        for (int id : selection.layer_ids) {
            if (!valid.contains(id)) {
                std::ostringstream os;
                os << "unknown layer id " << id << "; valid ids:";
                for (int v : valid) os << ' ' << v;
                throw ValidationError("injection.layers", os.str());
            }
            out.insert(id);
        }
        return out;
    }
    for (const LayerDescriptor& d : layers) {
        if (d.location != LayerLocation::decoder) continue;
        for (const auto& [h, w] : selection.resolutions) {
            if (d.height == h && d.width == w) out.insert(d.layer_id);
        }
    }
    return out;
}

}  // namespace m3s
