#include "rotsym/symmetry.hpp"

#include <cmath>

#include "rotsym/errors.hpp"
#include "rotsym/numerics.hpp"

namespace rotsym {

namespace {

void require_orthogonal(const Matrix& r, const char* what) {
    if (r.rows() != r.cols()) {
        throw DimensionError(std::string(what) + ": matrix must be square");
    }
    const Matrix gram = matmul_nt(r, r);
    double residual = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            residual = std::max(residual, std::abs(gram(i, j) - target));
        }
    }
    if (residual > 1e-8) {
        throw ValueError(std::string(what) + ": matrix is not orthogonal (residual " +
                         std::to_string(residual) + ")");
    }
}

// rows of w through r: w -> r^T w
Matrix rotate_rows(const Matrix& r, const Matrix& w) {
    return matmul_tn(r, w);
}

// row vector through r: b -> b r
Matrix rotate_row_vector(const Matrix& b, const Matrix& r) {
    return b * r;
}

} // namespace

SymmetryTransform SymmetryTransform::identity(const TransformerConfig& config) {
    config.validate();
    SymmetryTransform t;
    t.layers.resize(config.n_layers);
    for (LayerTransform& layer : t.layers) {
        layer.ffn_perm = Permutation::identity(config.d_ff);
        layer.heads.resize(config.n_heads);
        for (HeadTransform& head : layer.heads) {
            head.r_qk = Matrix::identity(config.d_head);
            head.r_vo = Matrix::identity(config.d_head);
            head.a_qk = 1.0;
            head.a_vo = 1.0;
        }
    }
    return t;
}

FfnParams apply_ffn_permutation(const FfnParams& ffn, const Permutation& p) {
    if (p.size() != ffn.w_i.rows() || p.size() != ffn.b_i.cols() || p.size() != ffn.w_o.cols()) {
        throw DimensionError("ffn permutation: size " + std::to_string(p.size()) +
                             " does not match d_ff " + std::to_string(ffn.w_i.rows()));
    }
    if (!p.is_valid()) {
        throw ValueError("ffn permutation: map is not a bijection");
    }
    FfnParams out = ffn;
    // Row i of w_i moves to row p.map[i]; the same slot move applies to the
    // entries of b_i and the columns of w_o.
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::size_t dst = p.map[i];
        for (std::size_t j = 0; j < ffn.w_i.cols(); ++j) {
            out.w_i(dst, j) = ffn.w_i(i, j);
        }
        out.b_i(0, dst) = ffn.b_i(0, i);
        for (std::size_t j = 0; j < ffn.w_o.rows(); ++j) {
            out.w_o(j, dst) = ffn.w_o(j, i);
        }
    }
    return out;
}

AttentionLayerParams apply_attention_rotation(const AttentionLayerParams& attn,
                                              const std::vector<Matrix>& r_qk,
                                              const std::vector<Matrix>& r_vo) {
    if (r_qk.size() != attn.heads.size() || r_vo.size() != attn.heads.size()) {
        throw DimensionError("attention rotation: expected one matrix pair per head");
    }
    AttentionLayerParams out = attn;
    for (std::size_t h = 0; h < attn.heads.size(); ++h) {
        const Matrix& rq = r_qk[h];
        const Matrix& rv = r_vo[h];
        if (rq.rows() != attn.heads[h].w_q.rows() || rv.rows() != attn.heads[h].w_v.rows()) {
            throw DimensionError("attention rotation: matrix size does not match d_head");
        }
        require_orthogonal(rq, "attention rotation (qk)");
        require_orthogonal(rv, "attention rotation (vo)");
        const AttentionHeadParams& head = attn.heads[h];
        AttentionHeadParams& dst = out.heads[h];
        dst.w_q = rotate_rows(rq, head.w_q);
        dst.b_q = rotate_row_vector(head.b_q, rq);
        dst.w_k = rotate_rows(rq, head.w_k);
        dst.b_k = rotate_row_vector(head.b_k, rq);
        dst.w_v = rotate_rows(rv, head.w_v);
        dst.b_v = rotate_row_vector(head.b_v, rv);
        dst.w_o = head.w_o * rv;
    }
    return out;
}

AttentionLayerParams apply_rescaling(const AttentionLayerParams& attn,
                                     const std::vector<double>& a_qk,
                                     const std::vector<double>& a_vo) {
    if (a_qk.size() != attn.heads.size() || a_vo.size() != attn.heads.size()) {
        throw DimensionError("rescaling: expected one scalar pair per head");
    }
    AttentionLayerParams out = attn;
    for (std::size_t h = 0; h < attn.heads.size(); ++h) {
        const double aq = a_qk[h];
        const double av = a_vo[h];
        if (aq == 0.0 || av == 0.0 || !std::isfinite(aq) || !std::isfinite(av)) {
            throw ValueError("rescaling: scalars must be finite and nonzero");
        }
        AttentionHeadParams& dst = out.heads[h];
        dst.w_q *= aq;
        dst.b_q *= aq;
        dst.w_k *= 1.0 / aq;
        dst.b_k *= 1.0 / aq;
        dst.w_v *= av;
        dst.b_v *= av;
        dst.w_o *= 1.0 / av;
    }
    return out;
}

TransformerModel apply_model_symmetry(const TransformerModel& model, const SymmetryTransform& t) {
    if (t.layers.size() != model.blocks.size()) {
        throw DimensionError("model symmetry: expected " + std::to_string(model.blocks.size()) +
                             " layer transforms, got " + std::to_string(t.layers.size()));
    }
    TransformerModel out = model;
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        const LayerTransform& layer = t.layers[l];
        if (layer.heads.size() != model.blocks[l].attn.heads.size()) {
            throw DimensionError("model symmetry: head count mismatch at layer " +
                                 std::to_string(l));
        }
        out.blocks[l].ffn = apply_ffn_permutation(model.blocks[l].ffn, layer.ffn_perm);
        std::vector<Matrix> r_qk;
        std::vector<Matrix> r_vo;
        std::vector<double> a_qk;
        std::vector<double> a_vo;
        r_qk.reserve(layer.heads.size());
        for (const HeadTransform& head : layer.heads) {
            r_qk.push_back(head.r_qk);
            r_vo.push_back(head.r_vo);
            a_qk.push_back(head.a_qk);
            a_vo.push_back(head.a_vo);
        }
        out.blocks[l].attn = apply_rescaling(
            apply_attention_rotation(model.blocks[l].attn, r_qk, r_vo), a_qk, a_vo);
    }
    return out;
}

SymmetryTransform random_symmetry(const TransformerConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const double lo = std::log(0.5);
    const double hi = std::log(2.0);
    SymmetryTransform t;
    t.layers.resize(config.n_layers);
    for (LayerTransform& layer : t.layers) {
        layer.ffn_perm = random_permutation(config.d_ff, rng);
        layer.heads.resize(config.n_heads);
        for (HeadTransform& head : layer.heads) {
            head.r_qk = random_orthogonal(config.d_head, rng.split());
            head.r_vo = random_orthogonal(config.d_head, rng.split());
            head.a_qk = std::exp(rng.uniform(lo, hi));
            head.a_vo = std::exp(rng.uniform(lo, hi));
        }
    }
    return t;
}

SymmetryTransform compose(const SymmetryTransform& first, const SymmetryTransform& second) {
    if (first.layers.size() != second.layers.size()) {
        throw DimensionError("compose: layer counts differ");
    }
    SymmetryTransform out;
    out.layers.resize(first.layers.size());
    for (std::size_t l = 0; l < first.layers.size(); ++l) {
        const LayerTransform& a = first.layers[l];
        const LayerTransform& b = second.layers[l];
        if (a.heads.size() != b.heads.size()) {
            throw DimensionError("compose: head counts differ at layer " + std::to_string(l));
        }
        LayerTransform& dst = out.layers[l];
        dst.ffn_perm = a.ffn_perm.then(b.ffn_perm);
        dst.heads.resize(a.heads.size());
        for (std::size_t h = 0; h < a.heads.size(); ++h) {
            dst.heads[h].r_qk = a.heads[h].r_qk * b.heads[h].r_qk;
            dst.heads[h].r_vo = a.heads[h].r_vo * b.heads[h].r_vo;
            dst.heads[h].a_qk = a.heads[h].a_qk * b.heads[h].a_qk;
            dst.heads[h].a_vo = a.heads[h].a_vo * b.heads[h].a_vo;
        }
    }
    return out;
}

SymmetryTransform inverse(const SymmetryTransform& t) {
    SymmetryTransform out;
    out.layers.resize(t.layers.size());
    for (std::size_t l = 0; l < t.layers.size(); ++l) {
        const LayerTransform& src = t.layers[l];
        LayerTransform& dst = out.layers[l];
        dst.ffn_perm = src.ffn_perm.inverse();
        dst.heads.resize(src.heads.size());
        for (std::size_t h = 0; h < src.heads.size(); ++h) {
            if (src.heads[h].a_qk == 0.0 || src.heads[h].a_vo == 0.0) {
                throw ValueError("inverse: zero rescale scalar");
            }
            dst.heads[h].r_qk = src.heads[h].r_qk.transposed();
            dst.heads[h].r_vo = src.heads[h].r_vo.transposed();
            dst.heads[h].a_qk = 1.0 / src.heads[h].a_qk;
            dst.heads[h].a_vo = 1.0 / src.heads[h].a_vo;
        }
    }
    return out;
}

} // namespace rotsym
