#pragma once

#include <cstdint>
#include <vector>

#include "rotsym/matrix.hpp"
#include "rotsym/model.hpp"

namespace rotsym {

struct HeadTransform {
    Matrix r_qk;       // d_head x d_head orthogonal
    Matrix r_vo;       // d_head x d_head orthogonal
    double a_qk = 1.0; // nonzero
    double a_vo = 1.0; // nonzero
};

struct LayerTransform {
    Permutation ffn_perm;
    std::vector<HeadTransform> heads;
};

// One member of a model's equivalence class: per-layer FFN permutation plus
// per-head orthogonal matrices and rescale scalars.
struct SymmetryTransform {
    std::vector<LayerTransform> layers;

    static SymmetryTransform identity(const TransformerConfig& config);
};

// w_i rows, b_i and w_o columns permuted together; b_o and LN untouched.
FfnParams apply_ffn_permutation(const FfnParams& ffn, const Permutation& p);

// Per head: w_q/w_k rows through r_qk, b_q/b_k through r_qk, w_v rows through
// r_vo, b_v through r_vo, w_o columns through r_vo; b_o and LN untouched.
AttentionLayerParams apply_attention_rotation(const AttentionLayerParams& attn,
                                              const std::vector<Matrix>& r_qk,
                                              const std::vector<Matrix>& r_vo);

// Per head: q side scaled by a_qk and k side by 1/a_qk; v side by a_vo and
// the output projection by 1/a_vo.
AttentionLayerParams apply_rescaling(const AttentionLayerParams& attn,
                                     const std::vector<double>& a_qk,
                                     const std::vector<double>& a_vo);

// Permutation, then rotation, then rescaling on every layer. Embedding,
// classifier, LN parameters and b_o are untouched.
TransformerModel apply_model_symmetry(const TransformerModel& model, const SymmetryTransform& t);

// Uniform permutations, Haar-like orthogonal matrices, log-uniform scalars in
// [0.5, 2.0]. Deterministic per seed.
SymmetryTransform random_symmetry(const TransformerConfig& config, std::uint64_t seed);

// Transform equal to applying first, then second.
SymmetryTransform compose(const SymmetryTransform& first, const SymmetryTransform& second);
SymmetryTransform inverse(const SymmetryTransform& t);

} // namespace rotsym
