#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "rotsym/model.hpp"
#include "rotsym/symmetry.hpp"

namespace rotsym {

struct MatchOptions {
    bool enable_ffn = true;
    bool enable_attn = true;
    bool enable_rescale = true;
    // Layers to match; empty optional means all layers.
    std::optional<std::vector<std::size_t>> layer_subset;
    std::size_t parallel_degree = 1;
};

struct LayerObjectives {
    bool selected = false;
    double ffn_before = 0.0;
    double ffn_after = 0.0;
    double attn_before = 0.0;
    double attn_after = 0.0;
    double rescale_before = 0.0;
    double rescale_after = 0.0;
};

struct MatchReport {
    SymmetryTransform transform; // what was actually applied to the source
    std::vector<LayerObjectives> layers;
    double distance_before = 0.0;
    double distance_after = 0.0;
    double wall_seconds = 0.0; // telemetry only, not serialized
    std::size_t rescale_fallbacks = 0;
};

// Squared alignment objectives (distance between candidate parameters and the
// anchor over the tensors the respective symmetry can move).
double ffn_objective(const FfnParams& x, const FfnParams& anchor);
double attention_objective(const AttentionHeadParams& x, const AttentionHeadParams& anchor);

struct FfnMatch {
    Permutation perm;
    FfnParams params;
    double objective_before = 0.0;
    double objective_after = 0.0;
};

// Best permutation of src's hidden units toward anchor via the assignment
// problem on W_i1 W_i2^T + b_i1^T b_i2 + W_o1^T W_o2.
FfnMatch match_ffn(const FfnParams& src, const FfnParams& anchor);

struct HeadRotationMatch {
    Matrix r_qk;
    Matrix r_vo;
    AttentionHeadParams params;
    double objective_before = 0.0;
    double objective_after = 0.0;
};

// Closed-form orthogonal alignment of one head: r = U V^T from the SVD of the
// correlation matrix, separately for the qk and vo subspaces, anchor side
// fixed to identity.
HeadRotationMatch match_attention_head(const AttentionHeadParams& src,
                                       const AttentionHeadParams& anchor);

struct HeadRescaleMatch {
    double a_qk = 1.0;
    double a_vo = 1.0;
    AttentionHeadParams params;
    double objective_before = 0.0;
    double objective_after = 0.0;
    bool fell_back = false;
};

// Optimal per-head rescale: stationary points are real roots of a quartic;
// the candidate set always includes a = 1, so the objective never worsens.
// Call on already-rotated parameters.
HeadRescaleMatch match_rescaling(const AttentionHeadParams& src,
                                 const AttentionHeadParams& anchor);

// Full pipeline over selected layers: FFN assignment, per-head rotation, then
// per-head rescaling, each stage optional. The anchor is never modified and
// the matched model stays functionally identical to src.
std::pair<TransformerModel, MatchReport> match_model(const TransformerModel& src,
                                                     const TransformerModel& anchor,
                                                     const MatchOptions& opts = {});

// Matches every model pairwise to models[anchor_index]; the anchor slot is
// returned unchanged with an identity report.
std::pair<std::vector<TransformerModel>, std::vector<MatchReport>> match_to_anchor(
    const std::vector<TransformerModel>& models, std::size_t anchor_index,
    const MatchOptions& opts = {});

} // namespace rotsym
