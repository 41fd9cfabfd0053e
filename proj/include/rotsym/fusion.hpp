#pragma once

#include <optional>
#include <vector>

#include "rotsym/matching.hpp"
#include "rotsym/model.hpp"

namespace rotsym {

enum class FusionKind { simple, fisher, regmean };

struct FusionMethod {
    FusionKind kind = FusionKind::simple;
    // Simple: per-model weights, must sum to 1; omitted means uniform.
    std::optional<std::vector<double>> weights;
    // Fisher: items per dataset used for the gradient estimate, and the
    // additive floor that keeps untouched parameters on the simple average.
    std::size_t fisher_items = 16;
    double fisher_epsilon = 1e-8;
    // RegMean: off-diagonal Gram scaling, and a ridge relative to the mean
    // Gram eigenvalue that shrinks toward the simple average.
    double regmean_gamma = 0.9;
    double regmean_lambda = 1e-6;
};

TransformerModel fuse_simple(const std::vector<TransformerModel>& models,
                             const std::optional<std::vector<double>>& weights = {});

TransformerModel fuse_fisher(const std::vector<TransformerModel>& models,
                             const std::vector<SyntheticDataset>& datasets,
                             const FusionMethod& method = {});

TransformerModel fuse_regmean(const std::vector<TransformerModel>& models,
                              const std::vector<SyntheticDataset>& datasets,
                              const FusionMethod& method = {});

// Core RegMean merge of one linear map y = x W^T. grams[i] is the input Gram
// of model i with off-diagonals already scaled; solves
//   (sum G_i + lambda I) W_merged^T = sum G_i W_i^T + lambda W_avg^T
// so lambda = 0 reproduces the exact normal equations and any lambda keeps
// identical inputs exact.
Matrix regmean_merge_map(const std::vector<Matrix>& grams, const std::vector<Matrix>& weights,
                         double lambda_scaled);

struct FuseResult {
    TransformerModel merged;
    std::vector<MatchReport> reports; // empty unless match_first
};

FuseResult fuse(const std::vector<TransformerModel>& models,
                const std::vector<SyntheticDataset>& datasets, const FusionMethod& method,
                bool match_first, const MatchOptions& match_opts = {},
                std::size_t anchor_index = 0);

} // namespace rotsym
