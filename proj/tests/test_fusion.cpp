#include "rotsym/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rotsym/analysis.hpp"
#include "rotsym/errors.hpp"
#include "rotsym/numerics.hpp"
#include "rotsym/symmetry.hpp"
#include "testutil.hpp"

using namespace rotsym;

namespace {

TransformerConfig tiny_config() {
    TransformerConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.d_model = 4;
    cfg.d_head = 4;
    cfg.d_ff = 6;
    cfg.vocab_size = 6;
    cfg.n_classes = 3;
    cfg.seq_len = 3;
    return cfg;
}

TransformerConfig head_config() {
    TransformerConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_head = 4;
    cfg.d_ff = 10;
    cfg.vocab_size = 9;
    cfg.n_classes = 3;
    cfg.seq_len = 4;
    return cfg;
}

double model_diff(const TransformerModel& a, const TransformerModel& b) {
    const std::vector<double> ta = flatten(a);
    const std::vector<double> tb = flatten(b);
    double worst = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        worst = std::max(worst, std::fabs(ta[i] - tb[i]));
    }
    return worst;
}

Matrix randn(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = rng.normal();
    }
    return m;
}

void simple_tests() {
    const TransformerConfig cfg = tiny_config();
    const TransformerModel a = random_model(cfg, 1, 0.4);
    const TransformerModel b = random_model(cfg, 2, 0.4);

    // Uniform weights are the plain coordinatewise mean.
    {
        const TransformerModel merged = fuse_simple({a, b});
        const std::vector<double> ta = flatten(a);
        const std::vector<double> tb = flatten(b);
        const std::vector<double> tm = flatten(merged);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            CHECK_NEAR(tm[i], 0.5 * ta[i] + 0.5 * tb[i], 1e-15);
        }
    }
    // Explicit weights.
    {
        const TransformerModel merged = fuse_simple({a, b}, std::vector<double>{0.3, 0.7});
        const std::vector<double> ta = flatten(a);
        const std::vector<double> tb = flatten(b);
        const std::vector<double> tm = flatten(merged);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            CHECK_NEAR(tm[i], 0.3 * ta[i] + 0.7 * tb[i], 1e-15);
        }
    }
    // Identical inputs are reproduced exactly.
    {
        const TransformerModel merged = fuse_simple({a, a, a});
        CHECK(model_diff(merged, a) <= 1e-12);
    }

    CHECK_THROWS(fuse_simple({a}), ValueError);
    CHECK_THROWS(fuse_simple({a, b}, std::vector<double>{0.5, 0.6}), ValueError);
    CHECK_THROWS(fuse_simple({a, b}, std::vector<double>{1.0}), ValueError);
    TransformerConfig other = cfg;
    other.d_ff = 8;
    const TransformerModel odd = random_model(other, 3, 0.4);
    CHECK_THROWS(fuse_simple({a, odd}), ConfigError);
}

void fisher_tests() {
    const TransformerConfig cfg = tiny_config();
    const TransformerModel a = random_model(cfg, 11, 0.5);
    const TransformerModel b = random_model(cfg, 12, 0.5);
    const SyntheticDataset da = gen_synthetic(cfg, a, 16, 13);
    const SyntheticDataset db = gen_synthetic(cfg, b, 16, 14);
    FusionMethod method;
    method.kind = FusionKind::fisher;

    // Identical models merge to themselves.
    {
        const TransformerModel merged = fuse_fisher({a, a}, {da, db}, method);
        CHECK(model_diff(merged, a) <= 1e-8);
    }
    // The merge is a convex combination in every coordinate.
    {
        const TransformerModel merged = fuse_fisher({a, b}, {da, db}, method);
        const std::vector<double> ta = flatten(a);
        const std::vector<double> tb = flatten(b);
        const std::vector<double> tm = flatten(merged);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            CHECK(tm[i] >= std::min(ta[i], tb[i]) - 1e-12);
            CHECK(tm[i] <= std::max(ta[i], tb[i]) + 1e-12);
        }
        // Deterministic.
        const TransformerModel again = fuse_fisher({a, b}, {da, db}, method);
        CHECK(model_diff(merged, again) == 0.0);
    }
    // Coordinates with zero Fisher mass on both sides fall back to the
    // simple average: tokens 4 and 5 never occur below, so their embedding
    // rows have exactly zero gradient.
    {
        SyntheticDataset manual;
        manual.seq_len = cfg.seq_len;
        manual.vocab_size = cfg.vocab_size;
        manual.n_classes = cfg.n_classes;
        Rng rng(900);
        for (std::size_t i = 0; i < 16; ++i) {
            DatasetItem item;
            item.tokens = {static_cast<std::size_t>(rng.below(4)),
                           static_cast<std::size_t>(rng.below(4)),
                           static_cast<std::size_t>(rng.below(4))};
            item.label = static_cast<std::size_t>(rng.below(cfg.n_classes));
            manual.items.push_back(item);
        }
        const TransformerModel merged = fuse_fisher({a, b}, {manual, manual}, method);
        for (std::size_t row : {std::size_t{4}, std::size_t{5}}) {
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                const double want = 0.5 * (a.embedding(row, j) + b.embedding(row, j));
                CHECK_NEAR(merged.embedding(row, j), want, 1e-12);
            }
        }
    }

    CHECK_THROWS(fuse_fisher({a, b}, {da}, method), ValueError);
    {
        FusionMethod bad = method;
        bad.fisher_items = 0;
        CHECK_THROWS(fuse_fisher({a, b}, {da, db}, bad), ValueError);
        bad = method;
        bad.fisher_epsilon = 0.0;
        CHECK_THROWS(fuse_fisher({a, b}, {da, db}, bad), ValueError);
        bad = method;
        bad.fisher_items = 64; // more than the datasets carry
        CHECK_THROWS(fuse_fisher({a, b}, {da, db}, bad), ValueError);
    }
}

void regmean_map_tests() {
    // Residual of the ridge normal equations is tiny, lambda = 0 included.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(30 + seed);
        const Matrix x1 = randn(12, 4, rng);
        const Matrix x2 = randn(12, 4, rng);
        const Matrix w1 = randn(3, 4, rng);
        const Matrix w2 = randn(3, 4, rng);
        const Matrix g1 = matmul_tn(x1, x1);
        const Matrix g2 = matmul_tn(x2, x2);
        for (double lambda : {0.0, 1e-6, 0.5}) {
            const Matrix merged = regmean_merge_map({g1, g2}, {w1, w2}, lambda);
            CHECK(merged.rows() == 3 && merged.cols() == 4);
            // A z = b with A = g1 + g2 + lambda I,
            // b = g1 w1^T + g2 w2^T + lambda wavg^T, z = merged^T.
            double worst = 0.0;
            for (std::size_t r = 0; r < 4; ++r) {
                for (std::size_t c = 0; c < 3; ++c) {
                    double lhs = lambda * merged(c, r);
                    double rhs = lambda * 0.5 * (w1(c, r) + w2(c, r));
                    for (std::size_t k = 0; k < 4; ++k) {
                        lhs += (g1(r, k) + g2(r, k)) * merged(c, k);
                        rhs += g1(r, k) * w1(c, k) + g2(r, k) * w2(c, k);
                    }
                    worst = std::max(worst, std::fabs(lhs - rhs));
                }
            }
            CHECK(worst <= 1e-8);
        }
    }
    // Isotropic Grams reduce to the simple average for any ridge.
    {
        Rng rng(40);
        const Matrix w1 = randn(3, 4, rng);
        const Matrix w2 = randn(3, 4, rng);
        Matrix g(4, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            g(i, i) = 2.5;
        }
        for (double lambda : {0.0, 1e-6, 1.0}) {
            const Matrix merged = regmean_merge_map({g, g}, {w1, w2}, lambda);
            for (std::size_t i = 0; i < merged.size(); ++i) {
                CHECK_NEAR(merged.data()[i], 0.5 * (w1.data()[i] + w2.data()[i]), 1e-10);
            }
        }
    }
    // Identical weight matrices are a fixed point whatever the Grams.
    {
        Rng rng(41);
        const Matrix x1 = randn(9, 4, rng);
        const Matrix x2 = randn(9, 4, rng);
        const Matrix w = randn(3, 4, rng);
        const Matrix merged =
            regmean_merge_map({matmul_tn(x1, x1), matmul_tn(x2, x2)}, {w, w}, 1e-6);
        CHECK(max_abs_diff(merged, w) <= 1e-9);
    }
    // Singular accumulated Gram needs the ridge.
    {
        Rng rng(42);
        const Matrix w1 = randn(3, 4, rng);
        const Matrix w2 = randn(3, 4, rng);
        const Matrix zero(4, 4);
        CHECK_THROWS(regmean_merge_map({zero, zero}, {w1, w2}, 0.0), NumericError);
        const Matrix merged = regmean_merge_map({zero, zero}, {w1, w2}, 1e-6);
        // With no signal at all the ridge pulls straight to the average.
        for (std::size_t i = 0; i < merged.size(); ++i) {
            CHECK_NEAR(merged.data()[i], 0.5 * (w1.data()[i] + w2.data()[i]), 1e-9);
        }
    }
    CHECK_THROWS(regmean_merge_map({Matrix(4, 4)}, {Matrix(3, 4), Matrix(3, 4)}, 0.0), ValueError);
    CHECK_THROWS(regmean_merge_map({Matrix(4, 4), Matrix(4, 4)},
                                   {Matrix(3, 4), Matrix(3, 4)}, -1.0),
                 ValueError);
}

void regmean_model_tests() {
    const TransformerConfig cfg = tiny_config();
    const TransformerModel a = random_model(cfg, 51, 0.5);
    const TransformerModel b = random_model(cfg, 52, 0.5);
    const SyntheticDataset da = gen_synthetic(cfg, a, 12, 53);
    const SyntheticDataset db = gen_synthetic(cfg, b, 12, 54);
    FusionMethod method;
    method.kind = FusionKind::regmean;

    // Identical end models come back unchanged.
    {
        const TransformerModel merged = fuse_regmean({a, a}, {da, db}, method);
        CHECK(model_diff(merged, a) <= 1e-8);
    }
    // Non-regression parameters are simple averages.
    {
        const TransformerModel merged = fuse_regmean({a, b}, {da, db}, method);
        merged.validate();
        for (std::size_t c = 0; c < cfg.n_classes; ++c) {
            CHECK_NEAR(merged.classifier_b(0, c),
                       0.5 * (a.classifier_b(0, c) + b.classifier_b(0, c)), 1e-12);
        }
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            CHECK_NEAR(merged.blocks[0].ffn.ln_gain(0, j),
                       0.5 * (a.blocks[0].ffn.ln_gain(0, j) + b.blocks[0].ffn.ln_gain(0, j)),
                       1e-12);
            CHECK_NEAR(merged.blocks[0].attn.b_o(0, j),
                       0.5 * (a.blocks[0].attn.b_o(0, j) + b.blocks[0].attn.b_o(0, j)), 1e-12);
        }
        for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                CHECK_NEAR(merged.embedding(t, j), 0.5 * (a.embedding(t, j) + b.embedding(t, j)),
                           1e-12);
            }
        }
        // Deterministic.
        const TransformerModel again = fuse_regmean({a, b}, {da, db}, method);
        CHECK(model_diff(merged, again) == 0.0);
    }
    {
        FusionMethod bad = method;
        bad.regmean_gamma = 0.0;
        CHECK_THROWS(fuse_regmean({a, b}, {da, db}, bad), ValueError);
        bad.regmean_gamma = 1.5;
        CHECK_THROWS(fuse_regmean({a, b}, {da, db}, bad), ValueError);
        bad = method;
        bad.regmean_lambda = -1e-9;
        CHECK_THROWS(fuse_regmean({a, b}, {da, db}, bad), ValueError);
    }
    CHECK_THROWS(fuse_regmean({a, b}, {da}, method), ValueError);
}

void fuse_pipeline_tests() {
    const TransformerConfig cfg = head_config();
    const TransformerModel a = random_model(cfg, 61, 0.4);
    const SyntheticDataset ds = gen_synthetic(cfg, a, 16, 62);

    // Without matching the dispatcher is exactly fuse_simple.
    {
        const TransformerModel b = random_model(cfg, 63, 0.4);
        FusionMethod method;
        const FuseResult r = fuse({a, b}, {}, method, false);
        const TransformerModel direct = fuse_simple({a, b});
        CHECK(model_diff(r.merged, direct) == 0.0);
        CHECK(r.reports.empty());
    }

    // Matched fusion of a model with its own transformed copy recovers it.
    {
        const TransformerModel moved = apply_model_symmetry(a, random_symmetry(cfg, 64));
        FusionMethod method;
        const FuseResult r = fuse({a, moved}, {}, method, true);
        CHECK(r.reports.size() == 2);
        CHECK(model_diff(r.merged, a) <= 1e-6);
        CHECK_NEAR(loss(r.merged, ds), loss(a, ds), 1e-9);
        // Without matching the merge lands far away.
        const FuseResult plain = fuse({a, moved}, {}, method, false);
        CHECK(model_diff(plain.merged, a) > 1e-3);
    }

    // Matching plugs into fisher and regmean too.
    {
        const TransformerModel moved = apply_model_symmetry(a, random_symmetry(cfg, 65));
        const SyntheticDataset ds2 = gen_synthetic(cfg, moved, 16, 66);
        FusionMethod method;
        method.kind = FusionKind::fisher;
        const FuseResult r = fuse({a, moved}, {ds, ds2}, method, true);
        CHECK(model_diff(r.merged, a) <= 1e-5);
        method.kind = FusionKind::regmean;
        const FuseResult r2 = fuse({a, moved}, {ds, ds2}, method, true);
        CHECK(model_diff(r2.merged, a) <= 1e-5);
    }

    {
        const TransformerModel b = random_model(cfg, 67, 0.4);
        FusionMethod method;
        CHECK_THROWS(fuse({a, b}, {}, method, true, MatchOptions{}, 2), ValueError);
    }
}

} // namespace

int main() {
    simple_tests();
    fisher_tests();
    regmean_map_tests();
    regmean_model_tests();
    fuse_pipeline_tests();
    return test_summary("test_fusion");
}
