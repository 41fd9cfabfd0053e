#include "rotsym/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "rotsym/errors.hpp"

namespace rotsym {

namespace {

void require_same_configs(const std::vector<TransformerModel>& models, std::size_t min_count,
                          const char* what) {
    if (models.size() < min_count) {
        throw ValueError(std::string(what) + ": need at least " + std::to_string(min_count) +
                         " models, got " + std::to_string(models.size()));
    }
    for (const TransformerModel& m : models) {
        if (!(m.config == models.front().config)) {
            throw ConfigError(std::string(what) + ": model configs differ");
        }
    }
}

void require_datasets(const std::vector<TransformerModel>& models,
                      const std::vector<SyntheticDataset>& datasets, const char* what) {
    if (datasets.size() != models.size()) {
        throw ValueError(std::string(what) + ": expected one dataset per model (" +
                         std::to_string(models.size()) + "), got " +
                         std::to_string(datasets.size()));
    }
}

std::vector<double> resolve_weights(std::size_t n, const std::optional<std::vector<double>>& w) {
    if (!w) {
        return std::vector<double>(n, 1.0 / static_cast<double>(n));
    }
    if (w->size() != n) {
        throw ValueError("fuse: expected " + std::to_string(n) + " weights, got " +
                         std::to_string(w->size()));
    }
    double sum = 0.0;
    for (double v : *w) {
        if (!std::isfinite(v)) {
            throw ValueError("fuse: non-finite weight");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValueError("fuse: weights must sum to 1");
    }
    return *w;
}

// Gaussian elimination with partial pivoting; solves S X = B in place.
Matrix solve_linear(Matrix s, Matrix b) {
    const std::size_t n = s.rows();
    const double tol = 1e-12 * std::max(1e-300, max_abs(s));
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(s(r, col)) > std::abs(s(pivot, col))) {
                pivot = r;
            }
        }
        if (std::abs(s(pivot, col)) <= tol) {
            throw NumericError("regmean: accumulated Gram is singular despite ridge");
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(s(col, j), s(pivot, j));
            }
            for (std::size_t j = 0; j < b.cols(); ++j) {
                std::swap(b(col, j), b(pivot, j));
            }
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double factor = s(r, col) / s(col, col);
            if (factor == 0.0) {
                continue;
            }
            for (std::size_t j = col; j < n; ++j) {
                s(r, j) -= factor * s(col, j);
            }
            for (std::size_t j = 0; j < b.cols(); ++j) {
                b(r, j) -= factor * b(col, j);
            }
        }
    }
    Matrix x(n, b.cols());
    for (std::size_t ri = n; ri-- > 0;) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = b(ri, j);
            for (std::size_t k = ri + 1; k < n; ++k) {
                acc -= s(ri, k) * x(k, j);
            }
            x(ri, j) = acc / s(ri, ri);
        }
    }
    if (!x.all_finite()) {
        throw NumericError("regmean: linear solve produced non-finite values");
    }
    return x;
}

TransformerModel average_models(const std::vector<TransformerModel>& models,
                                const std::vector<double>& weights) {
    std::vector<double> merged(parameter_count(models.front()), 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        const std::vector<double> theta = flatten(models[i]);
        for (std::size_t k = 0; k < merged.size(); ++k) {
            merged[k] += weights[i] * theta[k];
        }
    }
    TransformerModel out = models.front();
    unflatten_into(out, merged);
    return out;
}

} // namespace

TransformerModel fuse_simple(const std::vector<TransformerModel>& models,
                             const std::optional<std::vector<double>>& weights) {
    require_same_configs(models, 2, "fuse_simple");
    return average_models(models, resolve_weights(models.size(), weights));
}

TransformerModel fuse_fisher(const std::vector<TransformerModel>& models,
                             const std::vector<SyntheticDataset>& datasets,
                             const FusionMethod& method) {
    require_same_configs(models, 1, "fuse_fisher");
    require_datasets(models, datasets, "fuse_fisher");
    if (method.fisher_items == 0) {
        throw ValueError("fuse_fisher: fisher_items must be >= 1");
    }
    if (!(method.fisher_epsilon > 0.0)) {
        throw ValueError("fuse_fisher: epsilon must be > 0");
    }
    const std::size_t dim = parameter_count(models.front());
    std::vector<double> numerator(dim, 0.0);
    std::vector<double> denominator(dim, 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (datasets[i].items.size() < method.fisher_items) {
            throw ValueError("fuse_fisher: dataset " + std::to_string(i) + " has " +
                             std::to_string(datasets[i].items.size()) + " items, need " +
                             std::to_string(method.fisher_items));
        }
        std::vector<double> fisher(dim, 0.0);
        for (std::size_t k = 0; k < method.fisher_items; ++k) {
            const std::vector<double> grad = fd_gradient(models[i], datasets[i].items[k]);
            for (std::size_t p = 0; p < dim; ++p) {
                if (!std::isfinite(grad[p])) {
                    throw NumericError("fuse_fisher: non-finite gradient entry");
                }
                fisher[p] += grad[p] * grad[p];
            }
        }
        const std::vector<double> theta = flatten(models[i]);
        const double inv_items = 1.0 / static_cast<double>(method.fisher_items);
        for (std::size_t p = 0; p < dim; ++p) {
            const double f = fisher[p] * inv_items + method.fisher_epsilon;
            numerator[p] += f * theta[p];
            denominator[p] += f;
        }
    }
    for (std::size_t p = 0; p < dim; ++p) {
        numerator[p] /= denominator[p];
    }
    TransformerModel out = models.front();
    unflatten_into(out, numerator);
    return out;
}

Matrix regmean_merge_map(const std::vector<Matrix>& grams, const std::vector<Matrix>& weights,
                         double lambda_scaled) {
    if (grams.empty() || grams.size() != weights.size()) {
        throw ValueError("regmean: need one Gram per weight matrix");
    }
    const std::size_t in_dim = grams.front().rows();
    const std::size_t out_dim = weights.front().rows();
    if (lambda_scaled < 0.0) {
        throw ValueError("regmean: lambda must be >= 0");
    }
    Matrix s(in_dim, in_dim);
    Matrix rhs(in_dim, out_dim);
    Matrix avg_t(in_dim, out_dim);
    const double uniform = 1.0 / static_cast<double>(weights.size());
    for (std::size_t i = 0; i < grams.size(); ++i) {
        if (grams[i].rows() != in_dim || grams[i].cols() != in_dim ||
            weights[i].rows() != out_dim || weights[i].cols() != in_dim) {
            throw DimensionError("regmean: Gram/weight shapes are inconsistent");
        }
        s += grams[i];
        rhs += grams[i] * weights[i].transposed();
        Matrix wt = weights[i].transposed();
        wt *= uniform;
        avg_t += wt;
    }
    for (std::size_t d = 0; d < in_dim; ++d) {
        s(d, d) += lambda_scaled;
    }
    avg_t *= lambda_scaled;
    rhs += avg_t;
    return solve_linear(std::move(s), std::move(rhs)).transposed();
}

TransformerModel fuse_regmean(const std::vector<TransformerModel>& models,
                              const std::vector<SyntheticDataset>& datasets,
                              const FusionMethod& method) {
    require_same_configs(models, 1, "fuse_regmean");
    require_datasets(models, datasets, "fuse_regmean");
    if (!(method.regmean_gamma > 0.0) || method.regmean_gamma > 1.0) {
        throw ValueError("fuse_regmean: gamma must be in (0, 1]");
    }
    if (method.regmean_lambda < 0.0 || !std::isfinite(method.regmean_lambda)) {
        throw ValueError("fuse_regmean: lambda must be finite and >= 0");
    }
    const TransformerConfig& cfg = models.front().config;

    std::vector<std::map<std::string, ActivationRecord>> stats;
    stats.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
        stats.push_back(capture_activations(models[i], datasets[i]));
    }
    const auto scaled_gram = [&](std::size_t i, const std::string& site) {
        const auto it = stats[i].find(site);
        if (it == stats[i].end()) {
            throw NumericError("fuse_regmean: missing activation record " + site);
        }
        Matrix g = it->second.gram;
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                if (r != c) {
                    g(r, c) *= method.regmean_gamma;
                }
            }
        }
        return g;
    };
    const auto merge_site = [&](const std::string& site,
                                const std::vector<Matrix>& weight_list) {
        std::vector<Matrix> grams;
        grams.reserve(models.size());
        double trace = 0.0;
        for (std::size_t i = 0; i < models.size(); ++i) {
            grams.push_back(scaled_gram(i, site));
            for (std::size_t d = 0; d < grams.back().rows(); ++d) {
                trace += grams.back()(d, d);
            }
        }
        const double lambda_scaled =
            method.regmean_lambda * trace / static_cast<double>(grams.front().rows());
        return regmean_merge_map(grams, weight_list, lambda_scaled);
    };

    // Start from the simple average (biases, LN, embedding, classifier bias),
    // then overwrite every linear weight with its regression merge.
    TransformerModel out =
        average_models(models, std::vector<double>(models.size(), 1.0 / models.size()));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string at = "layer." + std::to_string(l);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const auto collect = [&](Matrix AttentionHeadParams::* member) {
                std::vector<Matrix> ws;
                ws.reserve(models.size());
                for (const TransformerModel& m : models) {
                    ws.push_back(m.blocks[l].attn.heads[h].*member);
                }
                return ws;
            };
            out.blocks[l].attn.heads[h].w_q =
                merge_site(at + ".attn.in", collect(&AttentionHeadParams::w_q));
            out.blocks[l].attn.heads[h].w_k =
                merge_site(at + ".attn.in", collect(&AttentionHeadParams::w_k));
            out.blocks[l].attn.heads[h].w_v =
                merge_site(at + ".attn.in", collect(&AttentionHeadParams::w_v));
        }
        // The concatenated-output projection is one d_model x d_model map.
        {
            std::vector<Matrix> ws;
            ws.reserve(models.size());
            for (const TransformerModel& m : models) {
                Matrix full(cfg.d_model, cfg.d_model);
                for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                    const Matrix& w_o = m.blocks[l].attn.heads[h].w_o;
                    for (std::size_t r = 0; r < cfg.d_model; ++r) {
                        for (std::size_t c = 0; c < cfg.d_head; ++c) {
                            full(r, h * cfg.d_head + c) = w_o(r, c);
                        }
                    }
                }
                ws.push_back(std::move(full));
            }
            const Matrix merged = merge_site(at + ".attn.concat", ws);
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                Matrix& w_o = out.blocks[l].attn.heads[h].w_o;
                for (std::size_t r = 0; r < cfg.d_model; ++r) {
                    for (std::size_t c = 0; c < cfg.d_head; ++c) {
                        w_o(r, c) = merged(r, h * cfg.d_head + c);
                    }
                }
            }
        }
        {
            std::vector<Matrix> ws;
            for (const TransformerModel& m : models) {
                ws.push_back(m.blocks[l].ffn.w_i);
            }
            out.blocks[l].ffn.w_i = merge_site(at + ".ffn.in", ws);
        }
        {
            std::vector<Matrix> ws;
            for (const TransformerModel& m : models) {
                ws.push_back(m.blocks[l].ffn.w_o);
            }
            out.blocks[l].ffn.w_o = merge_site(at + ".ffn.hidden", ws);
        }
    }
    {
        std::vector<Matrix> ws;
        for (const TransformerModel& m : models) {
            ws.push_back(m.classifier_w);
        }
        out.classifier_w = merge_site("classifier.in", ws);
    }
    return out;
}

FuseResult fuse(const std::vector<TransformerModel>& models,
                const std::vector<SyntheticDataset>& datasets, const FusionMethod& method,
                bool match_first, const MatchOptions& match_opts, std::size_t anchor_index) {
    require_same_configs(models, method.kind == FusionKind::simple ? 2 : 1, "fuse");
    FuseResult result;
    const std::vector<TransformerModel>* inputs = &models;
    std::vector<TransformerModel> matched;
    if (match_first && models.size() >= 2) {
        auto [m, reports] = match_to_anchor(models, anchor_index, match_opts);
        matched = std::move(m);
        result.reports = std::move(reports);
        inputs = &matched;
    }
    switch (method.kind) {
    case FusionKind::simple:
        result.merged = fuse_simple(*inputs, method.weights);
        break;
    case FusionKind::fisher:
        result.merged = fuse_fisher(*inputs, datasets, method);
        break;
    case FusionKind::regmean:
        result.merged = fuse_regmean(*inputs, datasets, method);
        break;
    default:
        throw ValueError("fuse: unknown method");
    }
    return result;
}

} // namespace rotsym
