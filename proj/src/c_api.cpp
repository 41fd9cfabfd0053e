#include "rotsym.h"

#include <cstring>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rotsym/analysis.hpp"
#include "rotsym/errors.hpp"
#include "rotsym/fusion.hpp"
#include "rotsym/matching.hpp"
#include "rotsym/model.hpp"
#include "rotsym/persistence.hpp"
#include "rotsym/symmetry.hpp"

struct rsym_model {
    rotsym::TransformerModel impl;
};

struct rsym_dataset {
    rotsym::SyntheticDataset impl;
};

struct rsym_report {
    rotsym::MatchReport impl;
};

struct rsym_curve {
    rotsym::LossCurve impl;
};

namespace {

thread_local std::string g_last_error;

rsym_status fail(rsym_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

rsym_status fail_null(const char* what) {
    return fail(RSYM_ERROR_INVALID_ARGUMENT, std::string(what) + " must not be null");
}

template <typename F>
rsym_status guarded(F&& body) {
    try {
        return body();
    } catch (const rotsym::DimensionError& e) {
        return fail(RSYM_ERROR_DIMENSION, e.what());
    } catch (const rotsym::ConfigError& e) {
        return fail(RSYM_ERROR_CONFIG, e.what());
    } catch (const rotsym::ValueError& e) {
        return fail(RSYM_ERROR_VALUE, e.what());
    } catch (const rotsym::NumericError& e) {
        return fail(RSYM_ERROR_NUMERIC, e.what());
    } catch (const rotsym::FormatError& e) {
        return fail(RSYM_ERROR_FORMAT, e.what());
    } catch (const rotsym::IntegrityError& e) {
        return fail(RSYM_ERROR_INTEGRITY, e.what());
    } catch (const rotsym::IoError& e) {
        return fail(RSYM_ERROR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(RSYM_ERROR_UNKNOWN, e.what());
    } catch (...) {
        return fail(RSYM_ERROR_UNKNOWN, "unknown error");
    }
}

rotsym::TransformerConfig to_cpp(const rsym_config& c) {
    rotsym::TransformerConfig out;
    out.n_layers = c.n_layers;
    out.n_heads = c.n_heads;
    out.d_model = c.d_model;
    out.d_head = c.d_head;
    out.d_ff = c.d_ff;
    out.vocab_size = c.vocab_size;
    out.n_classes = c.n_classes;
    out.seq_len = c.seq_len;
    return out;
}

rsym_config to_c(const rotsym::TransformerConfig& c) {
    rsym_config out;
    out.n_layers = static_cast<uint32_t>(c.n_layers);
    out.n_heads = static_cast<uint32_t>(c.n_heads);
    out.d_model = static_cast<uint32_t>(c.d_model);
    out.d_head = static_cast<uint32_t>(c.d_head);
    out.d_ff = static_cast<uint32_t>(c.d_ff);
    out.vocab_size = static_cast<uint32_t>(c.vocab_size);
    out.n_classes = static_cast<uint32_t>(c.n_classes);
    out.seq_len = static_cast<uint32_t>(c.seq_len);
    return out;
}

rotsym::MatchOptions to_cpp(const rsym_match_options& o) {
    rotsym::MatchOptions out;
    out.enable_ffn = o.enable_ffn != 0;
    out.enable_attn = o.enable_attn != 0;
    out.enable_rescale = o.enable_rescale != 0;
    if (o.layers != nullptr) {
        std::vector<std::size_t> subset(o.n_layers);
        for (size_t i = 0; i < o.n_layers; ++i) {
            subset[i] = o.layers[i];
        }
        out.layer_subset = std::move(subset);
    }
    out.parallel_degree = o.parallel_degree;
    return out;
}

} // namespace

extern "C" {

const char* rsym_version(void) { return "1.0.0"; }

const char* rsym_last_error(void) { return g_last_error.c_str(); }

void rsym_match_options_init(rsym_match_options* opts) {
    if (opts == nullptr) {
        return;
    }
    opts->enable_ffn = 1;
    opts->enable_attn = 1;
    opts->enable_rescale = 1;
    opts->layers = nullptr;
    opts->n_layers = 0;
    opts->parallel_degree = 1;
}

void rsym_fuse_options_init(rsym_fuse_options* opts) {
    if (opts == nullptr) {
        return;
    }
    opts->method = RSYM_FUSE_SIMPLE;
    opts->weights = nullptr;
    opts->n_weights = 0;
    opts->fisher_items = 16;
    opts->fisher_epsilon = 1e-8;
    opts->regmean_gamma = 0.9;
    opts->regmean_lambda = 1e-6;
    opts->match_first = 0;
    rsym_match_options_init(&opts->match);
    opts->anchor_index = 0;
}

rsym_status rsym_model_random(const rsym_config* config, uint64_t seed, double scale,
                              rsym_model** out) {
    if (config == nullptr) {
        return fail_null("config");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_model>();
        handle->impl = rotsym::random_model(to_cpp(*config), seed, scale);
        *out = handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_model_clone(const rsym_model* model, rsym_model** out) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        *out = new rsym_model{model->impl};
        return RSYM_OK;
    });
}

rsym_status rsym_model_get_config(const rsym_model* model, rsym_config* out) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = to_c(model->impl.config);
    return RSYM_OK;
}

rsym_status rsym_model_apply_random_symmetry(const rsym_model* model, uint64_t seed,
                                             rsym_model** out) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        const rotsym::SymmetryTransform t = rotsym::random_symmetry(model->impl.config, seed);
        auto handle = std::make_unique<rsym_model>();
        handle->impl = rotsym::apply_model_symmetry(model->impl, t);
        *out = handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_model_add_noise(const rsym_model* model, double sigma, uint64_t seed,
                                 rsym_model** out) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_model>();
        handle->impl = rotsym::add_noise(model->impl, sigma, seed);
        *out = handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_model_save(const rsym_model* model, const char* path) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (path == nullptr) {
        return fail_null("path");
    }
    return guarded([&] {
        rotsym::save_model(model->impl, path);
        return RSYM_OK;
    });
}

rsym_status rsym_model_load(const char* path, rsym_model** out) {
    if (path == nullptr) {
        return fail_null("path");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_model>();
        handle->impl = rotsym::load_model(path);
        *out = handle.release();
        return RSYM_OK;
    });
}

void rsym_model_free(rsym_model* model) { delete model; }

rsym_status rsym_dataset_generate(const rsym_model* teacher, uint32_t n_items, uint64_t seed,
                                  rsym_dataset** out) {
    if (teacher == nullptr) {
        return fail_null("teacher");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_dataset>();
        handle->impl = rotsym::gen_synthetic(teacher->impl.config, teacher->impl, n_items, seed);
        *out = handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_dataset_size(const rsym_dataset* dataset, uint32_t* out) {
    if (dataset == nullptr) {
        return fail_null("dataset");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = static_cast<uint32_t>(dataset->impl.items.size());
    return RSYM_OK;
}

rsym_status rsym_dataset_save(const rsym_dataset* dataset, const char* path) {
    if (dataset == nullptr) {
        return fail_null("dataset");
    }
    if (path == nullptr) {
        return fail_null("path");
    }
    return guarded([&] {
        rotsym::save_dataset(dataset->impl, path);
        return RSYM_OK;
    });
}

rsym_status rsym_dataset_load(const char* path, rsym_dataset** out) {
    if (path == nullptr) {
        return fail_null("path");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_dataset>();
        handle->impl = rotsym::load_dataset(path);
        *out = handle.release();
        return RSYM_OK;
    });
}

void rsym_dataset_free(rsym_dataset* dataset) { delete dataset; }

rsym_status rsym_match(const rsym_model* src, const rsym_model* anchor,
                       const rsym_match_options* opts, rsym_model** matched,
                       rsym_report** report) {
    if (src == nullptr) {
        return fail_null("src");
    }
    if (anchor == nullptr) {
        return fail_null("anchor");
    }
    if (matched == nullptr) {
        return fail_null("matched");
    }
    return guarded([&] {
        rotsym::MatchOptions options;
        if (opts != nullptr) {
            options = to_cpp(*opts);
        }
        auto [model, rep] = rotsym::match_model(src->impl, anchor->impl, options);
        auto model_handle = std::make_unique<rsym_model>();
        model_handle->impl = std::move(model);
        if (report != nullptr) {
            *report = new rsym_report{std::move(rep)};
        }
        *matched = model_handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_report_distances(const rsym_report* report, double* before, double* after) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (before != nullptr) {
        *before = report->impl.distance_before;
    }
    if (after != nullptr) {
        *after = report->impl.distance_after;
    }
    return RSYM_OK;
}

rsym_status rsym_report_layer_count(const rsym_report* report, uint32_t* out) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = static_cast<uint32_t>(report->impl.layers.size());
    return RSYM_OK;
}

rsym_status rsym_report_layer_values(const rsym_report* report, uint32_t layer, double values[6],
                                     int* selected) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (values == nullptr) {
        return fail_null("values");
    }
    if (layer >= report->impl.layers.size()) {
        return fail(RSYM_ERROR_VALUE, "layer index out of range");
    }
    const rotsym::LayerObjectives& o = report->impl.layers[layer];
    values[0] = o.ffn_before;
    values[1] = o.ffn_after;
    values[2] = o.attn_before;
    values[3] = o.attn_after;
    values[4] = o.rescale_before;
    values[5] = o.rescale_after;
    if (selected != nullptr) {
        *selected = o.selected ? 1 : 0;
    }
    return RSYM_OK;
}

rsym_status rsym_report_fallbacks(const rsym_report* report, uint32_t* out) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = static_cast<uint32_t>(report->impl.rescale_fallbacks);
    return RSYM_OK;
}

rsym_status rsym_report_wall_seconds(const rsym_report* report, double* out) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = report->impl.wall_seconds;
    return RSYM_OK;
}

rsym_status rsym_report_save_json(const rsym_report* report, const char* path) {
    if (report == nullptr) {
        return fail_null("report");
    }
    if (path == nullptr) {
        return fail_null("path");
    }
    return guarded([&] {
        rotsym::save_match_report(report->impl, path);
        return RSYM_OK;
    });
}

void rsym_report_free(rsym_report* report) { delete report; }

rsym_status rsym_fuse(const rsym_model* const* models, size_t n_models,
                      const rsym_dataset* const* datasets, size_t n_datasets,
                      const rsym_fuse_options* opts, rsym_model** merged, rsym_report*** reports,
                      size_t* n_reports) {
    if (models == nullptr) {
        return fail_null("models");
    }
    if (merged == nullptr) {
        return fail_null("merged");
    }
    if (datasets == nullptr && n_datasets != 0) {
        return fail_null("datasets");
    }
    for (size_t i = 0; i < n_models; ++i) {
        if (models[i] == nullptr) {
            return fail_null("models[i]");
        }
    }
    for (size_t i = 0; i < n_datasets; ++i) {
        if (datasets[i] == nullptr) {
            return fail_null("datasets[i]");
        }
    }
    return guarded([&] {
        rsym_fuse_options options;
        rsym_fuse_options_init(&options);
        if (opts != nullptr) {
            options = *opts;
        }
        rotsym::FusionMethod method;
        switch (options.method) {
        case RSYM_FUSE_SIMPLE:
            method.kind = rotsym::FusionKind::simple;
            break;
        case RSYM_FUSE_FISHER:
            method.kind = rotsym::FusionKind::fisher;
            break;
        case RSYM_FUSE_REGMEAN:
            method.kind = rotsym::FusionKind::regmean;
            break;
        default:
            return fail(RSYM_ERROR_INVALID_ARGUMENT, "unknown fusion method");
        }
        if (options.weights != nullptr) {
            method.weights = std::vector<double>(options.weights,
                                                 options.weights + options.n_weights);
        }
        method.fisher_items = options.fisher_items;
        method.fisher_epsilon = options.fisher_epsilon;
        method.regmean_gamma = options.regmean_gamma;
        method.regmean_lambda = options.regmean_lambda;

        std::vector<rotsym::TransformerModel> model_vec;
        model_vec.reserve(n_models);
        for (size_t i = 0; i < n_models; ++i) {
            model_vec.push_back(models[i]->impl);
        }
        std::vector<rotsym::SyntheticDataset> data_vec;
        data_vec.reserve(n_datasets);
        for (size_t i = 0; i < n_datasets; ++i) {
            data_vec.push_back(datasets[i]->impl);
        }

        rotsym::FuseResult result =
            rotsym::fuse(model_vec, data_vec, method, options.match_first != 0,
                         to_cpp(options.match), options.anchor_index);

        auto merged_handle = std::make_unique<rsym_model>();
        merged_handle->impl = std::move(result.merged);
        if (reports != nullptr && n_reports != nullptr) {
            const size_t count = result.reports.size();
            rsym_report** list = count == 0 ? nullptr : new rsym_report*[count];
            for (size_t i = 0; i < count; ++i) {
                list[i] = new rsym_report{std::move(result.reports[i])};
            }
            *reports = list;
            *n_reports = count;
        }
        *merged = merged_handle.release();
        return RSYM_OK;
    });
}

void rsym_report_list_free(rsym_report** reports, size_t n_reports) {
    if (reports == nullptr) {
        return;
    }
    for (size_t i = 0; i < n_reports; ++i) {
        delete reports[i];
    }
    delete[] reports;
}

rsym_status rsym_param_distance(const rsym_model* a, const rsym_model* b, double* out) {
    if (a == nullptr) {
        return fail_null("a");
    }
    if (b == nullptr) {
        return fail_null("b");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        *out = rotsym::param_distance(a->impl, b->impl);
        return RSYM_OK;
    });
}

rsym_status rsym_equiv_check(const rsym_model* a, const rsym_model* b, uint32_t n_inputs,
                             uint64_t seed, double* max_abs, double* mean_abs) {
    if (a == nullptr) {
        return fail_null("a");
    }
    if (b == nullptr) {
        return fail_null("b");
    }
    return guarded([&] {
        const rotsym::EquivalenceReport rep =
            rotsym::equivalence_check(a->impl, b->impl, n_inputs, seed);
        if (max_abs != nullptr) {
            *max_abs = rep.max_abs_logit_diff;
        }
        if (mean_abs != nullptr) {
            *mean_abs = rep.mean_abs_diff;
        }
        return RSYM_OK;
    });
}

rsym_status rsym_eval(const rsym_model* model, const rsym_dataset* dataset, double* loss,
                      double* accuracy) {
    if (model == nullptr) {
        return fail_null("model");
    }
    if (dataset == nullptr) {
        return fail_null("dataset");
    }
    return guarded([&] {
        const double l = rotsym::loss(model->impl, dataset->impl);
        const double acc = rotsym::accuracy(model->impl, dataset->impl);
        if (loss != nullptr) {
            *loss = l;
        }
        if (accuracy != nullptr) {
            *accuracy = acc;
        }
        return RSYM_OK;
    });
}

rsym_status rsym_interpolate(const rsym_model* a, const rsym_model* b,
                             const rsym_dataset* dataset, uint32_t n_points, rsym_curve** out) {
    if (a == nullptr) {
        return fail_null("a");
    }
    if (b == nullptr) {
        return fail_null("b");
    }
    if (dataset == nullptr) {
        return fail_null("dataset");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    return guarded([&] {
        auto handle = std::make_unique<rsym_curve>();
        handle->impl = rotsym::interpolate_losses(a->impl, b->impl, dataset->impl, n_points);
        *out = handle.release();
        return RSYM_OK;
    });
}

rsym_status rsym_curve_size(const rsym_curve* curve, uint32_t* out) {
    if (curve == nullptr) {
        return fail_null("curve");
    }
    if (out == nullptr) {
        return fail_null("out");
    }
    *out = static_cast<uint32_t>(curve->impl.alphas.size());
    return RSYM_OK;
}

rsym_status rsym_curve_point(const rsym_curve* curve, uint32_t index, double* alpha,
                             double* loss) {
    if (curve == nullptr) {
        return fail_null("curve");
    }
    if (index >= curve->impl.alphas.size()) {
        return fail(RSYM_ERROR_VALUE, "curve index out of range");
    }
    if (alpha != nullptr) {
        *alpha = curve->impl.alphas[index];
    }
    if (loss != nullptr) {
        *loss = curve->impl.losses[index];
    }
    return RSYM_OK;
}

rsym_status rsym_curve_stats(const rsym_curve* curve, double* barrier, double* loss_a,
                             double* loss_b) {
    if (curve == nullptr) {
        return fail_null("curve");
    }
    if (barrier != nullptr) {
        *barrier = curve->impl.barrier;
    }
    if (loss_a != nullptr) {
        *loss_a = curve->impl.loss_a;
    }
    if (loss_b != nullptr) {
        *loss_b = curve->impl.loss_b;
    }
    return RSYM_OK;
}

rsym_status rsym_curve_save_csv(const rsym_curve* curve, const char* path) {
    if (curve == nullptr) {
        return fail_null("curve");
    }
    if (path == nullptr) {
        return fail_null("path");
    }
    return guarded([&] {
        rotsym::save_loss_curve(curve->impl, path);
        return RSYM_OK;
    });
}

void rsym_curve_free(rsym_curve* curve) { delete curve; }

} // extern "C"
