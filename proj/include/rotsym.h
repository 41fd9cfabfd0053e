/* C interface to the rotsym library.
 *
 * All functions return rsym_status; RSYM_OK means success. On failure the
 * thread-local message from rsym_last_error() describes what went wrong and
 * every output parameter is left untouched. Objects returned through out
 * parameters are owned by the caller and released with the matching _free
 * function. Handles are immutable after creation and safe to share across
 * threads.
 */
#ifndef ROTSYM_H
#define ROTSYM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rsym_status {
    RSYM_OK = 0,
    RSYM_ERROR_INVALID_ARGUMENT = 1, /* null pointers, bad enum values */
    RSYM_ERROR_DIMENSION = 2,
    RSYM_ERROR_CONFIG = 3,
    RSYM_ERROR_VALUE = 4,
    RSYM_ERROR_NUMERIC = 5,
    RSYM_ERROR_FORMAT = 6,
    RSYM_ERROR_INTEGRITY = 7,
    RSYM_ERROR_IO = 8,
    RSYM_ERROR_UNKNOWN = 9
} rsym_status;

typedef struct rsym_model rsym_model;
typedef struct rsym_dataset rsym_dataset;
typedef struct rsym_report rsym_report;
typedef struct rsym_curve rsym_curve;

typedef struct rsym_config {
    uint32_t n_layers;
    uint32_t n_heads;
    uint32_t d_model;
    uint32_t d_head;
    uint32_t d_ff;
    uint32_t vocab_size;
    uint32_t n_classes;
    uint32_t seq_len;
} rsym_config;

typedef struct rsym_match_options {
    int enable_ffn;
    int enable_attn;
    int enable_rescale;
    const uint32_t* layers; /* NULL: match all layers */
    size_t n_layers;
    uint32_t parallel_degree;
} rsym_match_options;

typedef enum rsym_fuse_method {
    RSYM_FUSE_SIMPLE = 0,
    RSYM_FUSE_FISHER = 1,
    RSYM_FUSE_REGMEAN = 2
} rsym_fuse_method;

typedef struct rsym_fuse_options {
    int method; /* rsym_fuse_method */
    const double* weights; /* simple only; NULL: uniform */
    size_t n_weights;
    uint32_t fisher_items;
    double fisher_epsilon;
    double regmean_gamma;
    double regmean_lambda;
    int match_first;
    rsym_match_options match;
    uint32_t anchor_index;
} rsym_fuse_options;

const char* rsym_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* rsym_last_error(void);

void rsym_match_options_init(rsym_match_options* opts);
void rsym_fuse_options_init(rsym_fuse_options* opts);

/* ---- models ---------------------------------------------------------- */

rsym_status rsym_model_random(const rsym_config* config, uint64_t seed, double scale,
                              rsym_model** out);
rsym_status rsym_model_clone(const rsym_model* model, rsym_model** out);
rsym_status rsym_model_get_config(const rsym_model* model, rsym_config* out);
/* Applies a seeded random member of the model's equivalence class. */
rsym_status rsym_model_apply_random_symmetry(const rsym_model* model, uint64_t seed,
                                             rsym_model** out);
/* Adds i.i.d. normal(0, sigma^2) noise to every parameter. */
rsym_status rsym_model_add_noise(const rsym_model* model, double sigma, uint64_t seed,
                                 rsym_model** out);
rsym_status rsym_model_save(const rsym_model* model, const char* path);
rsym_status rsym_model_load(const char* path, rsym_model** out);
void rsym_model_free(rsym_model* model);

/* ---- datasets --------------------------------------------------------- */

rsym_status rsym_dataset_generate(const rsym_model* teacher, uint32_t n_items, uint64_t seed,
                                  rsym_dataset** out);
rsym_status rsym_dataset_size(const rsym_dataset* dataset, uint32_t* out);
rsym_status rsym_dataset_save(const rsym_dataset* dataset, const char* path);
rsym_status rsym_dataset_load(const char* path, rsym_dataset** out);
void rsym_dataset_free(rsym_dataset* dataset);

/* ---- matching --------------------------------------------------------- */

rsym_status rsym_match(const rsym_model* src, const rsym_model* anchor,
                       const rsym_match_options* opts, rsym_model** matched, rsym_report** report);
rsym_status rsym_report_distances(const rsym_report* report, double* before, double* after);
rsym_status rsym_report_layer_count(const rsym_report* report, uint32_t* out);
/* values: ffn before/after, attention before/after, rescale before/after. */
rsym_status rsym_report_layer_values(const rsym_report* report, uint32_t layer, double values[6],
                                     int* selected);
rsym_status rsym_report_fallbacks(const rsym_report* report, uint32_t* out);
rsym_status rsym_report_wall_seconds(const rsym_report* report, double* out);
rsym_status rsym_report_save_json(const rsym_report* report, const char* path);
void rsym_report_free(rsym_report* report);

/* ---- fusion ----------------------------------------------------------- */

/* datasets may be NULL/0 for the simple method. When match_first is set and
 * reports/n_reports are non-NULL, one report per input model is returned;
 * free with rsym_report_list_free. */
rsym_status rsym_fuse(const rsym_model* const* models, size_t n_models,
                      const rsym_dataset* const* datasets, size_t n_datasets,
                      const rsym_fuse_options* opts, rsym_model** merged, rsym_report*** reports,
                      size_t* n_reports);
void rsym_report_list_free(rsym_report** reports, size_t n_reports);

/* ---- analysis --------------------------------------------------------- */

rsym_status rsym_param_distance(const rsym_model* a, const rsym_model* b, double* out);
rsym_status rsym_equiv_check(const rsym_model* a, const rsym_model* b, uint32_t n_inputs,
                             uint64_t seed, double* max_abs, double* mean_abs);
rsym_status rsym_eval(const rsym_model* model, const rsym_dataset* dataset, double* loss,
                      double* accuracy);
rsym_status rsym_interpolate(const rsym_model* a, const rsym_model* b,
                             const rsym_dataset* dataset, uint32_t n_points, rsym_curve** out);
rsym_status rsym_curve_size(const rsym_curve* curve, uint32_t* out);
rsym_status rsym_curve_point(const rsym_curve* curve, uint32_t index, double* alpha,
                             double* loss);
rsym_status rsym_curve_stats(const rsym_curve* curve, double* barrier, double* loss_a,
                             double* loss_b);
rsym_status rsym_curve_save_csv(const rsym_curve* curve, const char* path);
void rsym_curve_free(rsym_curve* curve);

#ifdef __cplusplus
}
#endif

#endif /* ROTSYM_H */
