// Command-line front end: generate, match, fuse, analyze. Talks to the
// library exclusively through the C interface in rotsym.h.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rotsym.h"

namespace {

// Exit codes: 0 success, 2 usage error, 1 runtime error.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(rsym_status status) {
    if (status != RSYM_OK) {
        throw std::runtime_error(rsym_last_error());
    }
}

template <typename T, void (*Free)(T*)>
struct HandleDeleter {
    void operator()(T* p) const { Free(p); }
};

using ModelPtr = std::unique_ptr<rsym_model, HandleDeleter<rsym_model, rsym_model_free>>;
using DatasetPtr = std::unique_ptr<rsym_dataset, HandleDeleter<rsym_dataset, rsym_dataset_free>>;
using ReportPtr = std::unique_ptr<rsym_report, HandleDeleter<rsym_report, rsym_report_free>>;
using CurvePtr = std::unique_ptr<rsym_curve, HandleDeleter<rsym_curve, rsym_curve_free>>;

void require_file(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw UsageError("no such file: " + path);
    }
}

ModelPtr load_model(const std::string& path) {
    require_file(path);
    rsym_model* raw = nullptr;
    check(rsym_model_load(path.c_str(), &raw));
    return ModelPtr(raw);
}

DatasetPtr load_dataset(const std::string& path) {
    require_file(path);
    rsym_dataset* raw = nullptr;
    check(rsym_dataset_load(path.c_str(), &raw));
    return DatasetPtr(raw);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string::size_type start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string::npos ? text.size() : comma;
        out.push_back(text.substr(start, end - start));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size() || text.empty() || text[0] == '-') {
            throw std::invalid_argument(text);
        }
        return v;
    } catch (const std::exception&) {
        throw UsageError("invalid " + what + ": \"" + text + "\"");
    }
}

double parse_f64(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument(text);
        }
        return v;
    } catch (const std::exception&) {
        throw UsageError("invalid " + what + ": \"" + text + "\"");
    }
}

// Config string: comma-separated key=value pairs, e.g.
// "n_layers=2,n_heads=2,d_model=16". d_head defaults to d_model / n_heads
// and d_ff to 4 * d_model when not given.
rsym_config parse_config(const std::string& text) {
    rsym_config cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_head = 0;
    cfg.d_ff = 0;
    cfg.vocab_size = 16;
    cfg.n_classes = 4;
    cfg.seq_len = 8;
    if (!text.empty()) {
        for (const std::string& pair : split_list(text)) {
            const auto eq = pair.find('=');
            if (eq == std::string::npos) {
                throw UsageError("config entry is not key=value: \"" + pair + "\"");
            }
            const std::string key = pair.substr(0, eq);
            const auto value = static_cast<uint32_t>(
                parse_u64(pair.substr(eq + 1), "config value for " + key));
            if (key == "n_layers") {
                cfg.n_layers = value;
            } else if (key == "n_heads") {
                cfg.n_heads = value;
            } else if (key == "d_model") {
                cfg.d_model = value;
            } else if (key == "d_head") {
                cfg.d_head = value;
            } else if (key == "d_ff") {
                cfg.d_ff = value;
            } else if (key == "vocab_size") {
                cfg.vocab_size = value;
            } else if (key == "n_classes") {
                cfg.n_classes = value;
            } else if (key == "seq_len") {
                cfg.seq_len = value;
            } else {
                throw UsageError("unknown config key: \"" + key + "\"");
            }
        }
    }
    if (cfg.d_head == 0) {
        if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
            throw UsageError("d_model must be divisible by n_heads when d_head is omitted");
        }
        cfg.d_head = cfg.d_model / cfg.n_heads;
    }
    if (cfg.d_ff == 0) {
        cfg.d_ff = 4 * cfg.d_model;
    }
    return cfg;
}

struct GenArgs {
    std::string config_text;
    std::uint64_t seed = 0;
    double noise = 0.0;
    std::uint32_t n_models = 2;
    std::uint32_t n_items = 64;
    double scale = 0.2;
    std::string out_dir;
};

// Seed split: base model S, dataset S+1, end model i uses S+2+2i for the
// symmetry and S+3+2i for the noise.
int run_gen(const GenArgs& args) {
    const rsym_config cfg = parse_config(args.config_text);
    if (args.n_models == 0) {
        throw UsageError("--n-models must be >= 1");
    }
    if (args.n_items == 0) {
        throw UsageError("--n-items must be >= 1");
    }

    rsym_model* base_raw = nullptr;
    check(rsym_model_random(&cfg, args.seed, args.scale, &base_raw));
    ModelPtr base(base_raw);

    rsym_dataset* data_raw = nullptr;
    check(rsym_dataset_generate(base.get(), args.n_items, args.seed + 1, &data_raw));
    DatasetPtr data(data_raw);

    std::vector<ModelPtr> ends;
    for (std::uint32_t i = 0; i < args.n_models; ++i) {
        rsym_model* transformed = nullptr;
        check(rsym_model_apply_random_symmetry(base.get(), args.seed + 2 + 2ull * i,
                                               &transformed));
        ModelPtr end(transformed);
        rsym_model* noisy = nullptr;
        check(rsym_model_add_noise(end.get(), args.noise, args.seed + 3 + 2ull * i, &noisy));
        ends.emplace_back(noisy);
    }

    std::filesystem::create_directories(args.out_dir);
    const auto path_of = [&](const std::string& name) {
        return (std::filesystem::path(args.out_dir) / name).string();
    };
    check(rsym_model_save(base.get(), path_of("base.rsym").c_str()));
    for (std::uint32_t i = 0; i < args.n_models; ++i) {
        check(rsym_model_save(ends[i].get(),
                              path_of("end_" + std::to_string(i) + ".rsym").c_str()));
    }
    check(rsym_dataset_save(data.get(), path_of("data.rsds").c_str()));

    std::printf("wrote base.rsym, %u end model(s), data.rsds to %s\n", args.n_models,
                args.out_dir.c_str());
    std::printf("config: n_layers=%u n_heads=%u d_model=%u d_head=%u d_ff=%u vocab_size=%u "
                "n_classes=%u seq_len=%u\n",
                cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_head, cfg.d_ff, cfg.vocab_size,
                cfg.n_classes, cfg.seq_len);
    std::printf("seed=%llu noise=%g n_items=%u scale=%g\n",
                static_cast<unsigned long long>(args.seed), args.noise, args.n_items, args.scale);
    return 0;
}

struct MatchArgs {
    std::string src_path;
    std::string anchor_path;
    std::string out_path;
    std::string report_path;
    bool no_ffn = false;
    bool no_attn = false;
    bool no_rescale = false;
    std::string layers_text;
    std::int64_t tail = -1;
    std::uint32_t parallel = 1;
};

int run_match(const MatchArgs& args) {
    if (!args.layers_text.empty() && args.tail >= 0) {
        throw UsageError("--layers and --tail are mutually exclusive");
    }
    if (args.parallel == 0) {
        throw UsageError("--parallel must be >= 1");
    }
    require_file(args.src_path);
    require_file(args.anchor_path);

    ModelPtr src = load_model(args.src_path);
    ModelPtr anchor = load_model(args.anchor_path);
    rsym_config cfg;
    check(rsym_model_get_config(src.get(), &cfg));

    std::vector<uint32_t> layers;
    bool have_subset = false;
    if (!args.layers_text.empty()) {
        have_subset = true;
        for (const std::string& item : split_list(args.layers_text)) {
            const auto idx = static_cast<uint32_t>(parse_u64(item, "--layers entry"));
            if (idx >= cfg.n_layers) {
                throw UsageError("--layers entry " + item + " out of range, model has " +
                                 std::to_string(cfg.n_layers) + " layer(s)");
            }
            layers.push_back(idx);
        }
    } else if (args.tail >= 0) {
        have_subset = true;
        const auto k = static_cast<uint64_t>(args.tail);
        if (k > cfg.n_layers) {
            throw UsageError("--tail exceeds the model's layer count");
        }
        for (uint32_t i = cfg.n_layers - static_cast<uint32_t>(k); i < cfg.n_layers; ++i) {
            layers.push_back(i);
        }
    }

    rsym_match_options opts;
    rsym_match_options_init(&opts);
    opts.enable_ffn = args.no_ffn ? 0 : 1;
    opts.enable_attn = args.no_attn ? 0 : 1;
    opts.enable_rescale = args.no_rescale ? 0 : 1;
    if (have_subset) {
        opts.layers = layers.data();
        opts.n_layers = layers.size();
    }
    opts.parallel_degree = args.parallel;

    rsym_model* matched_raw = nullptr;
    rsym_report* report_raw = nullptr;
    check(rsym_match(src.get(), anchor.get(), &opts, &matched_raw, &report_raw));
    ModelPtr matched(matched_raw);
    ReportPtr report(report_raw);

    check(rsym_model_save(matched.get(), args.out_path.c_str()));
    if (!args.report_path.empty()) {
        check(rsym_report_save_json(report.get(), args.report_path.c_str()));
    }

    double before = 0.0;
    double after = 0.0;
    check(rsym_report_distances(report.get(), &before, &after));
    uint32_t n_layers = 0;
    check(rsym_report_layer_count(report.get(), &n_layers));
    uint32_t fallbacks = 0;
    check(rsym_report_fallbacks(report.get(), &fallbacks));

    std::printf("distance before %.17g\n", before);
    std::printf("distance after  %.17g\n", after);
    for (uint32_t l = 0; l < n_layers; ++l) {
        double v[6];
        int selected = 0;
        check(rsym_report_layer_values(report.get(), l, v, &selected));
        if (selected == 0) {
            std::printf("layer %u: skipped\n", l);
            continue;
        }
        std::printf("layer %u: ffn %.6g -> %.6g, attn %.6g -> %.6g, rescale %.6g -> %.6g\n", l,
                    v[0], v[1], v[2], v[3], v[4], v[5]);
    }
    if (fallbacks > 0) {
        std::printf("rescale fallbacks: %u\n", fallbacks);
    }
    return 0;
}

struct FuseArgs {
    std::string models_text;
    std::string method = "simple";
    bool match_first = false;
    std::uint32_t anchor_index = 0;
    std::string data_text;
    std::string weights_text;
    std::uint32_t fisher_items = 16;
    double fisher_epsilon = 1e-8;
    double regmean_gamma = 0.9;
    double regmean_lambda = 1e-6;
    std::string out_path;
};

int run_fuse(const FuseArgs& args) {
    const std::vector<std::string> model_paths = split_list(args.models_text);
    if (model_paths.size() < 2) {
        throw UsageError("--models needs at least two comma-separated paths");
    }
    rsym_fuse_options opts;
    rsym_fuse_options_init(&opts);
    if (args.method == "simple") {
        opts.method = RSYM_FUSE_SIMPLE;
    } else if (args.method == "fisher") {
        opts.method = RSYM_FUSE_FISHER;
    } else if (args.method == "regmean") {
        opts.method = RSYM_FUSE_REGMEAN;
    } else {
        throw UsageError("unknown --method: \"" + args.method + "\" (want simple|fisher|regmean)");
    }
    if (args.anchor_index >= model_paths.size()) {
        throw UsageError("--anchor-index out of range");
    }

    std::vector<std::string> data_paths;
    if (!args.data_text.empty()) {
        data_paths = split_list(args.data_text);
    }
    const bool needs_data = opts.method != RSYM_FUSE_SIMPLE;
    if (needs_data && data_paths.size() != model_paths.size()) {
        throw UsageError("--data needs one dataset per model for fisher/regmean");
    }

    std::vector<double> weights;
    if (!args.weights_text.empty()) {
        for (const std::string& item : split_list(args.weights_text)) {
            weights.push_back(parse_f64(item, "--weights entry"));
        }
        if (weights.size() != model_paths.size()) {
            throw UsageError("--weights needs one value per model");
        }
    }

    for (const std::string& p : model_paths) {
        require_file(p);
    }
    for (const std::string& p : data_paths) {
        require_file(p);
    }

    std::vector<ModelPtr> models;
    std::vector<const rsym_model*> model_handles;
    for (const std::string& p : model_paths) {
        models.push_back(load_model(p));
        model_handles.push_back(models.back().get());
    }
    std::vector<DatasetPtr> datasets;
    std::vector<const rsym_dataset*> dataset_handles;
    for (const std::string& p : data_paths) {
        datasets.push_back(load_dataset(p));
        dataset_handles.push_back(datasets.back().get());
    }

    if (!weights.empty()) {
        opts.weights = weights.data();
        opts.n_weights = weights.size();
    }
    opts.fisher_items = args.fisher_items;
    opts.fisher_epsilon = args.fisher_epsilon;
    opts.regmean_gamma = args.regmean_gamma;
    opts.regmean_lambda = args.regmean_lambda;
    opts.match_first = args.match_first ? 1 : 0;
    opts.anchor_index = args.anchor_index;

    rsym_model* merged_raw = nullptr;
    rsym_report** reports = nullptr;
    size_t n_reports = 0;
    check(rsym_fuse(model_handles.data(), model_handles.size(),
                    dataset_handles.empty() ? nullptr : dataset_handles.data(),
                    dataset_handles.size(), &opts, &merged_raw, &reports, &n_reports));
    ModelPtr merged(merged_raw);

    check(rsym_model_save(merged.get(), args.out_path.c_str()));

    std::printf("fused %zu models with method %s%s -> %s\n", model_paths.size(),
                args.method.c_str(), args.match_first ? " after matching" : "",
                args.out_path.c_str());
    for (size_t i = 0; i < n_reports; ++i) {
        double before = 0.0;
        double after = 0.0;
        check(rsym_report_distances(reports[i], &before, &after));
        std::printf("model %zu: distance %.6g -> %.6g\n", i, before, after);
    }
    rsym_report_list_free(reports, n_reports);
    return 0;
}

struct InterpolateArgs {
    std::string a_path;
    std::string b_path;
    std::string data_path;
    std::uint32_t points = 25;
    std::string out_path;
};

int run_interpolate(const InterpolateArgs& args) {
    if (args.points < 3) {
        throw UsageError("--points must be >= 3");
    }
    ModelPtr a = load_model(args.a_path);
    ModelPtr b = load_model(args.b_path);
    DatasetPtr data = load_dataset(args.data_path);

    rsym_curve* curve_raw = nullptr;
    check(rsym_interpolate(a.get(), b.get(), data.get(), args.points, &curve_raw));
    CurvePtr curve(curve_raw);
    check(rsym_curve_save_csv(curve.get(), args.out_path.c_str()));

    double barrier = 0.0;
    double loss_a = 0.0;
    double loss_b = 0.0;
    check(rsym_curve_stats(curve.get(), &barrier, &loss_a, &loss_b));
    std::printf("barrier %.17g\n", barrier);
    std::printf("loss_a %.17g\n", loss_a);
    std::printf("loss_b %.17g\n", loss_b);
    return 0;
}

int run_distance(const std::string& a_path, const std::string& b_path) {
    ModelPtr a = load_model(a_path);
    ModelPtr b = load_model(b_path);
    double d = 0.0;
    check(rsym_param_distance(a.get(), b.get(), &d));
    std::printf("distance %.17g\n", d);
    return 0;
}

int run_equiv_check(const std::string& a_path, const std::string& b_path, std::uint32_t n,
                    std::uint64_t seed) {
    if (n == 0) {
        throw UsageError("--n must be >= 1");
    }
    ModelPtr a = load_model(a_path);
    ModelPtr b = load_model(b_path);
    double max_abs = 0.0;
    double mean_abs = 0.0;
    check(rsym_equiv_check(a.get(), b.get(), n, seed, &max_abs, &mean_abs));
    std::printf("max_abs_diff %.17g\n", max_abs);
    std::printf("mean_abs_diff %.17g\n", mean_abs);
    return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path) {
    ModelPtr model = load_model(model_path);
    DatasetPtr data = load_dataset(data_path);
    double loss = 0.0;
    double accuracy = 0.0;
    check(rsym_eval(model.get(), data.get(), &loss, &accuracy));
    std::printf("loss %.17g\n", loss);
    std::printf("accuracy %.17g\n", accuracy);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter symmetry matching and model fusion toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd =
        app.add_subcommand("gen", "generate a base model, symmetric end models, and a dataset");
    gen_cmd->add_option("--config", gen.config_text,
                        "comma-separated key=value pairs (n_layers, n_heads, d_model, d_head, "
                        "d_ff, vocab_size, n_classes, seq_len)");
    gen_cmd->add_option("--seed", gen.seed, "master seed; all randomness derives from it");
    gen_cmd->add_option("--noise", gen.noise, "noise sigma added to each end model");
    gen_cmd->add_option("--n-models", gen.n_models, "number of end models");
    gen_cmd->add_option("--n-items", gen.n_items, "dataset size");
    gen_cmd->add_option("--scale", gen.scale, "base model weight scale");
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();

    MatchArgs match;
    CLI::App* match_cmd = app.add_subcommand("match", "align a source model to an anchor");
    match_cmd->add_option("--src", match.src_path, "source model")->required();
    match_cmd->add_option("--anchor", match.anchor_path, "anchor model")->required();
    match_cmd->add_option("--out", match.out_path, "matched model output")->required();
    match_cmd->add_option("--report", match.report_path, "JSON report output");
    match_cmd->add_flag("--no-ffn", match.no_ffn, "skip feed-forward permutation matching");
    match_cmd->add_flag("--no-attn", match.no_attn, "skip attention rotation matching");
    match_cmd->add_flag("--no-rescale", match.no_rescale, "skip attention rescale matching");
    match_cmd->add_option("--layers", match.layers_text, "comma-separated layer indices");
    match_cmd->add_option("--tail", match.tail, "match only the last k layers");
    match_cmd->add_option("--parallel", match.parallel, "worker threads for matching units");

    FuseArgs fuse;
    CLI::App* fuse_cmd = app.add_subcommand("fuse", "merge multiple models into one");
    fuse_cmd->add_option("--models", fuse.models_text, "comma-separated model paths")->required();
    fuse_cmd->add_option("--method", fuse.method, "simple | fisher | regmean");
    fuse_cmd->add_flag("--match", fuse.match_first, "align models to the anchor before fusing");
    fuse_cmd->add_option("--anchor-index", fuse.anchor_index, "index of the anchor model");
    fuse_cmd->add_option("--data", fuse.data_text, "comma-separated dataset paths");
    fuse_cmd->add_option("--weights", fuse.weights_text,
                         "comma-separated simple-fusion weights, must sum to 1");
    fuse_cmd->add_option("--fisher-items", fuse.fisher_items, "items per dataset for fisher");
    fuse_cmd->add_option("--epsilon", fuse.fisher_epsilon, "fisher floor epsilon");
    fuse_cmd->add_option("--gamma", fuse.regmean_gamma, "regmean off-diagonal scaling");
    fuse_cmd->add_option("--lambda", fuse.regmean_lambda, "regmean ridge factor");
    fuse_cmd->add_option("--out", fuse.out_path, "merged model output")->required();

    InterpolateArgs interp;
    CLI::App* interp_cmd =
        app.add_subcommand("interpolate", "loss along the line between two models");
    interp_cmd->add_option("--a", interp.a_path, "model at alpha = 1")->required();
    interp_cmd->add_option("--b", interp.b_path, "model at alpha = 0")->required();
    interp_cmd->add_option("--data", interp.data_path, "evaluation dataset")->required();
    interp_cmd->add_option("--points", interp.points, "grid points including both ends");
    interp_cmd->add_option("--out", interp.out_path, "CSV output")->required();

    std::string dist_a;
    std::string dist_b;
    CLI::App* dist_cmd = app.add_subcommand("distance", "L2 parameter distance");
    dist_cmd->add_option("--a", dist_a, "first model")->required();
    dist_cmd->add_option("--b", dist_b, "second model")->required();

    std::string eq_a;
    std::string eq_b;
    std::uint32_t eq_n = 100;
    std::uint64_t eq_seed = 0;
    CLI::App* eq_cmd =
        app.add_subcommand("equiv-check", "compare logits on random token sequences");
    eq_cmd->add_option("--a", eq_a, "first model")->required();
    eq_cmd->add_option("--b", eq_b, "second model")->required();
    eq_cmd->add_option("--n", eq_n, "number of random inputs");
    eq_cmd->add_option("--seed", eq_seed, "input sampling seed");

    std::string eval_model;
    std::string eval_data;
    CLI::App* eval_cmd = app.add_subcommand("eval", "loss and accuracy on a dataset");
    eval_cmd->add_option("--model", eval_model, "model to evaluate")->required();
    eval_cmd->add_option("--data", eval_data, "evaluation dataset")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_cmd->parsed()) {
            return run_gen(gen);
        }
        if (match_cmd->parsed()) {
            return run_match(match);
        }
        if (fuse_cmd->parsed()) {
            return run_fuse(fuse);
        }
        if (interp_cmd->parsed()) {
            return run_interpolate(interp);
        }
        if (dist_cmd->parsed()) {
            return run_distance(dist_a, dist_b);
        }
        if (eq_cmd->parsed()) {
            return run_equiv_check(eq_a, eq_b, eq_n, eq_seed);
        }
        if (eval_cmd->parsed()) {
            return run_eval(eval_model, eval_data);
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
