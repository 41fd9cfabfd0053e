#include "rotsym/matching.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "rotsym/analysis.hpp"
#include "rotsym/errors.hpp"
#include "rotsym/numerics.hpp"

namespace rotsym {

namespace {

double sq_diff(const Matrix& a, const Matrix& b) {
    const Matrix d = a - b;
    return dot(d, d);
}

void require_same_head_shapes(const AttentionHeadParams& a, const AttentionHeadParams& b) {
    if (!a.w_q.same_shape(b.w_q) || !a.b_q.same_shape(b.b_q) || !a.w_k.same_shape(b.w_k) ||
        !a.b_k.same_shape(b.b_k) || !a.w_v.same_shape(b.w_v) || !a.b_v.same_shape(b.b_v) ||
        !a.w_o.same_shape(b.w_o)) {
        throw DimensionError("attention match: head shapes differ");
    }
}

AttentionHeadParams rotate_head(const AttentionHeadParams& h, const Matrix& r_qk,
                                const Matrix& r_vo) {
    AttentionHeadParams out;
    out.w_q = matmul_tn(r_qk, h.w_q);
    out.b_q = h.b_q * r_qk;
    out.w_k = matmul_tn(r_qk, h.w_k);
    out.b_k = h.b_k * r_qk;
    out.w_v = matmul_tn(r_vo, h.w_v);
    out.b_v = h.b_v * r_vo;
    out.w_o = h.w_o * r_vo;
    return out;
}

AttentionHeadParams rescale_head(const AttentionHeadParams& h, double a_qk, double a_vo) {
    AttentionHeadParams out = h;
    out.w_q *= a_qk;
    out.b_q *= a_qk;
    out.w_k *= 1.0 / a_qk;
    out.b_k *= 1.0 / a_qk;
    out.w_v *= a_vo;
    out.b_v *= a_vo;
    out.w_o *= 1.0 / a_vo;
    return out;
}

// Best scale for one side pair: candidate stationary points of
//   f(a) = a^2 n1 - 2 a i1 + n1_anchor + n2 / a^2 - 2 i2 / a + n2_anchor
// where the first group scales by a and the second by 1/a. The candidate
// list always starts with a = 1 so ties keep the identity.
struct ScaleMoments {
    double n1 = 0.0;        // squared norm of the a-scaled source group
    double i1 = 0.0;        // inner product of that group with the anchor
    double n1_anchor = 0.0;
    double n2 = 0.0;        // squared norm of the 1/a-scaled source group
    double i2 = 0.0;
    double n2_anchor = 0.0;
};

double scale_objective(const ScaleMoments& m, double a) {
    return a * a * m.n1 - 2.0 * a * m.i1 + m.n1_anchor + m.n2 / (a * a) - 2.0 * m.i2 / a +
           m.n2_anchor;
}

std::pair<double, bool> pick_scale(const ScaleMoments& m) {
    std::vector<double> candidates{1.0};
    bool fell_back = false;
    try {
        for (double r : real_roots_quartic(m.n1, -m.i1, 0.0, m.i2, -m.n2)) {
            if (std::isfinite(r) && std::abs(r) > 1e-12) {
                candidates.push_back(r);
            }
        }
    } catch (const Error&) {
        fell_back = true; // no usable stationary points, keep a = 1
    }
    double best = candidates[0];
    double best_value = scale_objective(m, best);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double value = scale_objective(m, candidates[i]);
        if (std::isfinite(value) && value < best_value) {
            best_value = value;
            best = candidates[i];
        }
    }
    return {best, fell_back};
}

} // namespace

double ffn_objective(const FfnParams& x, const FfnParams& anchor) {
    return sq_diff(x.w_i, anchor.w_i) + sq_diff(x.b_i, anchor.b_i) + sq_diff(x.w_o, anchor.w_o);
}

double attention_objective(const AttentionHeadParams& x, const AttentionHeadParams& anchor) {
    return sq_diff(x.w_q, anchor.w_q) + sq_diff(x.b_q, anchor.b_q) + sq_diff(x.w_k, anchor.w_k) +
           sq_diff(x.b_k, anchor.b_k) + sq_diff(x.w_v, anchor.w_v) + sq_diff(x.b_v, anchor.b_v) +
           sq_diff(x.w_o, anchor.w_o);
}

FfnMatch match_ffn(const FfnParams& src, const FfnParams& anchor) {
    if (!src.w_i.same_shape(anchor.w_i) || !src.b_i.same_shape(anchor.b_i) ||
        !src.w_o.same_shape(anchor.w_o)) {
        throw DimensionError("ffn match: shapes differ");
    }
    Matrix cost = matmul_nt(src.w_i, anchor.w_i);
    cost += matmul_tn(src.b_i, anchor.b_i);
    cost += matmul_tn(src.w_o, anchor.w_o);

    FfnMatch out;
    out.perm = hungarian_max(cost);
    out.params = apply_ffn_permutation(src, out.perm);
    out.objective_before = ffn_objective(src, anchor);
    out.objective_after = ffn_objective(out.params, anchor);
    return out;
}

HeadRotationMatch match_attention_head(const AttentionHeadParams& src,
                                       const AttentionHeadParams& anchor) {
    require_same_head_shapes(src, anchor);

    Matrix m_qk = matmul_nt(src.w_q, anchor.w_q);
    m_qk += matmul_nt(src.w_k, anchor.w_k);
    m_qk += matmul_tn(src.b_q, anchor.b_q);
    m_qk += matmul_tn(src.b_k, anchor.b_k);
    const SvdResult qk = svd(m_qk);

    Matrix m_vo = matmul_nt(src.w_v, anchor.w_v);
    m_vo += matmul_tn(src.w_o, anchor.w_o);
    m_vo += matmul_tn(src.b_v, anchor.b_v);
    const SvdResult vo = svd(m_vo);

    HeadRotationMatch out;
    out.r_qk = matmul_nt(qk.u, qk.v);
    out.r_vo = matmul_nt(vo.u, vo.v);
    out.params = rotate_head(src, out.r_qk, out.r_vo);
    out.objective_before = attention_objective(src, anchor);
    out.objective_after = attention_objective(out.params, anchor);
    return out;
}

HeadRescaleMatch match_rescaling(const AttentionHeadParams& src,
                                 const AttentionHeadParams& anchor) {
    require_same_head_shapes(src, anchor);

    ScaleMoments qk;
    qk.n1 = dot(src.w_q, src.w_q) + dot(src.b_q, src.b_q);
    qk.i1 = dot(src.w_q, anchor.w_q) + dot(src.b_q, anchor.b_q);
    qk.n1_anchor = dot(anchor.w_q, anchor.w_q) + dot(anchor.b_q, anchor.b_q);
    qk.n2 = dot(src.w_k, src.w_k) + dot(src.b_k, src.b_k);
    qk.i2 = dot(src.w_k, anchor.w_k) + dot(src.b_k, anchor.b_k);
    qk.n2_anchor = dot(anchor.w_k, anchor.w_k) + dot(anchor.b_k, anchor.b_k);

    ScaleMoments vo;
    vo.n1 = dot(src.w_v, src.w_v) + dot(src.b_v, src.b_v);
    vo.i1 = dot(src.w_v, anchor.w_v) + dot(src.b_v, anchor.b_v);
    vo.n1_anchor = dot(anchor.w_v, anchor.w_v) + dot(anchor.b_v, anchor.b_v);
    vo.n2 = dot(src.w_o, src.w_o);
    vo.i2 = dot(src.w_o, anchor.w_o);
    vo.n2_anchor = dot(anchor.w_o, anchor.w_o);

    HeadRescaleMatch out;
    const auto [a_qk, fb_qk] = pick_scale(qk);
    const auto [a_vo, fb_vo] = pick_scale(vo);
    out.a_qk = a_qk;
    out.a_vo = a_vo;
    out.fell_back = fb_qk || fb_vo;
    out.params = rescale_head(src, out.a_qk, out.a_vo);
    out.objective_before = attention_objective(src, anchor);
    out.objective_after = attention_objective(out.params, anchor);
    return out;
}

namespace {

struct HeadUnitResult {
    Matrix r_qk;
    Matrix r_vo;
    double a_qk = 1.0;
    double a_vo = 1.0;
    AttentionHeadParams params;
    double attn_before = 0.0;
    double attn_after = 0.0;
    double rescale_before = 0.0;
    double rescale_after = 0.0;
    bool fell_back = false;
};

void run_tasks(std::vector<std::function<void()>>& tasks, std::size_t parallel_degree) {
    if (parallel_degree <= 1 || tasks.size() <= 1) {
        for (auto& task : tasks) {
            task();
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    const std::size_t n_threads = std::min(parallel_degree, tasks.size());
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= tasks.size()) {
                    return;
                }
                try {
                    tasks[idx]();
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace

std::pair<TransformerModel, MatchReport> match_model(const TransformerModel& src,
                                                     const TransformerModel& anchor,
                                                     const MatchOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!(src.config == anchor.config)) {
        throw ConfigError("match: source and anchor configs differ");
    }
    if (opts.parallel_degree == 0) {
        throw ValueError("match: parallel_degree must be >= 1");
    }
    const std::size_t n_layers = src.config.n_layers;
    const std::size_t n_heads = src.config.n_heads;

    std::vector<bool> selected(n_layers, true);
    if (opts.layer_subset) {
        selected.assign(n_layers, false);
        for (std::size_t l : *opts.layer_subset) {
            if (l >= n_layers) {
                throw ValueError("match: layer index " + std::to_string(l) +
                                 " out of range (layers " + std::to_string(n_layers) + ")");
            }
            selected[l] = true;
        }
    }

    TransformerModel matched = src;
    MatchReport report;
    report.transform = SymmetryTransform::identity(src.config);
    report.layers.assign(n_layers, LayerObjectives{});

    std::vector<FfnMatch> ffn_results(n_layers);
    std::vector<std::vector<HeadUnitResult>> head_results(n_layers);
    for (auto& v : head_results) {
        v.resize(n_heads);
    }

    // One task per FFN and per attention head; each writes only its own slot,
    // so results are identical for every parallel degree and schedule.
    std::vector<std::function<void()>> tasks;
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (!selected[l]) {
            continue;
        }
        if (opts.enable_ffn) {
            tasks.push_back([&, l] {
                ffn_results[l] = match_ffn(src.blocks[l].ffn, anchor.blocks[l].ffn);
            });
        }
        if (opts.enable_attn || opts.enable_rescale) {
            for (std::size_t h = 0; h < n_heads; ++h) {
                tasks.push_back([&, l, h] {
                    const AttentionHeadParams& s = src.blocks[l].attn.heads[h];
                    const AttentionHeadParams& a = anchor.blocks[l].attn.heads[h];
                    HeadUnitResult& out = head_results[l][h];
                    out.r_qk = Matrix::identity(src.config.d_head);
                    out.r_vo = Matrix::identity(src.config.d_head);
                    out.params = s;
                    out.attn_before = attention_objective(s, a);
                    out.attn_after = out.attn_before;
                    out.rescale_before = out.attn_before;
                    out.rescale_after = out.attn_before;
                    if (opts.enable_attn && !opts.enable_rescale) {
                        HeadRotationMatch rot = match_attention_head(s, a);
                        out.r_qk = std::move(rot.r_qk);
                        out.r_vo = std::move(rot.r_vo);
                        out.params = std::move(rot.params);
                        out.attn_after = rot.objective_after;
                        out.rescale_before = rot.objective_after;
                        out.rescale_after = rot.objective_after;
                        return;
                    }
                    if (!opts.enable_attn && opts.enable_rescale) {
                        HeadRescaleMatch rsc = match_rescaling(s, a);
                        out.a_qk = rsc.a_qk;
                        out.a_vo = rsc.a_vo;
                        out.params = std::move(rsc.params);
                        out.rescale_before = rsc.objective_before;
                        out.rescale_after = rsc.objective_after;
                        out.fell_back = rsc.fell_back;
                        return;
                    }
                    // Both phases enabled: rescaling shifts the optimal
                    // rotation, so alternate the two steps until the extra
                    // transform degenerates to the identity. Rescaling
                    // commutes with rotation, hence the running products
                    // below reproduce the final parameters exactly.
                    for (int round = 0; round < 200; ++round) {
                        HeadRotationMatch rot = match_attention_head(out.params, a);
                        HeadRescaleMatch rsc = match_rescaling(rot.params, a);
                        out.r_qk = out.r_qk * rot.r_qk;
                        out.r_vo = out.r_vo * rot.r_vo;
                        out.a_qk *= rsc.a_qk;
                        out.a_vo *= rsc.a_vo;
                        out.attn_after = rot.objective_after;
                        out.rescale_before = rot.objective_after;
                        out.rescale_after = rsc.objective_after;
                        out.fell_back = out.fell_back || rsc.fell_back;
                        out.params = std::move(rsc.params);
                        double step = std::max(std::abs(rsc.a_qk - 1.0), std::abs(rsc.a_vo - 1.0));
                        const Matrix eye = Matrix::identity(src.config.d_head);
                        step = std::max(step, max_abs_diff(rot.r_qk, eye));
                        step = std::max(step, max_abs_diff(rot.r_vo, eye));
                        if (step <= 1e-13) {
                            break;
                        }
                    }
                });
            }
        }
    }
    run_tasks(tasks, opts.parallel_degree);

    // Deterministic assembly in layer/head order.
    for (std::size_t l = 0; l < n_layers; ++l) {
        LayerObjectives& entry = report.layers[l];
        entry.selected = selected[l];
        entry.ffn_before = ffn_objective(src.blocks[l].ffn, anchor.blocks[l].ffn);
        entry.ffn_after = entry.ffn_before;
        double attn_before = 0.0;
        for (std::size_t h = 0; h < n_heads; ++h) {
            attn_before +=
                attention_objective(src.blocks[l].attn.heads[h], anchor.blocks[l].attn.heads[h]);
        }
        entry.attn_before = attn_before;
        entry.attn_after = attn_before;
        entry.rescale_before = attn_before;
        entry.rescale_after = attn_before;
        if (!selected[l]) {
            continue;
        }
        if (opts.enable_ffn) {
            const FfnMatch& fm = ffn_results[l];
            matched.blocks[l].ffn = fm.params;
            report.transform.layers[l].ffn_perm = fm.perm;
            entry.ffn_after = fm.objective_after;
        }
        if (opts.enable_attn || opts.enable_rescale) {
            double attn_after = 0.0;
            double rescale_before = 0.0;
            double rescale_after = 0.0;
            for (std::size_t h = 0; h < n_heads; ++h) {
                const HeadUnitResult& hr = head_results[l][h];
                matched.blocks[l].attn.heads[h] = hr.params;
                HeadTransform& ht = report.transform.layers[l].heads[h];
                ht.r_qk = hr.r_qk;
                ht.r_vo = hr.r_vo;
                ht.a_qk = hr.a_qk;
                ht.a_vo = hr.a_vo;
                attn_after += hr.attn_after;
                rescale_before += hr.rescale_before;
                rescale_after += hr.rescale_after;
                report.rescale_fallbacks += hr.fell_back ? 1 : 0;
            }
            entry.attn_after = attn_after;
            entry.rescale_before = rescale_before;
            entry.rescale_after = rescale_after;
        }
    }

    report.distance_before = param_distance(src, anchor);
    report.distance_after = param_distance(matched, anchor);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(matched), std::move(report)};
}

std::pair<std::vector<TransformerModel>, std::vector<MatchReport>> match_to_anchor(
    const std::vector<TransformerModel>& models, std::size_t anchor_index,
    const MatchOptions& opts) {
    if (models.size() < 2) {
        throw ValueError("match_to_anchor: need at least 2 models");
    }
    if (anchor_index >= models.size()) {
        throw ValueError("match_to_anchor: anchor index " + std::to_string(anchor_index) +
                         " out of range");
    }
    for (const TransformerModel& m : models) {
        if (!(m.config == models[anchor_index].config)) {
            throw ConfigError("match_to_anchor: configs differ");
        }
    }
    std::vector<TransformerModel> matched;
    std::vector<MatchReport> reports;
    matched.reserve(models.size());
    reports.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (i == anchor_index) {
            MatchReport identity_report;
            identity_report.transform = SymmetryTransform::identity(models[i].config);
            identity_report.layers.assign(models[i].config.n_layers, LayerObjectives{});
            matched.push_back(models[i]);
            reports.push_back(std::move(identity_report));
            continue;
        }
        auto [m, r] = match_model(models[i], models[anchor_index], opts);
        matched.push_back(std::move(m));
        reports.push_back(std::move(r));
    }
    return {std::move(matched), std::move(reports)};
}

} // namespace rotsym
