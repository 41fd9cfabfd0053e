#include "rotsym/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rotsym/errors.hpp"
#include "rotsym/numerics.hpp"

namespace rotsym {

namespace {

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double param_distance(const TransformerModel& a, const TransformerModel& b) {
    if (!(a.config == b.config)) {
        throw ConfigError("param_distance: configs differ");
    }
    const std::vector<double> ta = flatten(a);
    const std::vector<double> tb = flatten(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        const double d = ta[i] - tb[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

LossCurve interpolate_losses(const TransformerModel& a, const TransformerModel& b,
                             const SyntheticDataset& dataset, std::size_t n_points) {
    if (!(a.config == b.config)) {
        throw ConfigError("interpolate: configs differ");
    }
    if (n_points < 3) {
        throw ValueError("interpolate: need at least 3 grid points");
    }
    const std::vector<double> ta = flatten(a);
    const std::vector<double> tb = flatten(b);
    TransformerModel mixed = a;
    std::vector<double> theta(ta.size());

    LossCurve curve;
    curve.alphas.resize(n_points);
    curve.losses.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const double alpha = static_cast<double>(i) / static_cast<double>(n_points - 1);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            theta[k] = alpha * ta[k] + (1.0 - alpha) * tb[k];
        }
        unflatten_into(mixed, theta);
        curve.alphas[i] = alpha;
        curve.losses[i] = loss(mixed, dataset);
    }
    curve.loss_b = curve.losses.front();
    curve.loss_a = curve.losses.back();
    double barrier = 0.0;
    for (std::size_t i = 0; i < n_points; ++i) {
        const double base = curve.alphas[i] * curve.loss_a + (1.0 - curve.alphas[i]) * curve.loss_b;
        barrier = std::max(barrier, curve.losses[i] - base);
    }
    curve.barrier = barrier;
    return curve;
}

EquivalenceReport equivalence_check(const TransformerModel& a, const TransformerModel& b,
                                    std::size_t n_inputs, std::uint64_t seed) {
    if (!(a.config == b.config)) {
        throw ConfigError("equivalence_check: configs differ");
    }
    if (n_inputs == 0) {
        throw ValueError("equivalence_check: n_inputs must be >= 1");
    }
    Rng rng(seed);
    EquivalenceReport report;
    report.n_inputs = n_inputs;
    double total = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> tokens(a.config.seq_len);
    for (std::size_t i = 0; i < n_inputs; ++i) {
        for (std::size_t& t : tokens) {
            t = static_cast<std::size_t>(rng.below(a.config.vocab_size));
        }
        const Matrix la = forward(a, tokens);
        const Matrix lb = forward(b, tokens);
        for (std::size_t j = 0; j < la.cols(); ++j) {
            const double d = std::abs(la(0, j) - lb(0, j));
            report.max_abs_logit_diff = std::max(report.max_abs_logit_diff, d);
            total += d;
            ++count;
        }
    }
    report.mean_abs_diff = total / static_cast<double>(count);
    return report;
}

std::string loss_curve_csv(const LossCurve& curve) {
    std::string out = "alpha,loss\n";
    for (std::size_t i = 0; i < curve.alphas.size(); ++i) {
        out += format_g17(curve.alphas[i]);
        out += ',';
        out += format_g17(curve.losses[i]);
        out += '\n';
    }
    out += "# barrier=";
    out += format_g17(curve.barrier);
    out += '\n';
    return out;
}

} // namespace rotsym
