#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotsym/model.hpp"

namespace rotsym {

struct LossCurve {
    std::vector<double> alphas; // strictly increasing, includes 0 and 1
    std::vector<double> losses;
    double loss_a = 0.0; // loss at alpha = 1
    double loss_b = 0.0; // loss at alpha = 0
    double barrier = 0.0;
};

struct EquivalenceReport {
    double max_abs_logit_diff = 0.0;
    double mean_abs_diff = 0.0;
    std::size_t n_inputs = 0;
};

// L2 norm of the difference of canonically flattened parameter vectors.
double param_distance(const TransformerModel& a, const TransformerModel& b);

// Losses of alpha*a + (1-alpha)*b on a uniform alpha grid; the barrier is the
// largest excess over the linear interpolation of the endpoint losses,
// clamped at zero.
LossCurve interpolate_losses(const TransformerModel& a, const TransformerModel& b,
                             const SyntheticDataset& dataset, std::size_t n_points = 25);

// Max and mean absolute logit difference over seeded random token sequences.
EquivalenceReport equivalence_check(const TransformerModel& a, const TransformerModel& b,
                                    std::size_t n_inputs, std::uint64_t seed);

// CSV rendering: header `alpha,loss`, one row per grid point with
// 17-significant-digit decimals, then a trailing `# barrier=<value>` line.
std::string loss_curve_csv(const LossCurve& curve);

} // namespace rotsym
