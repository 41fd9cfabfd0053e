#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "rotsym/matrix.hpp"

namespace rotsym {

// Deterministic random stream. Draw-for-draw reproducible across platforms:
// the engine is the fully specified mt19937_64 and the real-valued draws below
// use fixed arithmetic instead of the implementation-defined standard
// distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased draw from [0, bound) via rejection.
    std::uint64_t below(std::uint64_t bound);

    // Uniform in the open interval (0, 1), 53-bit resolution.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal();

    // Derive an independent child seed from this stream.
    std::uint64_t split() { return next_u64(); }

private:
    std::mt19937_64 engine_;
};

struct SvdResult {
    Matrix u;                  // n x n orthogonal
    std::vector<double> sigma; // descending, non-negative
    Matrix v;                  // n x n orthogonal, a = u * diag(sigma) * v^T
};

// Full SVD of a square matrix by one-sided Jacobi orthogonalization.
// Deterministic: fixed sweep order, ties in the descending sort broken by
// original column index, and each left singular vector is sign-fixed so its
// largest-magnitude entry is positive. Zero singular directions are completed
// to an orthonormal basis.
SvdResult svd(const Matrix& a);

// Maximum-total-score assignment for a square score matrix.
// Returns p with p.map[i] = column assigned to row i. Deterministic: scans
// ascend and comparisons are strict, so ties prefer lower indices (an
// all-equal matrix yields the identity).
Permutation hungarian_max(const Matrix& score);

// All real roots of c4 a^4 + c3 a^3 + c2 a^2 + c1 a + c0, ascending,
// deduplicated at 1e-9 spacing. Degree drops are handled by recursion on the
// leading nonzero coefficient; the all-zero polynomial is rejected.
std::vector<double> real_roots_quartic(double c4, double c3, double c2, double c1, double c0);

// Haar-like random orthogonal matrix: Gram-Schmidt of a seeded normal matrix.
// Includes reflections (determinant may be -1).
Matrix random_orthogonal(std::size_t n, std::uint64_t seed);

// Uniform random permutation by Fisher-Yates on the given stream.
Permutation random_permutation(std::size_t n, Rng& rng);

} // namespace rotsym
