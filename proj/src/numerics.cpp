#include "rotsym/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rotsym/errors.hpp"

namespace rotsym {

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw ValueError("rng: bound must be positive");
    }
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) {
            return r % bound;
        }
    }
}

double Rng::normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

double column_dot(const Matrix& a, std::size_t p, std::size_t q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        acc += a(i, p) * a(i, q);
    }
    return acc;
}

void rotate_columns(Matrix& a, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double ap = a(i, p);
        const double aq = a(i, q);
        a(i, p) = c * ap - s * aq;
        a(i, q) = s * ap + c * aq;
    }
}

} // namespace

SvdResult svd(const Matrix& input) {
    if (input.rows() != input.cols()) {
        throw DimensionError("svd: matrix must be square, got " + std::to_string(input.rows()) +
                             "x" + std::to_string(input.cols()));
    }
    if (!input.all_finite()) {
        throw ValueError("svd: matrix has non-finite entries");
    }
    const std::size_t n = input.rows();
    Matrix a = input;
    Matrix v = Matrix::identity(n);

    // One-sided Jacobi: orthogonalize column pairs until a full sweep makes
    // no rotation. Sweep order (p, q) ascending keeps the result fully
    // deterministic.
    const double tol = 1e-15;
    const int max_sweeps = 96;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = column_dot(a, p, p);
                const double beta = column_dot(a, q, q);
                const double gamma = column_dot(a, p, q);
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_columns(a, p, q, c, s);
                rotate_columns(v, p, q, c, s);
            }
        }
        if (!rotated) {
            break;
        }
    }
    if (sweep == max_sweeps) {
        throw NumericError("svd: Jacobi sweeps did not converge");
    }

    std::vector<double> norms(n);
    double sigma_max = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        norms[j] = std::sqrt(column_dot(a, j, j));
        sigma_max = std::max(sigma_max, norms[j]);
    }

    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) {
        order[j] = j;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out;
    out.sigma.resize(n);
    out.u = Matrix(n, n);
    out.v = Matrix(n, n);
    const double rank_tol = sigma_max * static_cast<double>(n) * 1e-14;
    std::vector<std::size_t> degenerate;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = norms[src];
        for (std::size_t i = 0; i < n; ++i) {
            out.v(i, j) = v(i, src);
        }
        if (norms[src] > rank_tol && norms[src] > 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                out.u(i, j) = a(i, src) / norms[src];
            }
        } else {
            degenerate.push_back(j);
        }
    }

    // Complete (near-)zero singular directions to an orthonormal basis.
    // Descending sort puts them in the trailing slots, so the filled columns
    // when slot j is processed are exactly the columns before it. Each slot
    // takes the standard basis vector with the largest residual after
    // projecting those out.
    for (std::size_t slot : degenerate) {
        std::vector<double> best;
        double best_norm = -1.0;
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<double> cand(n, 0.0);
            cand[k] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < slot; ++j) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        proj += out.u(i, j) * cand[i];
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        cand[i] -= proj * out.u(i, j);
                    }
                }
            }
            double norm2 = 0.0;
            for (double x : cand) {
                norm2 += x * x;
            }
            if (norm2 > best_norm) {
                best_norm = norm2;
                best = std::move(cand);
            }
        }
        const double norm = std::sqrt(best_norm);
        for (std::size_t i = 0; i < n; ++i) {
            out.u(i, slot) = best[i] / norm;
        }
    }

    // Sign convention: largest-magnitude entry of each left singular vector is
    // positive; the paired right column flips with it.
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t arg = 0;
        double mag = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double m = std::abs(out.u(i, j));
            if (m > mag) {
                mag = m;
                arg = i;
            }
        }
        if (out.u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                out.u(i, j) = -out.u(i, j);
                out.v(i, j) = -out.v(i, j);
            }
        }
    }
    return out;
}

Permutation hungarian_max(const Matrix& score) {
    if (score.rows() != score.cols()) {
        throw DimensionError("assignment: score matrix must be square, got " +
                             std::to_string(score.rows()) + "x" + std::to_string(score.cols()));
    }
    if (!score.all_finite()) {
        throw ValueError("assignment: score matrix has non-finite entries");
    }
    const std::size_t n = score.rows();
    if (n == 0) {
        return Permutation::identity(0);
    }
    const double inf = std::numeric_limits<double>::infinity();

    // Jonker-Volgenant style shortest augmenting paths on the negated score
    // (minimization). 1-based with column 0 as the staging slot. Ascending
    // scans with strict comparisons give lowest-index tie-breaking.
    std::vector<double> u(n + 1, 0.0);
    std::vector<double> v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0);
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = -score(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    Permutation out;
    out.map.resize(n);
    for (std::size_t j = 1; j <= n; ++j) {
        out.map[p[j] - 1] = j - 1;
    }
    return out;
}

namespace {

// Polynomial helpers on descending coefficient vectors.

double poly_eval(const std::vector<double>& c, double x) {
    double acc = 0.0;
    for (double ci : c) {
        acc = acc * x + ci;
    }
    return acc;
}

double poly_scale(const std::vector<double>& c, double x) {
    double acc = 0.0;
    const double ax = std::abs(x);
    for (double ci : c) {
        acc = acc * ax + std::abs(ci);
    }
    return acc;
}

std::vector<double> poly_derivative(const std::vector<double>& c) {
    const std::size_t deg = c.size() - 1;
    std::vector<double> d;
    d.reserve(deg);
    for (std::size_t k = 0; k < deg; ++k) {
        d.push_back(c[k] * static_cast<double>(deg - k));
    }
    return d;
}

double bisect(const std::vector<double>& c, double lo, double hi, double flo) {
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) {
            break;
        }
        const double fm = poly_eval(c, mid);
        if (fm == 0.0) {
            return mid;
        }
        if ((flo < 0.0) == (fm < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double newton_polish(const std::vector<double>& c, const std::vector<double>& dc, double x) {
    double best = x;
    double best_res = std::abs(poly_eval(c, x));
    for (int iter = 0; iter < 4; ++iter) {
        const double dpx = poly_eval(dc, x);
        if (dpx == 0.0) {
            break;
        }
        x -= poly_eval(c, x) / dpx;
        const double res = std::abs(poly_eval(c, x));
        if (res < best_res) {
            best_res = res;
            best = x;
        } else {
            break;
        }
    }
    return best;
}

// Real roots of a polynomial with nonzero leading coefficient, ascending.
std::vector<double> poly_real_roots(std::vector<double> c) {
    while (!c.empty() && c.front() == 0.0) {
        c.erase(c.begin());
    }
    if (c.size() <= 1) {
        return {};
    }
    if (c.size() == 2) {
        return {-c[1] / c[0]};
    }
    if (c.size() == 3) {
        const double a = c[0];
        const double b = c[1];
        const double d = c[2];
        const double disc = b * b - 4.0 * a * d;
        if (disc < 0.0) {
            return {};
        }
        const double sq = std::sqrt(disc);
        const double qv = (b >= 0.0) ? -0.5 * (b + sq) : -0.5 * (b - sq);
        std::vector<double> roots;
        if (qv == 0.0) {
            roots = {0.0, -b / a};
        } else {
            roots = {qv / a, d / qv};
        }
        std::sort(roots.begin(), roots.end());
        if (roots.size() == 2 && roots[0] == roots[1]) {
            roots.pop_back();
        }
        return roots;
    }

    const std::vector<double> dc = poly_derivative(c);
    const std::vector<double> crit = poly_real_roots(dc);

    double ratio = 0.0;
    for (std::size_t k = 1; k < c.size(); ++k) {
        ratio = std::max(ratio, std::abs(c[k] / c[0]));
    }
    const double bound = 1.0 + ratio;

    // Candidate mesh: Cauchy-bound endpoints, zero, a log-spaced ladder on
    // both sides, and the critical points (monotone segment boundaries).
    std::vector<double> mesh{-bound, 0.0, bound};
    for (int k = 1; k <= 52; ++k) {
        const double m = bound * std::pow(10.0, -0.25 * k);
        mesh.push_back(m);
        mesh.push_back(-m);
    }
    for (double t : crit) {
        if (t > -bound && t < bound) {
            mesh.push_back(t);
        }
    }
    std::sort(mesh.begin(), mesh.end());
    mesh.erase(std::unique(mesh.begin(), mesh.end()), mesh.end());

    std::vector<double> values(mesh.size());
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        values[k] = poly_eval(c, mesh[k]);
    }

    std::vector<double> roots;
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        if (values[k] == 0.0) {
            roots.push_back(mesh[k]);
        }
    }
    // Even-multiplicity roots produce no sign change; accept critical points
    // whose residual is tiny relative to the local coefficient scale. A
    // critical point that itself crosses zero against a neighbour is a pair
    // of simple roots and is left to the bracketing pass below.
    for (double t : crit) {
        if (t <= -bound || t >= bound) {
            continue;
        }
        const std::size_t k = static_cast<std::size_t>(
            std::lower_bound(mesh.begin(), mesh.end(), t) - mesh.begin());
        const double ft = values[k];
        if (ft == 0.0) {
            continue;
        }
        const bool crosses = (k > 0 && (values[k - 1] < 0.0) != (ft < 0.0)) ||
                             (k + 1 < values.size() && (values[k + 1] < 0.0) != (ft < 0.0));
        if (!crosses && std::abs(ft) <= 1e-11 * std::max(1.0, poly_scale(c, t))) {
            roots.push_back(t);
        }
    }
    for (std::size_t k = 0; k + 1 < mesh.size(); ++k) {
        if (values[k] == 0.0 || values[k + 1] == 0.0) {
            continue;
        }
        if ((values[k] < 0.0) != (values[k + 1] < 0.0)) {
            const double r = bisect(c, mesh[k], mesh[k + 1], values[k]);
            roots.push_back(newton_polish(c, dc, r));
        }
    }

    std::sort(roots.begin(), roots.end());
    // Merge clusters closer than 1e-9, keeping the smallest-residual member.
    std::vector<double> merged;
    for (double r : roots) {
        if (!merged.empty() && r - merged.back() < 1e-9) {
            if (std::abs(poly_eval(c, r)) < std::abs(poly_eval(c, merged.back()))) {
                merged.back() = r;
            }
        } else {
            merged.push_back(r);
        }
    }
    return merged;
}

} // namespace

std::vector<double> real_roots_quartic(double c4, double c3, double c2, double c1, double c0) {
    const std::vector<double> c{c4, c3, c2, c1, c0};
    bool any = false;
    double cmax = 0.0;
    for (double ci : c) {
        if (!std::isfinite(ci)) {
            throw ValueError("quartic: non-finite coefficient");
        }
        any = any || ci != 0.0;
        cmax = std::max(cmax, std::abs(ci));
    }
    if (!any) {
        throw ValueError("quartic: all coefficients are zero, roots are the whole line");
    }
    std::vector<double> roots = poly_real_roots(c);
    std::vector<double> kept;
    for (double r : roots) {
        if (std::abs(poly_eval(c, r)) <= 1e-9 * std::max(1.0, cmax)) {
            kept.push_back(r);
        }
    }
    return kept;
}

Matrix random_orthogonal(std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw DimensionError("random_orthogonal: size must be positive");
    }
    Rng rng(seed);
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            g(i, j) = rng.normal();
        }
    }

    // Modified Gram-Schmidt over columns, two projection passes.
    Matrix q(n, n);
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = g(i, j);
        }
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    proj += q(i, k) * v[i];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    v[i] -= proj * q(i, k);
                }
            }
        }
        double norm2 = 0.0;
        for (double x : v) {
            norm2 += x * x;
        }
        if (norm2 < 1e-24) {
            throw NumericError("random_orthogonal: degenerate sample, re-seed");
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t i = 0; i < n; ++i) {
            q(i, j) = v[i] * inv;
        }
    }
    return q;
}

Permutation random_permutation(std::size_t n, Rng& rng) {
    Permutation p = Permutation::identity(n);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(p.map[i - 1], p.map[j]);
    }
    return p;
}

} // namespace rotsym
