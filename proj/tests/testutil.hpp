// Minimal check macros shared by the test binaries. Each test is a plain
// main() that returns nonzero when any check failed.
#pragma once

#include <cmath>
#include <cstdio>

inline int g_checks = 0;
inline int g_failures = 0;

#define CHECK(cond)                                                                              \
    do {                                                                                         \
        ++g_checks;                                                                              \
        if (!(cond)) {                                                                           \
            ++g_failures;                                                                        \
            std::printf("FAIL %s:%d: %s\n", __FILE__, __LINE__, #cond);                          \
        }                                                                                        \
    } while (0)

#define CHECK_NEAR(expr_a, expr_b, tol)                                                          \
    do {                                                                                         \
        ++g_checks;                                                                              \
        const double check_a_ = (expr_a);                                                        \
        const double check_b_ = (expr_b);                                                        \
        const double check_tol_ = (tol);                                                         \
        if (!(std::fabs(check_a_ - check_b_) <= check_tol_)) {                                   \
            ++g_failures;                                                                        \
            std::printf("FAIL %s:%d: |%s - %s| = %.6g > %.3g (%.17g vs %.17g)\n", __FILE__,      \
                        __LINE__, #expr_a, #expr_b, std::fabs(check_a_ - check_b_), check_tol_,  \
                        check_a_, check_b_);                                                     \
        }                                                                                        \
    } while (0)

#define CHECK_THROWS(expr, Exc)                                                                  \
    do {                                                                                         \
        ++g_checks;                                                                              \
        bool check_caught_ = false;                                                              \
        try {                                                                                    \
            (void)(expr);                                                                        \
        } catch (const Exc&) {                                                                   \
            check_caught_ = true;                                                                \
        } catch (...) {                                                                          \
        }                                                                                        \
        if (!check_caught_) {                                                                    \
            ++g_failures;                                                                        \
            std::printf("FAIL %s:%d: expected %s from %s\n", __FILE__, __LINE__, #Exc, #expr);   \
        }                                                                                        \
    } while (0)

inline int test_summary(const char* name) {
    if (g_failures == 0) {
        std::printf("%s: all %d checks passed\n", name, g_checks);
        return 0;
    }
    std::printf("%s: %d of %d checks FAILED\n", name, g_failures, g_checks);
    return 1;
}
