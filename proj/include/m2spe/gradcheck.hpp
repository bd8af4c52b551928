// Central finite-difference gradient oracle, kept independent of the tape:
// it only ever calls the supplied scalar function.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "matrix.hpp"

namespace m2spe {

// Per-coordinate step h = step_scale * max(1, |theta_i|).
inline std::vector<Matrix> finite_difference_gradient(const std::function<double(const std::vector<Matrix>&)>& f,
                                                      std::vector<Matrix> theta, double step_scale = 1e-5) {
    std::vector<Matrix> grad;
    grad.reserve(theta.size());
    for (const Matrix& t : theta) grad.emplace_back(t.rows, t.cols);

    for (size_t a = 0; a < theta.size(); ++a) {
        for (size_t i = 0; i < theta[a].size(); ++i) {
            const double orig = theta[a].data[i];
            const double h = step_scale * std::max(1.0, std::abs(orig));
            theta[a].data[i] = orig + h;
            const double fp = f(theta);
            theta[a].data[i] = orig - h;
            const double fm = f(theta);
            theta[a].data[i] = orig;
            grad[a].data[i] = (fp - fm) / (2.0 * h);
        }
    }
    return grad;
}

// Relative agreement check with an absolute floor for near-zero pairs. The
// floor sits above central-difference roundoff noise (~|f| eps / h), which
// is all the oracle reports for coordinates whose true gradient is zero
// (e.g. the key bias, which row-softmax cancels exactly).
inline bool gradients_close(const Matrix& a, const Matrix& b, double rel_tol, double abs_floor = 1e-6,
                            double* worst_out = nullptr) {
    check_same_shape(a, b, "gradients_close");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({abs_floor, std::abs(a.data[i]), std::abs(b.data[i])});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    if (worst_out) *worst_out = worst;
    return worst < rel_tol;
}

}  // namespace m2spe
