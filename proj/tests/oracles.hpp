#pragma once

// Test-side oracles, independent of the implementation paths they validate:
// finite-difference gradients, a Jacobi eigensolver, and small helpers.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "models.hpp"

namespace oracles {

using EvalFn = std::function<double(std::span<const double>)>;

inline std::vector<double> fd_gradient(const EvalFn& eval, std::span<const double> theta, double h) {
    std::vector<double> work(theta.begin(), theta.end());
    std::vector<double> g(theta.size());
    for (size_t k = 0; k < theta.size(); ++k) {
        double orig = work[k];
        work[k] = orig + h;
        double up = eval(work);
        work[k] = orig - h;
        double down = eval(work);
        work[k] = orig;
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

// Loss value as a pure function of the flat parameter vector.
inline EvalFn model_loss_eval(const gradal::models::TaskModel& model, std::vector<double> x,
                              gradal::models::LossKind kind, int label = -1) {
    return [&model, x = std::move(x), kind, label](std::span<const double> theta) {
        auto& mut = const_cast<gradal::models::TaskModel&>(model);
        auto saved = model.flat_params();
        mut.set_flat_params(theta);
        double v = gradal::models::loss_node(model, x, kind, label).item();
        mut.set_flat_params(saved);
        return v;
    };
}

// Cyclic Jacobi eigenvalue iteration for dense symmetric matrices (row-major).
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, size_t n) {
    auto at = [&](size_t i, size_t j) -> double& { return a[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (size_t i = 0; i < n; ++i) eig[i] = at(i, i);
    return eig;
}

}  // namespace oracles
