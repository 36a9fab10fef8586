#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "datasets.hpp"
#include "models.hpp"

namespace gradal::influence {

inline constexpr int kDefaultHessianCap = 2000;
inline constexpr double kDefaultDamping = 0.01;
inline constexpr double kHessianFdStep = 1e-4;

// Damped average Hessian of the per-sample loss over a labeled pool,
// factorized for repeated solves. The damped matrix must be SPD; the
// Cholesky factorization doubles as the positive-definiteness assertion.
struct HessianContext {
    int dim = 0;
    double damping = 0.0;
    int labeled_count = 0;  // n in the 1/n influence scaling
    models::LossKind loss = models::LossKind::CrossEntropy;
    Eigen::MatrixXd damped;
    Eigen::LLT<Eigen::MatrixXd> llt;

    std::vector<double> solve(std::span<const double> rhs) const;
};

using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// H column-by-column via central finite differences of `grad`, symmetrized
// as (H+H^T)/2, then damped by damping*I. Errors on non-finite entries and
// on a non-SPD damped matrix.
HessianContext build_hessian_fd(const GradFn& grad, std::span<const double> theta, double step,
                                double damping, int labeled_count);

// Model-based builder over the labeled pool; refuses models above `cap`
// parameters. Cross-entropy uses the pool's labels; the scheme losses need
// none.
HessianContext build_hessian(const models::TaskModel& model, const data::Dataset& ds,
                             std::span<const int> labeled, models::LossKind kind, double damping,
                             int cap = kDefaultHessianCap);

// (1/n) grad_test^T (H+damping I)^{-1} grad_x
double influence_loss(const HessianContext& ctx, std::span<const double> grad_x,
                      std::span<const double> grad_test);

// (H+damping I)^{-1} sum_j grad(x_j) over a test split, cached for reuse
// across many candidate samples.
struct TestAggregate {
    std::vector<double> solved;
    double solved_norm = 0.0;
    size_t test_count = 0;
};
TestAggregate build_test_aggregate(const HessianContext& ctx, const models::TaskModel& model,
                                   const data::Dataset& eval_ds, models::LossKind kind);

// Total influence over the test split via the aggregate vector.
double total_influence(const HessianContext& ctx, std::span<const double> grad_x,
                       const TestAggregate& agg);
// The same quantity via explicit per-test-sample summation (slow; the
// algebraic dual of the aggregate path).
double total_influence_explicit(const HessianContext& ctx, const models::TaskModel& model,
                                std::span<const double> grad_x, const data::Dataset& eval_ds,
                                models::LossKind kind);

// The four bound-chain terms for one sample: the exact total influence, its
// absolute value, the Cauchy-Schwarz relaxation, and the previous-cycle
// gradient substitution.
struct BoundTerms {
    double target = 0.0;
    double approx1 = 0.0;
    double approx2 = 0.0;
    double approx3 = 0.0;
};
BoundTerms bound_terms(const HessianContext& ctx_next, std::span<const double> grad_x_next,
                       std::span<const double> grad_x_cur, const TestAggregate& agg);

// Magnitude/direction decomposition: total influence factors as
// ||g_x|| * <aggregate/n, g_x/||g_x||>.
struct Decomposition {
    double magnitude = 0.0;
    double alignment = 0.0;
};
Decomposition direction_magnitude(const HessianContext& ctx, std::span<const double> grad_x,
                                  const TestAggregate& agg);

// ---- leave-one-out oracle ----------------------------------------------------

// Full-batch Newton on mean cross-entropy + (l2/2)||theta||^2. Errors if the
// gradient norm stays above tol after max_iter iterations.
struct ConvergedFit {
    models::TaskModel model;
    int iterations = 0;
    double grad_norm = 0.0;
};
ConvergedFit train_to_convergence(const models::ModelSpec& spec, const data::Dataset& ds,
                                  std::span<const int> indices, double l2, double tol, int max_iter,
                                  uint64_t init_seed);

// Mean test loss of the model retrained without pool position `removed_pos`,
// minus mean test loss of the model trained on the full pool; both fits start
// from the identical initialization.
double loo_retrain_delta(const models::ModelSpec& spec, const data::Dataset& pool,
                         std::span<const int> indices, int removed_pos, const data::Dataset& test,
                         double l2, uint64_t init_seed);

}  // namespace gradal::influence
