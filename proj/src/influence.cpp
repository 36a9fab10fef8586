#include "influence.hpp"

#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "stats.hpp"

namespace gradal::influence {

std::vector<double> HessianContext::solve(std::span<const double> rhs) const {
    if (static_cast<int>(rhs.size()) != dim)
        fail(Status::InvalidArgument, "hessian solve: vector of size " + std::to_string(rhs.size()) +
                                          " against dimension " + std::to_string(dim));
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), dim);
    Eigen::VectorXd x = llt.solve(b);
    return {x.data(), x.data() + dim};
}

HessianContext build_hessian_fd(const GradFn& grad, std::span<const double> theta, double step,
                                double damping, int labeled_count) {
    if (step <= 0.0) fail(Status::InvalidArgument, "build_hessian: step must be positive");
    int d = static_cast<int>(theta.size());
    HessianContext ctx;
    ctx.dim = d;
    ctx.damping = damping;
    ctx.labeled_count = labeled_count;
    Eigen::MatrixXd h(d, d);
    std::vector<double> work(theta.begin(), theta.end());
    for (int k = 0; k < d; ++k) {
        double orig = work[static_cast<size_t>(k)];
        work[static_cast<size_t>(k)] = orig + step;
        auto up = grad(work);
        work[static_cast<size_t>(k)] = orig - step;
        auto down = grad(work);
        work[static_cast<size_t>(k)] = orig;
        for (int r = 0; r < d; ++r) {
            double v = (up[static_cast<size_t>(r)] - down[static_cast<size_t>(r)]) / (2.0 * step);
            if (!std::isfinite(v))
                fail(Status::RuntimeError, "build_hessian: non-finite entry at (" + std::to_string(r) +
                                               "," + std::to_string(k) + ")");
            h(r, k) = v;
        }
    }
    ctx.damped = 0.5 * (h + h.transpose());
    ctx.damped.diagonal().array() += damping;
    ctx.llt.compute(ctx.damped);
    if (ctx.llt.info() != Eigen::Success)
        fail(Status::RuntimeError, "build_hessian: damped Hessian is not positive definite (damping " +
                                       std::to_string(damping) + ")");
    return ctx;
}

HessianContext build_hessian(const models::TaskModel& model, const data::Dataset& ds,
                             std::span<const int> labeled, models::LossKind kind, double damping,
                             int cap) {
    if (static_cast<int>(model.param_count()) > cap)
        fail(Status::Inapplicable, "build_hessian: model has " + std::to_string(model.param_count()) +
                                       " parameters, above the Hessian cap " + std::to_string(cap));
    if (labeled.empty()) fail(Status::InvalidArgument, "build_hessian: empty labeled pool");
    auto scratch = model.clone();
    std::vector<int> idx(labeled.begin(), labeled.end());
    GradFn grad = [&scratch, &ds, idx, kind](std::span<const double> theta) {
        scratch.set_flat_params(theta);
        return models::mean_loss_gradient(scratch, ds, idx, kind);
    };
    auto theta0 = model.flat_params();
    auto ctx = build_hessian_fd(grad, theta0, kHessianFdStep, damping, static_cast<int>(labeled.size()));
    ctx.loss = kind;
    return ctx;
}

double influence_loss(const HessianContext& ctx, std::span<const double> grad_x,
                      std::span<const double> grad_test) {
    auto solved = ctx.solve(grad_x);
    if (grad_test.size() != solved.size())
        fail(Status::InvalidArgument, "influence_loss: gradient dimension mismatch");
    return stats::dot(grad_test, solved) / static_cast<double>(ctx.labeled_count);
}

TestAggregate build_test_aggregate(const HessianContext& ctx, const models::TaskModel& model,
                                   const data::Dataset& eval_ds, models::LossKind kind) {
    if (eval_ds.size() == 0) fail(Status::InvalidArgument, "test aggregate: empty test split");
    std::vector<double> sum(static_cast<size_t>(ctx.dim), 0.0);
    for (size_t j = 0; j < eval_ds.size(); ++j) {
        int label = kind == models::LossKind::CrossEntropy ? eval_ds.labels[j] : -1;
        auto g = models::loss_gradient(model, eval_ds.sample(j), kind, label);
        for (size_t r = 0; r < sum.size(); ++r) sum[r] += g[r];
    }
    TestAggregate agg;
    agg.solved = ctx.solve(sum);
    agg.solved_norm = stats::l2_norm(agg.solved);
    agg.test_count = eval_ds.size();
    return agg;
}

double total_influence(const HessianContext& ctx, std::span<const double> grad_x,
                       const TestAggregate& agg) {
    if (grad_x.size() != agg.solved.size())
        fail(Status::InvalidArgument, "total_influence: gradient dimension mismatch");
    return stats::dot(grad_x, agg.solved) / static_cast<double>(ctx.labeled_count);
}

double total_influence_explicit(const HessianContext& ctx, const models::TaskModel& model,
                                std::span<const double> grad_x, const data::Dataset& eval_ds,
                                models::LossKind kind) {
    double acc = 0.0;
    for (size_t j = 0; j < eval_ds.size(); ++j) {
        int label = kind == models::LossKind::CrossEntropy ? eval_ds.labels[j] : -1;
        auto g = models::loss_gradient(model, eval_ds.sample(j), kind, label);
        acc += influence_loss(ctx, grad_x, g);
    }
    return acc;
}

BoundTerms bound_terms(const HessianContext& ctx_next, std::span<const double> grad_x_next,
                       std::span<const double> grad_x_cur, const TestAggregate& agg) {
    BoundTerms t;
    double inv_n = 1.0 / static_cast<double>(ctx_next.labeled_count);
    t.target = stats::dot(grad_x_next, agg.solved) * inv_n;
    t.approx1 = std::abs(t.target);
    t.approx2 = stats::l2_norm(grad_x_next) * agg.solved_norm * inv_n;
    t.approx3 = stats::l2_norm(grad_x_cur) * agg.solved_norm * inv_n;
    return t;
}

Decomposition direction_magnitude(const HessianContext& ctx, std::span<const double> grad_x,
                                  const TestAggregate& agg) {
    Decomposition d;
    d.magnitude = stats::l2_norm(grad_x);
    if (d.magnitude == 0.0) {
        d.alignment = 0.0;
        return d;
    }
    double inv_n = 1.0 / static_cast<double>(ctx.labeled_count);
    d.alignment = stats::dot(grad_x, agg.solved) * inv_n / d.magnitude;
    return d;
}

// ---- leave-one-out oracle ----------------------------------------------------

namespace {

// gradient of mean CE + l2 * theta
std::vector<double> objective_gradient(const models::TaskModel& model, const data::Dataset& ds,
                                       std::span<const int> indices, double l2) {
    auto g = models::mean_loss_gradient(model, ds, indices, models::LossKind::CrossEntropy);
    auto theta = model.flat_params();
    for (size_t j = 0; j < g.size(); ++j) g[j] += l2 * theta[j];
    return g;
}

}  // namespace

ConvergedFit train_to_convergence(const models::ModelSpec& spec, const data::Dataset& ds,
                                  std::span<const int> indices, double l2, double tol, int max_iter,
                                  uint64_t init_seed) {
    if (indices.empty()) fail(Status::InvalidArgument, "train_to_convergence: empty pool");
    ConvergedFit fit;
    fit.model = models::TaskModel::make(spec, init_seed);
    auto& model = fit.model;
    int d = static_cast<int>(model.param_count());

    std::vector<int> idx(indices.begin(), indices.end());
    auto scratch = model.clone();
    GradFn grad = [&scratch, &ds, &idx, l2](std::span<const double> theta) {
        scratch.set_flat_params(theta);
        return objective_gradient(scratch, ds, idx, l2);
    };

    auto theta = model.flat_params();
    auto g = grad(theta);
    fit.grad_norm = stats::l2_norm(g);
    for (int it = 0; it < max_iter && fit.grad_norm > tol; ++it) {
        // Newton step on the regularized objective; the l2 term contributes
        // exactly l2*I to the Hessian, which also keeps it SPD.
        auto ctx = build_hessian_fd(grad, theta, kHessianFdStep, l2, static_cast<int>(idx.size()));
        auto step = ctx.solve(g);
        double t = 1.0;
        std::vector<double> trial(static_cast<size_t>(d));
        for (int half = 0; half < 30; ++half) {
            for (size_t j = 0; j < trial.size(); ++j) trial[j] = theta[j] - t * step[j];
            auto g_trial = grad(trial);
            double n_trial = stats::l2_norm(g_trial);
            if (n_trial < fit.grad_norm) {
                theta = trial;
                g = std::move(g_trial);
                fit.grad_norm = n_trial;
                break;
            }
            t *= 0.5;
        }
        fit.iterations = it + 1;
    }
    if (fit.grad_norm > tol)
        fail(Status::RuntimeError, "train_to_convergence: gradient norm " + std::to_string(fit.grad_norm) +
                                       " above tolerance " + std::to_string(tol) + " after " +
                                       std::to_string(max_iter) + " iterations");
    model.set_flat_params(theta);
    return fit;
}

double loo_retrain_delta(const models::ModelSpec& spec, const data::Dataset& pool,
                         std::span<const int> indices, int removed_pos, const data::Dataset& test,
                         double l2, uint64_t init_seed) {
    if (removed_pos < 0 || static_cast<size_t>(removed_pos) >= indices.size())
        fail(Status::InvalidArgument, "loo_retrain_delta: removed position out of range");
    if (indices.size() > 200)
        fail(Status::Inapplicable, "loo_retrain_delta: pool of " + std::to_string(indices.size()) +
                                       " exceeds the 200-sample cap");
    constexpr double kTol = 1e-9;
    constexpr int kMaxIter = 100;
    auto full = train_to_convergence(spec, pool, indices, l2, kTol, kMaxIter, init_seed);
    std::vector<int> reduced(indices.begin(), indices.end());
    reduced.erase(reduced.begin() + removed_pos);
    auto without = train_to_convergence(spec, pool, reduced, l2, kTol, kMaxIter, init_seed);
    double loss_with = models::evaluate(full.model, test).mean_loss;
    double loss_without = models::evaluate(without.model, test).mean_loss;
    return loss_without - loss_with;
}

}  // namespace gradal::influence
