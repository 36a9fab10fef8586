#include "descent.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace gradal::descent {

QuadraticInstance random_spd_instance(int dim, double cond, double scale, uint64_t seed) {
    if (dim < 1) fail(Status::InvalidArgument, "random_spd_instance: dimension must be positive");
    if (cond < 1.0) fail(Status::InvalidArgument, "random_spd_instance: condition number must be >= 1");
    Rng rng(mix_seed({seed, 0x737064ULL}));
    QuadraticInstance inst;
    inst.L = scale;
    inst.mu = scale / cond;
    Eigen::VectorXd eig(dim);
    eig(0) = inst.mu;
    eig(dim - 1) = inst.L;
    for (int i = 1; i + 1 < dim; ++i)
        eig(i) = inst.mu * std::exp(rng.uniform() * std::log(cond));  // log-uniform in [mu, L]
    Eigen::MatrixXd g(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = rng.normal();
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    inst.a = q * eig.asDiagonal() * q.transpose();
    inst.a = 0.5 * (inst.a + inst.a.transpose());
    return inst;
}

std::vector<double> quadratic_descent_norms(const Eigen::MatrixXd& a, std::span<const double> w0,
                                            double eta, int steps) {
    if (a.rows() != a.cols() || a.rows() != static_cast<Eigen::Index>(w0.size()))
        fail(Status::InvalidArgument, "quadratic_descent: matrix/vector dimension mismatch");
    if (eta <= 0.0) fail(Status::InvalidArgument, "quadratic_descent: step size must be positive");
    if (!a.isApprox(a.transpose(), 1e-10))
        fail(Status::InvalidArgument, "quadratic_descent: matrix is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        fail(Status::InvalidArgument, "quadratic_descent: matrix is not positive definite");

    Eigen::Map<const Eigen::VectorXd> w_init(w0.data(), static_cast<Eigen::Index>(w0.size()));
    Eigen::VectorXd w = w_init;
    std::vector<double> norms;
    norms.reserve(static_cast<size_t>(steps) + 1);
    Eigen::VectorXd g = a * w;
    norms.push_back(g.norm());
    for (int s = 0; s < steps; ++s) {
        w -= eta * g;
        g = a * w;
        norms.push_back(g.norm());
    }
    return norms;
}

ConvexityParams extreme_eigenvalues(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        fail(Status::RuntimeError, "extreme_eigenvalues: eigensolver failed");
    ConvexityParams p;
    p.mu = es.eigenvalues().minCoeff();
    p.L = es.eigenvalues().maxCoeff();
    return p;
}

std::vector<DescentRow> descent_battery(int instances, int dim, int steps, double eta_factor,
                                        uint64_t seed) {
    if (instances < 1 || steps < 1)
        fail(Status::InvalidArgument, "descent_battery: instances and steps must be positive");
    std::vector<DescentRow> rows;
    rows.reserve(static_cast<size_t>(instances) * (static_cast<size_t>(steps) + 1));
    for (int i = 0; i < instances; ++i) {
        uint64_t s = mix_seed({seed, 0x626174ULL, static_cast<uint64_t>(i)});
        Rng rng(s);
        double cond = std::exp(rng.uniform(0.0, std::log(100.0)));  // [1, 100]
        double scale = rng.uniform(0.5, 2.0);
        auto inst = random_spd_instance(dim, cond, scale, s);
        double eta = eta_factor * inst.mu / (inst.L * inst.L);
        std::vector<double> w0(static_cast<size_t>(dim));
        for (auto& v : w0) v = rng.normal();
        auto norms = quadratic_descent_norms(inst.a, w0, eta, steps);
        for (size_t t = 0; t < norms.size(); ++t)
            rows.push_back({i, static_cast<int>(t), norms[t]});
    }
    return rows;
}

std::vector<double> nn_avg_gradnorm_track(models::TaskModel& model, const data::Dataset& ds,
                                          std::span<const int> indices,
                                          const models::TrainConfig& cfg) {
    std::vector<double> norms;
    norms.reserve(static_cast<size_t>(cfg.epochs));
    models::train(model, ds, indices, cfg, [&](int, models::TaskModel& m) {
        auto g = models::mean_loss_gradient(m, ds, indices, models::LossKind::CrossEntropy);
        norms.push_back(stats::l2_norm(g));
    });
    return norms;
}

}  // namespace gradal::descent
