#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "models.hpp"

namespace gradal::descent {

// Strong-convexity / smoothness constants with a step size; mu and L are the
// extreme eigenvalues of the quadratic's matrix.
struct ConvexityParams {
    double mu = 0.0;
    double L = 0.0;
    double eta = 0.0;
};

struct QuadraticInstance {
    Eigen::MatrixXd a;
    double mu = 0.0;
    double L = 0.0;
};

// SPD matrix with spectrum spanning exactly [L/cond, L], seeded rotation.
QuadraticInstance random_spd_instance(int dim, double cond, double scale, uint64_t seed);

// Gradient-norm sequence of w' = w - eta*A*w on f(w) = 1/2 w^T A w, starting
// norm included. Errors when A is not symmetric positive definite.
std::vector<double> quadratic_descent_norms(const Eigen::MatrixXd& a, std::span<const double> w0,
                                            double eta, int steps);

// Extreme eigenvalues of a symmetric matrix (for caller-supplied quadratics).
ConvexityParams extreme_eigenvalues(const Eigen::MatrixXd& a);

struct DescentRow {
    int instance = 0;
    int step = 0;
    double grad_norm = 0.0;
};

// Seeded battery of random SPD quadratics iterated at eta = eta_factor * mu/L^2
// (the guaranteed-monotone regime at factor <= 2).
std::vector<DescentRow> descent_battery(int instances, int dim, int steps, double eta_factor,
                                        uint64_t seed);

// Full-batch gradient norm of the mean training loss after each epoch of SGD
// training; the model is trained in place.
std::vector<double> nn_avg_gradnorm_track(models::TaskModel& model, const data::Dataset& ds,
                                          std::span<const int> indices,
                                          const models::TrainConfig& cfg);

}  // namespace gradal::descent
