#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ad.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "stats.hpp"

using namespace gradal;
using models::LossKind;
using models::ModelSpec;
using models::TaskModel;

namespace {

TaskModel random_mlp(int in, std::vector<int> hidden, int classes, uint64_t seed) {
    ModelSpec spec;
    spec.input_shape = {in};
    spec.hidden = std::move(hidden);
    spec.classes = classes;
    return TaskModel::make(spec, seed);
}

std::vector<double> random_input(int dim, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(static_cast<size_t>(dim));
    for (auto& v : x) v = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("matmul shape algebra and values") {
    auto a = ad::Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = ad::Tensor::from({3, 1}, {1, 1, 1});
    auto c = ad::matmul(a, b);
    CHECK(c.shape() == ad::Shape{2, 1});
    CHECK(c.values()[0] == doctest::Approx(6.0));
    CHECK(c.values()[1] == doctest::Approx(15.0));

    auto bad = ad::Tensor::from({4, 1}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(ad::matmul(a, bad), doctest::Contains("matmul"), Error);
    try {
        ad::matmul(a, bad);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
        CHECK(std::string(e.what()).find("(4,1)") != std::string::npos);
    }
}

TEST_CASE("relu and softmax primitives") {
    auto r = ad::relu(ad::Tensor::from({3}, {-1, 0, 2}));
    CHECK(r.values()[0] == 0.0);
    CHECK(r.values()[1] == 0.0);
    CHECK(r.values()[2] == 2.0);

    auto s = ad::softmax_rows(ad::Tensor::from({1, 2}, {0, 0}));
    CHECK(s.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.values()[1] == doctest::Approx(0.5).epsilon(1e-12));

    // stability: huge logits must not overflow
    auto big = ad::softmax_rows(ad::Tensor::from({1, 2}, {1000.0, 999.0}));
    CHECK(std::isfinite(big.values()[0]));
    CHECK(big.values()[0] + big.values()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward of w^2 at w=3 gives 6") {
    auto w = ad::Tensor::from({1}, {3.0}, true);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    auto y = ad::mul(w, w);
    auto out = ad::sum(y);
    tape.backward(out);
    CHECK(w.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward of relu at w=-1 gives 0") {
    auto w = ad::Tensor::from({1}, {-1.0}, true);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    auto out = ad::sum(ad::relu(w));
    tape.backward(out);
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("backward errors: non-scalar, foreign output, double backward") {
    auto w = ad::Tensor::from({2}, {1.0, 2.0}, true);
    ad::Tape tape;
    {
        ad::TapeScope scope(tape);
        auto y = ad::mul(w, w);
        CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar
        auto out = ad::sum(y);
        tape.backward(out);
        CHECK_THROWS_AS(tape.backward(out), Error);  // consumed, no reset
        tape.reset();
        w.zero_grad();
        auto out2 = ad::sum(ad::mul(w, w));
        tape.backward(out2);
        CHECK(w.grad()[0] == doctest::Approx(2.0));
    }
    ad::Tape other;
    auto leaf = ad::Tensor::from({1}, {1.0}, true);
    CHECK_THROWS_AS(other.backward(leaf), Error);  // not produced by a recorded pass
}

TEST_CASE("MLP gradient matches central finite differences") {
    auto model = random_mlp(3, {8, 6}, 3, 42);
    auto x = random_input(3, 7);
    auto g = models::loss_gradient(model, x, LossKind::CrossEntropy, 1);
    auto eval = oracles::model_loss_eval(model, x, LossKind::CrossEntropy, 1);
    auto theta = model.flat_params();
    double err = ad::finite_difference_max_rel_error(eval, theta, g, 1e-5, {});
    CHECK(err <= 1e-4);
}

TEST_CASE("grad_norm basics") {
    auto a = ad::Tensor::from({1}, {0.0}, true);
    auto b = ad::Tensor::from({1}, {0.0}, true);
    ad::Tape tape;
    {
        ad::TapeScope scope(tape);
        // loss = 3a + 4b  ->  grads (3, 4), norm 5
        auto out = ad::sum(ad::add(ad::scale(a, 3.0), ad::scale(b, 4.0)));
        a.zero_grad();
        b.zero_grad();
        tape.backward(out);
    }
    std::vector<ad::Tensor> params = {a, b};
    CHECK(ad::grad_norm(params) == doctest::Approx(5.0).epsilon(1e-14));

    a.zero_grad();
    b.zero_grad();
    CHECK(ad::grad_norm(params) == 0.0);

    a.drop_grad();
    CHECK_THROWS_AS(ad::grad_norm(params), Error);  // missing grads
}

TEST_CASE("grad_norm matches flattened finite-difference gradient norm") {
    auto model = random_mlp(4, {10}, 4, 99);
    auto x = random_input(4, 123);
    auto g = models::loss_gradient(model, x, LossKind::CrossEntropy, 2);
    auto eval = oracles::model_loss_eval(model, x, LossKind::CrossEntropy, 2);
    auto fd = oracles::fd_gradient(eval, model.flat_params(), 1e-5);
    CHECK(stats::l2_norm(g) == doctest::Approx(stats::l2_norm(fd)).epsilon(1e-4));
}

TEST_CASE("finite_difference_check on linear model with squared loss") {
    // f(w) = (w.x - t)^2: analytic gradient is exactly linear-quadratic
    std::vector<double> x = {0.5, -1.25, 2.0};
    double target = 0.75;
    auto eval = [&](std::span<const double> w) {
        double p = 0.0;
        for (size_t i = 0; i < w.size(); ++i) p += w[i] * x[i];
        return (p - target) * (p - target);
    };
    std::vector<double> w = {0.1, 0.2, -0.3};
    double pred = 0.1 * x[0] + 0.2 * x[1] - 0.3 * x[2];
    std::vector<double> analytic(3);
    for (size_t i = 0; i < 3; ++i) analytic[i] = 2.0 * (pred - target) * x[i];
    double err = ad::finite_difference_max_rel_error(eval, w, analytic, 1e-5, {});
    CHECK(err <= 1e-8);
}

TEST_CASE("finite_difference_check vacuous for zero parameters") {
    auto eval = [](std::span<const double>) { return 1.0; };
    std::vector<double> empty;
    CHECK(ad::finite_difference_max_rel_error(eval, empty, empty, 1e-5, {}) == 0.0);
}

TEST_CASE("gradient check property over sampled models") {
    for (uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(mix_seed({seed, 0xabc}));
        int in = 2 + static_cast<int>(rng.bounded(4));
        int h1 = 3 + static_cast<int>(rng.bounded(8));
        int classes = 2 + static_cast<int>(rng.bounded(4));
        auto model = random_mlp(in, {h1}, classes, seed * 31);
        auto x = random_input(in, seed * 17);
        int label = static_cast<int>(rng.bounded(static_cast<uint64_t>(classes)));
        for (LossKind kind : {LossKind::CrossEntropy, LossKind::Entropy}) {
            auto g = models::loss_gradient(model, x, kind, label);
            auto eval = oracles::model_loss_eval(model, x, kind, label);
            double err = ad::finite_difference_max_rel_error(eval, model.flat_params(), g, 1e-5, {});
            CAPTURE(seed);
            CAPTURE(static_cast<int>(kind));
            CHECK(err <= 1e-4);
        }
        // expected loss detaches the posterior weights, so its gradient is the
        // posterior-weighted sum of per-candidate cross-entropy gradients, not
        // the derivative of its own value function
        {
            auto g = models::loss_gradient(model, x, LossKind::Expected);
            auto posterior = models::predict_posterior(model, x);
            std::vector<double> oracle(g.size(), 0.0);
            auto theta = model.flat_params();
            for (int cand = 0; cand < classes; ++cand) {
                auto eval = oracles::model_loss_eval(model, x, LossKind::CrossEntropy, cand);
                auto fd = oracles::fd_gradient(eval, theta, 1e-5);
                for (size_t j = 0; j < oracle.size(); ++j)
                    oracle[j] += posterior[static_cast<size_t>(cand)] * fd[j];
            }
            double scale = std::max(stats::l2_norm(g), stats::l2_norm(oracle));
            std::vector<double> diff(g.size());
            for (size_t j = 0; j < g.size(); ++j) diff[j] = g[j] - oracle[j];
            CAPTURE(seed);
            // 1e-9 absolute floor covers central-difference roundoff
            CHECK(stats::l2_norm(diff) <= 1e-4 * scale + 1e-9);
        }
    }
}

TEST_CASE("backward linearity") {
    auto model = random_mlp(3, {6}, 3, 5);
    auto x = random_input(3, 11);
    double a = 1.7, b = -0.4;

    auto gf = models::loss_gradient(model, x, LossKind::CrossEntropy, 0);
    auto gg = models::loss_gradient(model, x, LossKind::Entropy, -1);

    auto& mut = const_cast<TaskModel&>(model);
    ad::Tape tape;
    std::vector<double> combined;
    {
        ad::TapeScope scope(tape);
        auto f = models::cross_entropy_node(model, x, 0);
        auto g = models::entropy_loss_node(model, x);
        auto out = ad::sum(ad::add(ad::scale(f, a), ad::scale(g, b)));
        mut.zero_grads();
        tape.backward(out);
        combined = model.flat_grads();
    }
    mut.drop_grads();
    for (size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-10));
}

TEST_CASE("gradients are deterministic bit for bit") {
    auto model = random_mlp(4, {12, 9}, 5, 77);
    auto x = random_input(4, 3);
    auto g1 = models::loss_gradient(model, x, LossKind::Expected);
    auto g2 = models::loss_gradient(model, x, LossKind::Expected);
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("conv2d and maxpool gradients match finite differences") {
    ModelSpec spec;
    spec.kind = ModelSpec::Kind::Cnn;
    spec.input_shape = {1, 14, 14};
    spec.classes = 3;
    spec.cnn = {2, 3, 3, 8};
    auto model = TaskModel::make(spec, 21);
    auto x = random_input(14 * 14, 8);
    auto g = models::loss_gradient(model, x, LossKind::CrossEntropy, 1);
    auto eval = oracles::model_loss_eval(model, x, LossKind::CrossEntropy, 1);
    // sample coordinates to keep the test quick
    auto theta = model.flat_params();
    Rng rng(5);
    std::vector<size_t> coords;
    for (int i = 0; i < 120; ++i) coords.push_back(rng.bounded(theta.size()));
    double err = ad::finite_difference_max_rel_error(eval, theta, g, 1e-5, coords);
    CHECK(err <= 1e-4);
}

TEST_CASE("forward values finite on finite inputs") {
    auto model = random_mlp(6, {32, 32}, 4, 2024);
    auto x = random_input(6, 1);
    for (double& v : x) v *= 50.0;  // large but finite
    auto p = models::predict_posterior(model, x);
    double sum = 0.0;
    for (double v : p) {
        CHECK(std::isfinite(v));
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}
