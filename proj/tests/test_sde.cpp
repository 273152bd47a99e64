#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sdectl/quadrature.hpp"
#include "sdectl/sde.hpp"
#include "sdectl/systems.hpp"
#include "sdectl/trajectory.hpp"
#include "support.hpp"

using namespace sdectl;
using testing_support::rel_close;

namespace {

ModelPtr constant_model(int n, int m, Vec h, Mat H) {
    FunctionModel::Parts p;
    p.name = "constant";
    p.drift = [h](const Vec&, const Vec&) { return h; };
    p.diffusion = [H](const Vec&, const Vec&) { return H; };
    p.drift_jac = [n](const Vec&, const Vec&) { return Mat(Mat::Zero(n, n)); };
    p.diff_sq_jac1 = p.drift_jac;
    p.diff_sq_jac2 = p.drift_jac;
    return std::make_shared<FunctionModel>(n, m, p);
}

// Textbook density with explicitly written inverse and determinant.
double explicit_log_density(const Vec& mu, const Mat& S, const Vec& x) {
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const Vec r = x - mu;
    switch (mu.size()) {
    case 1: return -0.5 * (log2pi + std::log(S(0, 0)) + r[0] * r[0] / S(0, 0));
    case 2: {
        const double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
        const double q =
            (S(1, 1) * r[0] * r[0] - (S(0, 1) + S(1, 0)) * r[0] * r[1] + S(0, 0) * r[1] * r[1]) /
            det;
        return -0.5 * (2.0 * log2pi + std::log(det) + q);
    }
    default: {
        const double a = S(0, 0), b = S(0, 1), c = S(0, 2), d = S(1, 0), e = S(1, 1),
                     f = S(1, 2), g = S(2, 0), h = S(2, 1), k = S(2, 2);
        const double det = a * (e * k - f * h) - b * (d * k - f * g) + c * (d * h - e * g);
        Mat adj(3, 3);
        adj << e * k - f * h, c * h - b * k, b * f - c * e,
               f * g - d * k, a * k - c * g, c * d - a * f,
               d * h - e * g, b * g - a * h, a * e - b * d;
        const double q = r.dot(adj * r) / det;
        return -0.5 * (3.0 * log2pi + std::log(det) + q);
    }
    }
}

} // namespace

TEST_SUITE("sde") {

TEST_CASE("euler_step examples") {
    auto still = constant_model(2, 0, Vec::Zero(2), Mat::Zero(2, 2));
    const Vec s{{3.0, -1.5}};
    CHECK(euler_step(*still, s, Vec(0), 0.1, Vec::Ones(2)) == s);

    auto child = make_linear_child();
    const Vec z = euler_step(*child, Vec{{0.0, 2.0}}, Vec{{0.0}}, 0.1, Vec::Zero(2));
    CHECK(z[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(z[1] == doctest::Approx(2.0).epsilon(1e-15));

    auto unit = constant_model(1, 0, Vec::Zero(1), Mat::Identity(1, 1));
    const Vec x = euler_step(*unit, Vec{{1.0}}, Vec(0), 0.04, Vec{{0.5}});
    CHECK(x[0] == doctest::Approx(1.1).epsilon(1e-15));

    CHECK_THROWS_AS(euler_step(*unit, Vec{{1.0}}, Vec(0), 0.04, Vec::Zero(2)), ContractError);
    CHECK_THROWS_AS(euler_step(*unit, Vec::Zero(2), Vec(0), 0.04, Vec::Zero(1)), ContractError);
}

TEST_CASE("transition_law examples") {
    auto unit = constant_model(2, 0, Vec::Zero(2), Mat::Identity(2, 2));
    const auto law = transition_law(*unit, Vec::Zero(2), Vec(0), 1.0);
    CHECK(law.mean().norm() == 0.0);
    CHECK((law.cov() - Mat::Identity(2, 2)).norm() < 1e-8);

    const auto mother = transition_law(*make_linear_mother(), Vec{{8.0, 4.0}}, Vec{{0.0, 2.0}}, 0.1);
    CHECK(mother.mean()[0] == doctest::Approx(8.4).epsilon(1e-14));
    CHECK(mother.mean()[1] == doctest::Approx(3.8).epsilon(1e-14));

    Mat skew{{2.0, 0.3}, {0.1, 1.0}};
    const GaussianTransition g(Vec::Zero(2), skew, 0.1);
    CHECK(std::abs(g.cov()(0, 1) - g.cov()(1, 0)) < 1e-12);

    FunctionModel::Parts bad;
    bad.drift = [](const Vec&, const Vec&) { return Vec::Constant(1, std::nan("")); };
    bad.diffusion = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
    CHECK_THROWS_AS(transition_law(FunctionModel(1, 0, bad), Vec::Zero(1), Vec(0), 0.1), NumericError);
    CHECK_THROWS_AS(GaussianTransition(Vec::Zero(2), Mat::Zero(2, 2), 0.1), SingularCovarianceError);
}

TEST_CASE("log_density examples") {
    const GaussianTransition std2(Vec::Zero(2), Mat::Identity(2, 2), 1.0);
    // jitter 1e-9 * trace / n moves the value by ~1e-9
    CHECK(log_density(std2, Vec::Zero(2)) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-8));
    const GaussianTransition std1(Vec::Zero(1), Mat::Identity(1, 1), 1.0);
    CHECK(log_density(std1, Vec::Ones(1)) ==
          doctest::Approx(-0.5 * (std::log(2.0 * std::numbers::pi) + 1.0)).epsilon(1e-8));
}

TEST_CASE("log_density matches the explicit formula on random cases") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> dim(1, 3);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = dim(rng);
        const Vec mu = testing_support::random_vec(rng, n, -3.0, 3.0);
        const Mat S = testing_support::random_spd(rng, n);
        const Vec x = mu + testing_support::random_vec(rng, n, -2.0, 2.0);
        const GaussianTransition law(mu, S, 0.1);
        const double got = log_density(law, x);
        const double want = explicit_log_density(law.mean(), law.cov(), x);
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("density integrates to one") {
    const GaussianTransition law(Vec{{0.7}}, Mat::Constant(1, 1, 0.3), 0.1);
    // integrate p against a wider Gaussian reference q: E_q[p / q] = 1
    const GaussianTransition ref(Vec{{0.7}}, Mat::Constant(1, 1, 1.2), 0.1);
    const double mass = gaussian_expectation(ref, 200, [&](const Vec& x) {
        return std::exp(log_density(law, x) - log_density(ref, x));
    });
    CHECK(std::abs(mass - 1.0) < 1e-8);
}

TEST_CASE("Euler draws match the transition law") {
    const auto model = make_linear_mother();
    const Vec w{{8.0, 4.0}}, z{{0.0, 2.0}};
    const double dt = 0.1;
    const auto law = transition_law(*model, w, z, dt);
    std::mt19937_64 rng(7);
    const int N = 100000;
    std::vector<Vec> draws;
    draws.reserve(N);
    Vec mean = Vec::Zero(2);
    for (int i = 0; i < N; ++i) {
        draws.push_back(euler_step(*model, w, z, dt, standard_normal(rng, 2)));
        mean += draws.back();
    }
    mean /= N;
    for (int i = 0; i < 2; ++i) {
        const double se = std::sqrt(law.cov()(i, i) / N);
        CHECK(std::abs(mean[i] - law.mean()[i]) < 4.0 * se);
    }
    for (int i = 0; i < 2; ++i)
        for (int j = i; j < 2; ++j) {
            double m = 0.0, m2 = 0.0;
            for (const auto& d : draws) {
                const double p = (d[i] - mean[i]) * (d[j] - mean[j]);
                m += p;
                m2 += p * p;
            }
            m /= N;
            const double se = std::sqrt((m2 / N - m * m) / N);
            CHECK(std::abs(m - law.cov()(i, j)) < 4.0 * se + 1e-12);
        }
}

TEST_CASE("child and mother noise streams are uncorrelated") {
    RolloutStreams st(2024);
    const int N = 100000;
    double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < N; ++i) {
        const double x = standard_normal(st.child, 1)[0];
        const double y = standard_normal(st.mother, 1)[0];
        sx += x; sy += y; sxy += x * y; sxx += x * x; syy += y * y;
    }
    const double cov = sxy / N - sx / N * sy / N;
    const double corr = cov / std::sqrt((sxx / N - sx * sx / N / N) * (syy / N - sy * sy / N / N));
    CHECK(std::abs(corr) < 4.0 / std::sqrt(double(N)));
}

TEST_CASE("benchmark models: derivative hooks agree with finite differences") {
    const Vec u{{0.5}}, z{{1.0, 2.0}};
    CHECK(derivative_mismatch(*make_linear_child(), u, 0.5, 5.0, 50, 1) < 1e-5);
    CHECK(derivative_mismatch(*make_nonlinear_child(), u, 0.5, 5.0, 50, 2) < 1e-5);
    CHECK(derivative_mismatch(*make_linear_mother(), z, 0.5, 5.0, 50, 3) < 1e-5);
    CHECK(derivative_mismatch(*make_nonlinear_mother(), z, 0.5, 5.0, 50, 4) < 1e-5);
    for (const auto& m : {make_linear_child(), make_nonlinear_child(), make_linear_mother(),
                          make_nonlinear_mother()})
        CHECK(m->analytic_derivatives());
}

TEST_CASE("nonlinear child drift at the initial state") {
    const Vec h = make_nonlinear_child()->drift(Vec{{0.0, 2.0}}, Vec{{0.0}});
    CHECK(h[0] == 2.0);
    CHECK(h[1] == doctest::Approx(-0.04).epsilon(1e-14));
}

TEST_CASE("system dimensions must line up") {
    CHECK_THROWS_AS(ChildMotherSystem(make_linear_child(), constant_model(2, 3, Vec::Zero(2), Mat::Identity(2, 2))),
                    ContractError);
    const auto sys = linear_system();
    CHECK(sys.child_dim() == 2);
    CHECK(sys.mother_dim() == 2);
    CHECK(sys.control_dim() == 1);
}

TEST_CASE("reward examples") {
    const RewardConstants c;
    CHECK(reward(Vec{{0.0, 0.0}}, Vec{{10.0, 0.0}}, Vec::Zero(1), c) == doctest::Approx(5.0));
    CHECK(reward(Vec{{0.0, 0.0}}, Vec{{10.0, 0.0}}, Vec::Ones(1), c) == doctest::Approx(4.8));
    CHECK(reward(Vec{{0.0, 0.0}}, Vec{{1e6, 0.0}}, Vec::Constant(1, 2.0), c) ==
          doctest::Approx(-0.8).epsilon(1e-12));
}

} // TEST_SUITE
