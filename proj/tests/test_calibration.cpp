#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sdectl/calibration.hpp"
#include "support.hpp"

using namespace sdectl;
using testing_support::rel_close;

namespace {

ModelPtr constant_diffusion(int n, double sigma) {
    FunctionModel::Parts p;
    p.drift = [n](const Vec&, const Vec&) { return Vec(Vec::Zero(n)); };
    p.diffusion = [n, sigma](const Vec&, const Vec&) { return Mat(sigma * Mat::Identity(n, n)); };
    return std::make_shared<FunctionModel>(n, 0, p);
}

LearnedDiffusionModel random_learned(int n, int m, int hidden, std::uint64_t seed, double out_gain = 1.0) {
    LearnedDiffusionModel model(n, m, hidden, Activation::tanh);
    std::mt19937_64 rng(seed);
    model.drift_net().init_glorot(rng);
    model.diff_net().init_glorot(rng);
    model.drift_net().params() *= out_gain;
    std::normal_distribution<double> N(0.0, 0.5);
    Vec shift(n + m), scale(n + m);
    for (int i = 0; i < n + m; ++i) {
        shift[i] = N(rng);
        scale[i] = 0.5 + std::abs(N(rng));
    }
    model.set_standardization(shift, scale);
    return model;
}

std::vector<CalibrationSample> random_samples(int n, int m, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<CalibrationSample> out;
    for (int k = 0; k < count; ++k) {
        CalibrationSample s;
        s.prev_state = testing_support::random_vec(rng, n, -1.0, 1.0);
        s.prev_input = testing_support::random_vec(rng, m, -1.0, 1.0);
        s.next_state = s.prev_state + 0.1 * testing_support::random_vec(rng, n, -1.0, 1.0);
        out.push_back(s);
    }
    return out;
}

Vec joint_params(const LearnedDiffusionModel& m) {
    return concat(m.drift_net().params(), m.diff_net().params());
}

void set_joint(LearnedDiffusionModel& m, const Vec& p) {
    const auto P1 = m.drift_net().param_count();
    m.drift_net().params() = p.head(P1);
    m.diff_net().params() = p.tail(p.size() - P1);
}

template <class F>
Vec fd_gradient(LearnedDiffusionModel& m, F&& loss, double step) {
    const Vec p0 = joint_params(m);
    Vec g(p0.size());
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
        const double h = step * (1.0 + std::abs(p0[i]));
        Vec p = p0;
        p[i] += h;
        set_joint(m, p);
        const double plus = loss();
        p[i] = p0[i] - h;
        set_joint(m, p);
        const double minus = loss();
        g[i] = (plus - minus) / (2.0 * h);
    }
    set_joint(m, p0);
    return g;
}

double spectral(const Mat& J) {
    return J.size() == 0 ? 0.0 : Eigen::JacobiSVD<Mat>(J).singularValues()[0];
}

/// dz = (a z + b u) dt + c dB under uniform random controls.
Trajectory linear_sde_data(double a, double b, double c, double horizon, std::uint64_t seed) {
    FunctionModel::Parts p;
    p.drift = [a, b](const Vec& x, const Vec& u) { return Vec::Constant(1, a * x[0] + b * u[0]); };
    p.diffusion = [c](const Vec&, const Vec&) { return Mat::Constant(1, 1, c); };
    const ChildMotherSystem sys(std::make_shared<FunctionModel>(1, 1, p), nullptr);
    EpisodeSpec spec;
    spec.dt = 0.1;
    spec.horizon = horizon;
    spec.z0 = Vec::Zero(1);
    spec.w0 = Vec(0);
    spec.u_lo = Vec::Constant(1, -2.0);
    spec.u_hi = Vec::Constant(1, 2.0);
    spec.ordering_constraint = false;
    const Policy pol = [](const Vec&, const Vec&, std::mt19937_64& r) {
        std::uniform_real_distribution<double> U(-2.0, 2.0);
        return PolicyDraw{Vec::Constant(1, U(r)), 0.0};
    };
    return rollout(sys, pol, spec, seed);
}

} // namespace

TEST_SUITE("calibration") {

TEST_CASE("nll examples") {
    // perfect prediction with unit covariance
    const std::vector<CalibrationSample> one{{Vec::Zero(1), Vec(0), Vec::Zero(1)}};
    CHECK(nll_loss(*constant_diffusion(1, 1.0), one, 1.0) ==
          doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-8));

    // doubling the covariance adds 1/2 log 2 per dimension
    const std::vector<CalibrationSample> two{{Vec::Ones(2), Vec(0), Vec::Ones(2)}};
    const double base = nll_loss(*constant_diffusion(2, 1.0), two, 0.1);
    const double doubled = nll_loss(*constant_diffusion(2, std::sqrt(2.0)), two, 0.1);
    CHECK(doubled - base == doctest::Approx(std::log(2.0)).epsilon(1e-8));
}

TEST_CASE("batch nll is the mean of per-sample log densities") {
    const auto model = random_learned(2, 1, 8, 3);
    const auto batch = random_samples(2, 1, 50, 4);
    double sum = 0.0;
    for (const auto& s : batch)
        sum -= log_density(transition_law(model, s.prev_state, s.prev_input, 0.1), s.next_state);
    CHECK(rel_close(nll_loss(model, batch, 0.1), sum / 50.0, 1e-12));

    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Vec grad = Vec::Zero(joint_params(model).size());
    // closed form skips the 1e-9 covariance jitter
    CHECK(rel_close(nll_value_and_grad(model, batch, idx, 0.1, grad), sum / 50.0, 1e-8));
}

TEST_CASE("nll gradient matches finite differences") {
    auto model = random_learned(2, 2, 6, 5);
    const auto batch = random_samples(2, 2, 20, 6);
    std::vector<std::size_t> idx{0, 3, 4, 9, 17};
    Vec grad = Vec::Zero(joint_params(model).size());
    nll_value_and_grad(model, batch, idx, 0.1, grad);
    Vec scratch = grad;
    const Vec fd = fd_gradient(model, [&] {
        scratch.setZero();
        return nll_value_and_grad(model, batch, idx, 0.1, scratch);
    }, 1e-6);
    CHECK((grad - fd).norm() / std::max(fd.norm(), 1e-3) < 1e-5);
}

TEST_CASE("penalty examples") {
    const auto batch = random_samples(1, 1, 10, 7);
    LearnedDiffusionModel zero(1, 1, 4, Activation::tanh);
    CHECK(lipschitz_penalty(zero, batch, 1.0, 0.5) == 0.0);

    // linear drift with weights (30, 21) and constant diffusion: norms sum to 51
    DenseNet f({2, 1}, Activation::tanh), g({2, 1}, Activation::tanh);
    f.params() << 30.0, 21.0, 0.0;
    g.params() << 0.0, 0.0, 0.3;
    const LearnedDiffusionModel lin(f, g, Vec::Zero(2), Vec::Ones(2));
    CHECK(lipschitz_norm_sum(lin, Vec{{0.2}}, Vec{{-0.4}}) == doctest::Approx(51.0).epsilon(1e-12));
    CHECK(lipschitz_penalty(lin, batch, 2.0, 50.0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("penalty norms match finite-difference Jacobians") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 1 + trial % 2, m = 1 + trial % 3;
        const auto model = random_learned(n, m, 8, rng());
        const Vec x = testing_support::random_vec(rng, n), u = testing_support::random_vec(rng, m);
        auto fd_jac = [&](auto&& fn, const Vec& at, bool wrt_x) {
            const Eigen::Index k = wrt_x ? n : m;
            Mat J(n, k);
            for (Eigen::Index i = 0; i < k; ++i) {
                Vec p = at, q = at;
                const double h = 1e-6 * (1.0 + std::abs(at[i]));
                p[i] += h;
                q[i] -= h;
                J.col(i) = wrt_x ? Vec((fn(p, u) - fn(q, u)) / (2 * h)) : Vec((fn(x, p) - fn(x, q)) / (2 * h));
            }
            return J;
        };
        auto drift = [&](const Vec& a, const Vec& b) { return model.drift(a, b); };
        auto diag = [&](const Vec& a, const Vec& b) { return model.diffusion_diag(a, b); };
        const double want = spectral(fd_jac(drift, x, true)) + spectral(fd_jac(drift, u, false)) +
                            spectral(fd_jac(diag, x, true)) + spectral(fd_jac(diag, u, false));
        CHECK(std::abs(lipschitz_norm_sum(model, x, u) - want) < 1e-4);
    }
}

TEST_CASE("penalty gradient matches finite differences") {
    auto model = random_learned(2, 1, 6, 9, 3.0);
    const auto batch = random_samples(2, 1, 12, 10);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const double C = 0.5, kappa = 1.5;
    Vec grad = Vec::Zero(joint_params(model).size());
    const double pen = lipschitz_penalty_and_grad(model, batch, idx, kappa, C, grad);
    REQUIRE(pen > 0.0);
    CHECK(rel_close(pen, lipschitz_penalty(model, batch, kappa, C), 1e-12));
    const Vec fd = fd_gradient(model, [&] { return lipschitz_penalty(model, batch, kappa, C); }, 1e-6);
    CHECK((grad - fd).norm() / fd.norm() < 1e-4);
}

TEST_CASE("inactive penalty leaves the gradient untouched") {
    const auto model = random_learned(2, 2, 6, 11);
    const auto batch = random_samples(2, 2, 30, 12);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Vec pure = Vec::Zero(joint_params(model).size()), total = pure;
    nll_value_and_grad(model, batch, idx, 0.1, pure);
    nll_value_and_grad(model, batch, idx, 0.1, total);
    CHECK(lipschitz_penalty_and_grad(model, batch, idx, 1.0, 1e6, total) == 0.0);
    CHECK(std::memcmp(pure.data(), total.data(), sizeof(double) * std::size_t(pure.size())) == 0);
}

TEST_CASE("learned model derivative hooks agree with finite differences") {
    const auto model = random_learned(2, 1, 8, 13);
    CHECK(model.analytic_derivatives());
    CHECK(derivative_mismatch(model, Vec{{0.3}}, -1.0, 1.0, 30, 14) < 1e-5);
    for (int i = 0; i < 5; ++i) {
        const Vec d = model.diffusion_diag(Vec::Constant(2, 3.0 * i - 6.0), Vec{{0.1}});
        CHECK((d.array() > 0.0).all());
    }
}

TEST_CASE("learned model save and load") {
    const auto model = random_learned(2, 1, 5, 15);
    const auto path = (std::filesystem::temp_directory_path() / "sdectl_learned_test.bin").string();
    model.save(path);
    const auto back = LearnedDiffusionModel::load(path);
    std::remove(path.c_str());
    CHECK(back->drift_net().params() == model.drift_net().params());
    CHECK(back->diff_net().params() == model.diff_net().params());
    CHECK(back->shift() == model.shift());
    CHECK(back->scale() == model.scale());
    const Vec x{{0.4, -0.2}}, u{{0.7}};
    CHECK(back->drift(x, u) == model.drift(x, u));
    CHECK_THROWS_AS(LearnedDiffusionModel::load("/nonexistent/model.bin"), ConfigError);
}

TEST_CASE("calibration is deterministic for a seed") {
    std::vector<Trajectory> data;
    for (std::uint64_t s = 1; s <= 2; ++s) {
        const Policy pol = [](const Vec&, const Vec&, std::mt19937_64& r) {
            return PolicyDraw{standard_normal(r, 1), 0.0};
        };
        data.push_back(rollout(linear_system(), pol, benchmark_episode(), s));
    }
    CalibrationConfig cfg;
    cfg.epochs = 2;
    cfg.hidden = 6;
    std::ostringstream log;
    const auto a = calibrate(data, cfg, 21, &log);
    const auto b = calibrate(data, cfg, 21, &log);
    REQUIRE(a.mother);
    CHECK(a.child->drift_net().params() == b.child->drift_net().params());
    CHECK(a.child->diff_net().params() == b.child->diff_net().params());
    CHECK(a.mother->drift_net().params() == b.mother->drift_net().params());
    CHECK(a.history().size() == 2);
    CHECK(a.history()[1].holdout_nll ==
          doctest::Approx(a.child_history[1].holdout_nll + a.mother_history[1].holdout_nll));

    std::ostringstream csv;
    write_history_csv(csv, a.history());
    CHECK(csv.str().rfind("epoch,train_nll,holdout_nll,penalty\n", 0) == 0);

    auto shifted = data;
    for (auto& s : shifted[0]) s.t *= 2.0;
    CHECK_THROWS_AS(calibrate(shifted, cfg, 21, &log), ContractError);
}

TEST_CASE("noise-free data is rejected with a warning") {
    const auto ep = linear_sde_data(-0.5, 1.0, 0.0, 100.0, 3);
    std::ostringstream log;
    CalibrationConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(calibrate({ep}, cfg, 1, &log), DegenerateDataError);
    CHECK(log.str().find("warning") != std::string::npos);
}

TEST_CASE("config validation") {
    CalibrationConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.holdout_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.C1 = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.kappa2 = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("recovers a known linear generator") {
    const double a = -0.5, b = 1.0, c = 0.3;
    const auto ep = linear_sde_data(a, b, c, 2000.0, 11);
    CalibrationConfig cfg;
    cfg.epochs = 40;
    std::ostringstream log;
    const auto res = calibrate({ep}, cfg, 5, &log);

    double se = 0.0, st = 0.0, hs = 0.0;
    int count = 0;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (std::size_t k = 0; k < ep.size(); k += 10) {
        const Vec x = ep[k].z, u{{U(rng)}};
        const double truth = a * x[0] + b * u[0];
        const double learned = res.child->drift(x, u)[0];
        se += (learned - truth) * (learned - truth);
        st += truth * truth;
        hs += res.child->diffusion_diag(x, u)[0];
        ++count;
    }
    const double drift_rms = std::sqrt(se / st);
    const double mean_h = hs / count;
    INFO("drift rel rms " << drift_rms << ", mean diffusion " << mean_h);
    CHECK(drift_rms < 0.05);
    CHECK(std::abs(mean_h - c) < 0.1 * c);

    // held-out nll has no upward trend over the second half
    const auto& h = res.child_history;
    const std::size_t half = h.size() / 2;
    double worst_rise = 0.0;
    for (std::size_t i = half + 1; i < h.size(); ++i)
        worst_rise = std::max(worst_rise, h[i].holdout_nll - h[half].holdout_nll);
    CHECK(worst_rise < 0.01);
    CHECK(h.back().holdout_nll <= h[half].holdout_nll + 1e-3);
}

} // TEST_SUITE
