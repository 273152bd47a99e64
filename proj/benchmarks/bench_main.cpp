#include <benchmark/benchmark.h>

#include <random>

#include "sdectl/calibration.hpp"
#include "sdectl/dense_net.hpp"
#include "sdectl/quadrature.hpp"
#include "sdectl/rl.hpp"
#include "sdectl/verify.hpp"

using namespace sdectl;

namespace {

Trajectory sample_episode() {
    const auto sys = linear_system();
    const Policy zero = [](const Vec&, const Vec&, std::mt19937_64&) { return PolicyDraw{Vec::Zero(1), 0.0}; };
    return rollout(sys, zero, benchmark_episode(), 3);
}

void BM_EulerStep(benchmark::State& state) {
    const auto child = make_nonlinear_child();
    const Vec z{{1.0, 2.0}}, u{{0.3}}, noise{{0.1, -0.2}};
    for (auto _ : state) benchmark::DoNotOptimize(euler_step(*child, z, u, 0.1, noise));
}
BENCHMARK(BM_EulerStep);

void BM_TransitionLogDensity(benchmark::State& state) {
    const auto mother = make_linear_mother();
    const Vec w{{8.0, 4.0}}, z{{1.0, 2.0}}, x{{8.1, 3.9}};
    for (auto _ : state) benchmark::DoNotOptimize(log_density(transition_law(*mother, w, z, 0.1), x));
}
BENCHMARK(BM_TransitionLogDensity);

void BM_GaussHermiteRule(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(gauss_hermite(n));
}
BENCHMARK(BM_GaussHermiteRule)->Arg(24)->Arg(80)->Arg(200);

void BM_OperatorZoo(benchmark::State& state) {
    const auto zoo = operator_zoo();
    for (auto _ : state) benchmark::DoNotOptimize(run_zoo(zoo, 1e-6));
}
BENCHMARK(BM_OperatorZoo)->Unit(benchmark::kMillisecond);

void BM_DenseNetBackward(benchmark::State& state) {
    DenseNet net({4, static_cast<int>(state.range(0)), 1}, Activation::sigmoid);
    std::mt19937_64 rng(1);
    net.init_glorot(rng);
    const Vec x{{0.1, 0.2, 0.8, 0.4}}, up{{1.0}};
    for (auto _ : state) benchmark::DoNotOptimize(net.backward(x, up));
}
BENCHMARK(BM_DenseNetBackward)->Arg(32)->Arg(128);

void BM_CriticLoss(benchmark::State& state) {
    const auto sys = linear_system();
    const auto episode = sample_episode();
    DenseNet net({4, 32, 1}, Activation::sigmoid);
    std::mt19937_64 rng(2);
    net.init_glorot(rng);
    const Critic critic(net, Vec::Constant(4, 10.0));
    CriticBatch batch;
    for (const auto& s : episode) batch.samples.push_back(&s);
    compute_y_brackets(sys, 0.1, batch);
    const bool yorl = state.range(0) == 0;
    Vec grad = Vec::Zero(net.param_count());
    for (auto _ : state) {
        grad.setZero();
        benchmark::DoNotOptimize(yorl ? critic_loss_yorl(critic, batch, 0.9999, &grad)
                                      : critic_loss_tsrl(critic, batch.samples, std::pow(0.9999, 0.1), 0.1, &grad));
    }
    state.SetLabel(yorl ? "YORL" : "TSRL");
    state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.samples.size()));
}
BENCHMARK(BM_CriticLoss)->Arg(0)->Arg(1);

void BM_YBrackets(benchmark::State& state) {
    const auto sys = linear_system();
    const auto episode = sample_episode();
    CriticBatch batch;
    for (const auto& s : episode) batch.samples.push_back(&s);
    for (auto _ : state) {
        compute_y_brackets(sys, 0.1, batch);
        benchmark::DoNotOptimize(batch.y_child.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.samples.size()));
}
BENCHMARK(BM_YBrackets);

void BM_NllGradient(benchmark::State& state) {
    const auto samples = child_samples({sample_episode()});
    LearnedDiffusionModel model(2, 1, 32, Activation::tanh);
    std::mt19937_64 rng(4);
    model.drift_net().init_glorot(rng);
    model.diff_net().init_glorot(rng);
    std::vector<std::size_t> idx(std::min<std::size_t>(256, samples.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Vec grad = Vec::Zero(model.drift_net().param_count() + model.diff_net().param_count());
    for (auto _ : state) {
        grad.setZero();
        benchmark::DoNotOptimize(nll_value_and_grad(model, samples, idx, 0.1, grad));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(idx.size()));
}
BENCHMARK(BM_NllGradient);

} // namespace

BENCHMARK_MAIN();
