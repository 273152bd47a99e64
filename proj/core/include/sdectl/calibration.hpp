#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sdectl/dense_net.hpp"
#include "sdectl/sde.hpp"
#include "sdectl/trajectory.hpp"

namespace sdectl {

/// The data cannot identify a diffusion (increments are explained exactly by
/// a linear drift, so the likelihood is unbounded).
class DegenerateDataError : public NumericError {
public:
    using NumericError::NumericError;
};

struct CalibrationConfig {
    // kappa1/C1 weight the mother penalty, kappa2/C2 the child penalty.
    double kappa1 = 1.0, kappa2 = 1.0;
    double C1 = 50.0, C2 = 50.0;
    double dt = 0.1;
    int batch_size = 256;
    int epochs = 40;
    double holdout_fraction = 0.2;
    int hidden = 32;
    Activation activation = Activation::tanh;
    double lr = 3e-4;

    void validate() const;
};

/// Neural drift and diagonal diffusion over the joint input [x; u]:
///   h(x,u) = drift_net(s), H(x,u) = diag(softplus(diff_net(s)) + floor),
/// where s = ([x; u] - shift) / scale is a fixed standardization.
class LearnedDiffusionModel final : public DiffusionModel {
public:
    static constexpr double kDiffusionFloor = 1e-6;

    LearnedDiffusionModel(int state_dim, int input_dim, int hidden, Activation activation);
    LearnedDiffusionModel(DenseNet drift_net, DenseNet diff_net, Vec shift, Vec scale);

    Vec drift(const Vec& x, const Vec& u) const override;
    Mat diffusion(const Vec& x, const Vec& u) const override;
    Vec diffusion_diag(const Vec& x, const Vec& u) const;

    Mat drift_jac(const Vec& x, const Vec& u) const override;
    Mat diff_sq_jac1(const Vec& x, const Vec& u) const override;
    Mat diff_sq_jac2(const Vec& x, const Vec& u) const override;
    bool analytic_derivatives() const override { return true; }
    std::string name() const override { return "learned"; }

    /// Jacobians w.r.t. the raw joint input [x; u]: of the drift, and of the
    /// vector of diagonal diffusion entries.
    Mat drift_input_jac(const Vec& x, const Vec& u) const;
    Mat diff_input_jac(const Vec& x, const Vec& u) const;

    DenseNet& drift_net() noexcept { return drift_; }
    DenseNet& diff_net() noexcept { return diff_; }
    const DenseNet& drift_net() const noexcept { return drift_; }
    const DenseNet& diff_net() const noexcept { return diff_; }
    const Vec& shift() const noexcept { return shift_; }
    const Vec& scale() const noexcept { return scale_; }
    void set_standardization(Vec shift, Vec scale);

    Vec joint(const Vec& x, const Vec& u) const;

    void save(const std::string& path) const;
    static std::shared_ptr<LearnedDiffusionModel> load(const std::string& path);

private:
    DenseNet drift_, diff_;
    Vec shift_, scale_;
};

using LearnedPtr = std::shared_ptr<LearnedDiffusionModel>;

struct CalibrationSample {
    Vec prev_state, prev_input, next_state;
};

/// Mean negative log-likelihood of next_state under the Euler-Maruyama law.
double nll_loss(const DiffusionModel& model, const std::vector<CalibrationSample>& batch, double dt);

/// Same value in closed form for diagonal diffusion, plus its gradient w.r.t.
/// [drift params; diff params].
double nll_value_and_grad(const LearnedDiffusionModel& model,
                          const std::vector<CalibrationSample>& batch,
                          const std::vector<std::size_t>& idx, double dt, Vec& grad);

/// The per-sample quantity inside the positive part: sum of the spectral
/// norms of the state and input Jacobian blocks of the drift and of the
/// diffusion diagonal.
double lipschitz_norm_sum(const LearnedDiffusionModel& model, const Vec& x, const Vec& u);

/// kappa * mean over the batch of max(0, lipschitz_norm_sum - C).
double lipschitz_penalty(const LearnedDiffusionModel& model,
                         const std::vector<CalibrationSample>& batch, double kappa, double C);

/// Penalty over batch[idx] and its gradient (added into `grad`).
double lipschitz_penalty_and_grad(const LearnedDiffusionModel& model,
                                  const std::vector<CalibrationSample>& batch,
                                  const std::vector<std::size_t>& idx, double kappa, double C,
                                  Vec& grad);

/// Child pairs (z, u) -> z' and mother pairs (w, z) -> w' from consecutive rows.
std::vector<CalibrationSample> child_samples(const std::vector<Trajectory>& data);
std::vector<CalibrationSample> mother_samples(const std::vector<Trajectory>& data);

struct CalibrationEpoch {
    int epoch = 0;
    double train_nll = 0.0, holdout_nll = 0.0, penalty = 0.0;
};

struct CalibrationResult {
    LearnedPtr child, mother;  // mother is null when the data has no mother state
    std::vector<CalibrationEpoch> child_history, mother_history;
    /// Child and mother columns summed per epoch.
    std::vector<CalibrationEpoch> history() const;
};

/// Fits one model; exposed for tests and for callers with custom data.
LearnedPtr fit_model(const std::vector<CalibrationSample>& samples, int state_dim, int input_dim,
                     const CalibrationConfig& config, double kappa, double C, std::uint64_t seed,
                     std::vector<CalibrationEpoch>& history, std::ostream* log = nullptr);

CalibrationResult calibrate(const std::vector<Trajectory>& data, const CalibrationConfig& config,
                            std::uint64_t seed, std::ostream* log = nullptr);

void write_history_csv(std::ostream& out, const std::vector<CalibrationEpoch>& history);

} // namespace sdectl
