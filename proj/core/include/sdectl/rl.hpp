#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdectl/dense_net.hpp"
#include "sdectl/operators.hpp"
#include "sdectl/trajectory.hpp"

namespace sdectl {

enum class CriticMode { yorl, tsrl };

std::string_view to_string(CriticMode m);
CriticMode parse_critic_mode(std::string_view name);

/// Raised by an armed critic when something asks for a state derivative of V.
class DerivativeHookError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// State-value network V(z, w). Inputs are divided elementwise by a fixed
/// `obs_scale` before entering the net.
class Critic {
public:
    Critic() = default;
    Critic(DenseNet net, Vec obs_scale);

    double value(const Vec& z, const Vec& w) const;
    /// Adds upstream * dV/dparams into grad.
    void accumulate_param_grad(const Vec& z, const Vec& w, double upstream, Vec& grad) const;

    // State-derivative hooks. They count every call; when armed they throw.
    Vec state_gradient(const Vec& z, const Vec& w) const;
    Mat state_hessian(const Vec& z, const Vec& w) const;
    void arm_derivative_hooks(bool armed) const { armed_ = armed; }
    long derivative_calls() const noexcept { return calls_; }
    void reset_derivative_calls() const { calls_ = 0; }

    /// V as a scalar field of the child state with w frozen (or of w with z
    /// frozen), with derivatives routed through the hooks.
    ScalarField field_in_z(const Vec& w) const;
    ScalarField field_in_w(const Vec& z) const;

    DenseNet& net() noexcept { return net_; }
    const DenseNet& net() const noexcept { return net_; }
    const Vec& obs_scale() const noexcept { return scale_; }
    Vec observe(const Vec& z, const Vec& w) const;

private:
    void hook() const;

    DenseNet net_;
    Vec scale_;
    mutable bool armed_ = false;
    mutable long calls_ = 0;
};

/// u ~ N(mu(z, w), dt * diag(exp(2 log_std))).
class GaussianPolicy {
public:
    GaussianPolicy() = default;
    GaussianPolicy(DenseNet mean_net, Vec log_std, Vec obs_scale, double dt);

    Vec mean(const Vec& z, const Vec& w) const;
    Vec stddev() const;
    double log_prob(const Vec& z, const Vec& w, const Vec& u) const;
    PolicyDraw sample(const Vec& z, const Vec& w, std::mt19937_64& rng) const;
    Policy as_policy() const;

    /// d log_prob / d[mean params; log_std], scaled by `upstream` and added into grad.
    void accumulate_log_prob_grad(const Vec& z, const Vec& w, const Vec& u, double upstream,
                                  Vec& grad) const;

    Eigen::Index param_count() const { return mean_net_.param_count() + log_std_.size(); }
    Vec params() const;
    void set_params(const Vec& p);

    DenseNet& mean_net() noexcept { return mean_net_; }
    const DenseNet& mean_net() const noexcept { return mean_net_; }
    const Vec& log_std() const noexcept { return log_std_; }
    const Vec& obs_scale() const noexcept { return scale_; }
    double dt() const noexcept { return dt_; }

    void save(const std::string& path) const;
    static GaussianPolicy load(const std::string& path);

private:
    DenseNet mean_net_;
    Vec log_std_;
    Vec scale_;
    double dt_ = 0.1;
};

void save_critic(const std::string& path, const Critic& critic);
Critic load_critic(const std::string& path);

struct RLConfig {
    double gamma = 0.9999;
    double clip_eps = 0.2;
    EpisodeSpec episode = benchmark_episode();
    int epochs = 300;
    int episodes_per_epoch = 8;
    int minibatch = 256;
    int update_passes = 10;
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    int hidden = 32;
    Activation activation = Activation::sigmoid;
    double init_log_std = 0.0;
    double obs_scale = 10.0;
    CriticMode critic_mode = CriticMode::yorl;
    std::uint64_t seed = 1;
    /// Make every critic state-derivative request during training throw.
    bool arm_derivative_hooks = false;

    double dt() const { return episode.dt; }
    void validate() const;
};

/// Samples with precomputed Y-operator brackets for the child and mother
/// processes; they depend on the system only, never on the critic.
struct CriticBatch {
    std::vector<const TransitionSample*> samples;
    std::vector<double> y_child, y_mother;
};

/// Y-operator factors at each sample: child context (z_prev, u_prev) evaluated
/// at (z, u), mother context (w_prev, z_prev) evaluated at (w, z).
void compute_y_brackets(const ChildMotherSystem& system, double dt, CriticBatch& batch,
                        YVariant variant = YVariant::standard);

/// mean (V(s) - [r dt + gamma_step V(s') (1 - terminal)])^2; with grad != null
/// adds the gradient with the target held fixed.
double critic_loss_tsrl(const Critic& critic, const std::vector<const TransitionSample*>& batch,
                        double gamma_step, double dt, Vec* grad = nullptr);

/// mean [R + ln(gamma) V + Y_Z V + Y_W V]^2, using only values of V.
double critic_loss_yorl(const Critic& critic, const CriticBatch& batch, double gamma,
                        Vec* grad = nullptr);

/// Convenience overload that evaluates the brackets itself.
double critic_loss_yorl(const Critic& critic, const std::vector<const TransitionSample*>& batch,
                        const ChildMotherSystem& system, double gamma, double dt);

struct AdvantageRecord {
    double advantage = 0.0;
    double q = 0.0;
    double v = 0.0;
};

/// One-step TD advantages r dt + gamma^dt V(s') (1 - terminal) - V(s), unnormalized.
std::vector<AdvantageRecord> advantage(const Critic& critic,
                                       const std::vector<const TransitionSample*>& batch,
                                       double gamma, double dt);

/// The advantages shifted and scaled to zero mean and unit variance.
std::vector<double> normalized_advantages(const std::vector<AdvantageRecord>& records);

/// mean of -min(R A, clip(R, 1-eps, 1+eps) A), R = exp(log pi - log pi_old).
double actor_loss_ppo(const GaussianPolicy& policy, const std::vector<double>& old_log_probs,
                      const std::vector<const TransitionSample*>& batch,
                      const std::vector<double>& advantages, double eps, Vec* grad = nullptr);

struct EpochMetrics {
    int epoch = 0;
    double mean_reward = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    Critic critic;
    GaussianPolicy policy;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

TrainResult train(const ChildMotherSystem& system, const RLConfig& config,
                  const EpochCallback& on_epoch = {});

/// Episode return sum_k r_k dt.
double episodic_reward(const Trajectory& episode, double dt);

void write_metrics_header(std::ostream& out);
void write_metrics_rows(std::ostream& out, const std::vector<EpochMetrics>& rows,
                        std::uint64_t seed, CriticMode mode);

} // namespace sdectl
