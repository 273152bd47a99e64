#include "sdectl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace sdectl {

std::string_view to_string(CriticMode m) { return m == CriticMode::yorl ? "YORL" : "TSRL"; }

CriticMode parse_critic_mode(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    if (s == "YORL") return CriticMode::yorl;
    if (s == "TSRL") return CriticMode::tsrl;
    throw ConfigError("unknown critic mode '" + std::string(name) + "' (expected YORL or TSRL)");
}

// ---------------------------------------------------------------------------

Critic::Critic(DenseNet net, Vec obs_scale) : net_(std::move(net)), scale_(std::move(obs_scale)) {
    require(net_.output_dim() == 1, "critic net must have a scalar output");
    require_dim(scale_, net_.input_dim(), "critic obs_scale");
}

Vec Critic::observe(const Vec& z, const Vec& w) const {
    return (concat(z, w).array() / scale_.array()).matrix();
}

double Critic::value(const Vec& z, const Vec& w) const { return net_.forward(observe(z, w))[0]; }

void Critic::accumulate_param_grad(const Vec& z, const Vec& w, double upstream, Vec& grad) const {
    net_.accumulate_backward(observe(z, w), Vec::Constant(1, upstream), grad);
}

void Critic::hook() const {
    ++calls_;
    if (armed_) throw DerivativeHookError("state derivative of the critic requested while armed");
}

Vec Critic::state_gradient(const Vec& z, const Vec& w) const {
    hook();
    Vec scratch = Vec::Zero(net_.param_count()), g;
    net_.accumulate_backward(observe(z, w), Vec::Ones(1), scratch, &g);
    return (g.array() / scale_.array()).matrix();
}

Mat Critic::state_hessian(const Vec& z, const Vec& w) const {
    hook();
    const Vec x = concat(z, w);
    const auto n = x.size();
    Mat Hs(n, n);
    Vec scratch = Vec::Zero(net_.param_count()), gp, gm;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = 1e-4 * (1.0 + std::abs(x[i]));
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        net_.accumulate_backward((xp.array() / scale_.array()).matrix(), Vec::Ones(1), scratch, &gp);
        net_.accumulate_backward((xm.array() / scale_.array()).matrix(), Vec::Ones(1), scratch, &gm);
        Hs.col(i) = ((gp - gm).array() / scale_.array()).matrix() / (2.0 * h);
    }
    return 0.5 * (Hs + Hs.transpose());
}

ScalarField Critic::field_in_z(const Vec& w) const {
    ScalarField f;
    f.dim = int(scale_.size() - w.size());
    f.eval = [this, w](const Vec& z) { return value(z, w); };
    f.grad = [this, w](const Vec& z) -> Vec { return state_gradient(z, w).head(z.size()); };
    f.hess = [this, w](const Vec& z) -> Mat {
        return state_hessian(z, w).topLeftCorner(z.size(), z.size());
    };
    return f;
}

ScalarField Critic::field_in_w(const Vec& z) const {
    ScalarField f;
    f.dim = int(scale_.size() - z.size());
    f.eval = [this, z](const Vec& w) { return value(z, w); };
    f.grad = [this, z](const Vec& w) -> Vec { return state_gradient(z, w).tail(w.size()); };
    f.hess = [this, z](const Vec& w) -> Mat {
        return state_hessian(z, w).bottomRightCorner(w.size(), w.size());
    };
    return f;
}

// ---------------------------------------------------------------------------

GaussianPolicy::GaussianPolicy(DenseNet mean_net, Vec log_std, Vec obs_scale, double dt)
    : mean_net_(std::move(mean_net)), log_std_(std::move(log_std)), scale_(std::move(obs_scale)),
      dt_(dt) {
    require_dim(log_std_, mean_net_.output_dim(), "policy log_std");
    require_dim(scale_, mean_net_.input_dim(), "policy obs_scale");
    require(dt_ > 0.0, "policy dt must be positive");
}

Vec GaussianPolicy::mean(const Vec& z, const Vec& w) const {
    return mean_net_.forward((concat(z, w).array() / scale_.array()).matrix());
}

Vec GaussianPolicy::stddev() const { return std::sqrt(dt_) * log_std_.array().exp().matrix(); }

double GaussianPolicy::log_prob(const Vec& z, const Vec& w, const Vec& u) const {
    const Vec mu = mean(z, w), sd = stddev();
    require_dim(u, mu.size(), "policy action");
    double lp = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double e = (u[i] - mu[i]) / sd[i];
        lp += -0.5 * e * e - std::log(sd[i]) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
}

PolicyDraw GaussianPolicy::sample(const Vec& z, const Vec& w, std::mt19937_64& rng) const {
    const Vec mu = mean(z, w);
    const Vec u = mu + stddev().cwiseProduct(standard_normal(rng, mu.size()));
    return {u, log_prob(z, w, u)};
}

Policy GaussianPolicy::as_policy() const {
    return [this](const Vec& z, const Vec& w, std::mt19937_64& rng) { return sample(z, w, rng); };
}

void GaussianPolicy::accumulate_log_prob_grad(const Vec& z, const Vec& w, const Vec& u,
                                              double upstream, Vec& grad) const {
    require_dim(grad, param_count(), "policy gradient");
    const Vec s = (concat(z, w).array() / scale_.array()).matrix();
    const Vec mu = mean_net_.forward(s), sd = stddev();
    const Vec var = sd.cwiseAbs2();
    const Vec diff = u - mu;
    Vec g_mean = upstream * diff.cwiseQuotient(var);
    Vec net_grad = Vec::Zero(mean_net_.param_count());
    mean_net_.accumulate_backward(s, g_mean, net_grad);
    grad.head(net_grad.size()) += net_grad;
    grad.tail(log_std_.size()) +=
        upstream * (diff.cwiseAbs2().cwiseQuotient(var).array() - 1.0).matrix();
}

Vec GaussianPolicy::params() const { return concat(mean_net_.params(), log_std_); }

void GaussianPolicy::set_params(const Vec& p) {
    require_dim(p, param_count(), "policy params");
    mean_net_.params() = p.head(mean_net_.param_count());
    log_std_ = p.tail(log_std_.size());
}

namespace {

constexpr char kPolicyMagic[4] = {'S', 'D', 'P', 'L'};
constexpr char kCriticMagic[4] = {'S', 'D', 'C', 'R'};

void expect_magic(std::istream& is, const char* magic, const std::string& path) {
    char m[4];
    if (!is.read(m, 4) || !std::equal(m, m + 4, magic))
        throw ConfigError(path + ": unexpected checkpoint type");
}

} // namespace

void GaussianPolicy::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open " + path + " for writing");
    os.write(kPolicyMagic, 4);
    write_net(os, mean_net_);
    write_f64_block(os, log_std_);
    write_f64_block(os, scale_);
    write_f64_block(os, Vec::Constant(1, dt_));
}

GaussianPolicy GaussianPolicy::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    expect_magic(is, kPolicyMagic, path);
    DenseNet net = read_net(is);
    Vec ls = read_f64_block(is), scale = read_f64_block(is), dt = read_f64_block(is);
    if (dt.size() != 1) throw ConfigError(path + ": malformed policy checkpoint");
    return GaussianPolicy(std::move(net), std::move(ls), std::move(scale), dt[0]);
}

void save_critic(const std::string& path, const Critic& critic) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open " + path + " for writing");
    os.write(kCriticMagic, 4);
    write_net(os, critic.net());
    write_f64_block(os, critic.obs_scale());
}

Critic load_critic(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    expect_magic(is, kCriticMagic, path);
    DenseNet net = read_net(is);
    Vec scale = read_f64_block(is);
    return Critic(std::move(net), std::move(scale));
}

// ---------------------------------------------------------------------------

void RLConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("training: " + m); };
    if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0,1)");
    if (!(clip_eps > 0.0)) fail("clip_eps must be > 0");
    if (epochs < 1 || episodes_per_epoch < 1 || minibatch < 1 || update_passes < 1)
        fail("epochs, episodes_per_epoch, minibatch and update_passes must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) fail("step sizes must be > 0");
    if (hidden < 1) fail("hidden must be >= 1");
    if (!(obs_scale > 0.0)) fail("obs_scale must be > 0");
    if (!std::isfinite(init_log_std)) fail("init_log_std must be finite");
    if (!(episode.dt > 0.0) || !(episode.horizon >= episode.dt))
        fail("dt must be positive and no larger than the horizon");
}

void compute_y_brackets(const ChildMotherSystem& system, double dt, CriticBatch& batch,
                        YVariant variant) {
    const auto N = batch.samples.size();
    batch.y_child.assign(N, 0.0);
    batch.y_mother.assign(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const TransitionSample& s = *batch.samples[i];
        try {
            const OperatorContext cz(*system.child, s.z_prev, s.u_prev, dt, variant);
            batch.y_child[i] = y_bracket(cz, s.z, s.u);
            if (system.has_mother()) {
                const OperatorContext cw(*system.mother, s.w_prev, s.z_prev, dt, variant);
                batch.y_mother[i] = y_bracket(cw, s.w, s.z);
            }
        } catch (const SingularCovarianceError& e) {
            std::ostringstream msg;
            msg << "singular transition covariance at sample " << i << " (t=" << s.t << "): "
                << e.what();
            throw SingularCovarianceError(msg.str());
        }
    }
}


namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

double tsrl_loss(const Critic& critic, const std::vector<const TransitionSample*>& samples,
                 const std::vector<std::size_t>& idx, double gamma_step, double dt, Vec* grad) {
    const double wt = 1.0 / double(idx.size());
    double total = 0.0;
    for (auto i : idx) {
        const TransitionSample& s = *samples[i];
        const double boot = s.terminal ? 0.0 : critic.value(s.z_next, s.w_next);
        const double res = critic.value(s.z, s.w) - (s.reward * dt + gamma_step * boot);
        total += res * res;
        if (grad) critic.accumulate_param_grad(s.z, s.w, 2.0 * wt * res, *grad);
    }
    return total * wt;
}

double yorl_loss(const Critic& critic, const CriticBatch& b, const std::vector<std::size_t>& idx,
                 double gamma, Vec* grad) {
    const double wt = 1.0 / double(idx.size());
    const double lg = std::log(gamma);
    double total = 0.0;
    for (auto i : idx) {
        const TransitionSample& s = *b.samples[i];
        const double factor = lg + b.y_child[i] + b.y_mother[i];
        const double res = s.reward + critic.value(s.z, s.w) * factor;
        total += res * res;
        if (grad) critic.accumulate_param_grad(s.z, s.w, 2.0 * wt * res * factor, *grad);
    }
    return total * wt;
}

const Vec& action_of(const TransitionSample& s) { return s.u_raw.size() ? s.u_raw : s.u; }

double ppo_loss(const GaussianPolicy& policy, const std::vector<double>& old_lp,
                const std::vector<const TransitionSample*>& samples,
                const std::vector<double>& adv, const std::vector<std::size_t>& idx, double eps,
                Vec* grad) {
    const double wt = 1.0 / double(idx.size());
    double total = 0.0;
    for (auto i : idx) {
        const TransitionSample& s = *samples[i];
        const Vec& u = action_of(s);
        const double ratio = std::exp(policy.log_prob(s.z, s.w, u) - old_lp[i]);
        const double a = adv[i];
        const double plain = ratio * a;
        const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a;
        total -= std::min(plain, clipped);
        if (grad && plain <= clipped) policy.accumulate_log_prob_grad(s.z, s.w, u, -wt * a * ratio, *grad);
    }
    return total * wt;
}

} // namespace

double critic_loss_tsrl(const Critic& critic, const std::vector<const TransitionSample*>& batch,
                        double gamma_step, double dt, Vec* grad) {
    require(!batch.empty(), "critic_loss_tsrl needs a non-empty batch");
    return tsrl_loss(critic, batch, all_indices(batch.size()), gamma_step, dt, grad);
}

double critic_loss_yorl(const Critic& critic, const CriticBatch& batch, double gamma, Vec* grad) {
    require(!batch.samples.empty(), "critic_loss_yorl needs a non-empty batch");
    require(batch.y_child.size() == batch.samples.size() &&
                batch.y_mother.size() == batch.samples.size(),
            "critic_loss_yorl: brackets not computed");
    require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    return yorl_loss(critic, batch, all_indices(batch.samples.size()), gamma, grad);
}

double critic_loss_yorl(const Critic& critic, const std::vector<const TransitionSample*>& batch,
                        const ChildMotherSystem& system, double gamma, double dt) {
    CriticBatch b{batch, {}, {}};
    compute_y_brackets(system, dt, b);
    return critic_loss_yorl(critic, b, gamma);
}

std::vector<AdvantageRecord> advantage(const Critic& critic,
                                       const std::vector<const TransitionSample*>& batch,
                                       double gamma, double dt) {
    const double gs = std::pow(gamma, dt);
    std::vector<AdvantageRecord> out;
    out.reserve(batch.size());
    for (const auto* s : batch) {
        AdvantageRecord r;
        r.v = critic.value(s->z, s->w);
        r.q = s->reward * dt + (s->terminal ? 0.0 : gs * critic.value(s->z_next, s->w_next));
        r.advantage = r.q - r.v;
        out.push_back(r);
    }
    return out;
}

std::vector<double> normalized_advantages(const std::vector<AdvantageRecord>& records) {
    std::vector<double> a;
    a.reserve(records.size());
    for (const auto& r : records) a.push_back(r.advantage);
    if (a.empty()) return a;
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    var /= double(a.size());
    const double sd = std::sqrt(var);
    for (double& v : a) v = sd > 1e-12 ? (v - mean) / sd : v - mean;
    return a;
}

double actor_loss_ppo(const GaussianPolicy& policy, const std::vector<double>& old_log_probs,
                      const std::vector<const TransitionSample*>& batch,
                      const std::vector<double>& advantages, double eps, Vec* grad) {
    require(eps > 0.0, "clip epsilon must be > 0");
    require(!batch.empty(), "actor_loss_ppo needs a non-empty batch");
    require(old_log_probs.size() == batch.size() && advantages.size() == batch.size(),
            "actor_loss_ppo: batch, log-prob and advantage sizes differ");
    return ppo_loss(policy, old_log_probs, batch, advantages, all_indices(batch.size()), eps, grad);
}

double episodic_reward(const Trajectory& episode, double dt) {
    double r = 0.0;
    for (const auto& s : episode) r += s.reward * dt;
    return r;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a),
                      std::uint32_t(b)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (std::uint64_t(out[0]) << 32) | out[1];
}

std::string snapshot(int epoch, const char* what, double loss, const Vec& params) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at epoch " << epoch << ": loss=" << loss
        << " |params|=" << params.norm() << " finite_params=" << params.allFinite();
    return msg.str();
}

} // namespace

TrainResult train(const ChildMotherSystem& system, const RLConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    config.episode.validate(system);
    const int obs = system.child_dim() + system.mother_dim();
    const int act = system.control_dim();
    require(act > 0, "training needs at least one control input");
    const double dt = config.dt();
    const double gamma_step = std::pow(config.gamma, dt);
    const Vec scale = Vec::Constant(obs, config.obs_scale);

    std::mt19937_64 rng(derive_seed(config.seed, 0, 0));
    DenseNet vnet({obs, config.hidden, config.hidden, 1}, config.activation);
    vnet.init_glorot(rng);
    DenseNet pnet({obs, config.hidden, act}, config.activation);
    pnet.init_glorot(rng);

    TrainResult result;
    result.critic = Critic(std::move(vnet), scale);
    result.policy = GaussianPolicy(std::move(pnet), Vec::Constant(act, config.init_log_std), scale, dt);
    Critic& critic = result.critic;
    GaussianPolicy& policy = result.policy;
    critic.arm_derivative_hooks(config.arm_derivative_hooks);

    Adam critic_opt(critic.net().param_count(), config.critic_lr);
    Adam actor_opt(policy.param_count(), config.actor_lr);
    Vec cgrad(critic.net().param_count()), agrad(policy.param_count());
    Vec theta_a = policy.params();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<Trajectory> episodes;
        episodes.reserve(std::size_t(config.episodes_per_epoch));
        const Policy pi = policy.as_policy();
        double reward_sum = 0.0;
        for (int j = 0; j < config.episodes_per_epoch; ++j) {
            episodes.push_back(rollout(system, pi, config.episode,
                                       derive_seed(config.seed, std::uint64_t(epoch), std::uint64_t(j) + 1)));
            reward_sum += episodic_reward(episodes.back(), dt);
        }

        CriticBatch buffer;
        for (const auto& ep : episodes)
            for (const auto& s : ep) buffer.samples.push_back(&s);
        if (config.critic_mode == CriticMode::yorl) compute_y_brackets(system, dt, buffer);

        std::vector<double> old_lp;
        old_lp.reserve(buffer.samples.size());
        for (const auto* s : buffer.samples) old_lp.push_back(s->log_prob);
        const std::vector<double> adv =
            normalized_advantages(advantage(critic, buffer.samples, config.gamma, dt));

        EpochMetrics m;
        m.epoch = epoch;
        m.mean_reward = reward_sum / double(config.episodes_per_epoch);
        std::vector<std::size_t> order = all_indices(buffer.samples.size());
        int n_batches = 0;
        for (int pass = 0; pass < config.update_passes; ++pass) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(config.minibatch)) {
                const std::size_t b1 = std::min(order.size(), b0 + std::size_t(config.minibatch));
                const std::vector<std::size_t> idx(order.begin() + b0, order.begin() + b1);

                cgrad.setZero();
                const double closs =
                    config.critic_mode == CriticMode::yorl
                        ? yorl_loss(critic, buffer, idx, config.gamma, &cgrad)
                        : tsrl_loss(critic, buffer.samples, idx, gamma_step, dt, &cgrad);
                if (!std::isfinite(closs) || !cgrad.allFinite())
                    throw NumericError(snapshot(epoch, "critic loss", closs, critic.net().params()));
                critic_opt.step(critic.net().params(), cgrad);

                agrad.setZero();
                const double aloss =
                    ppo_loss(policy, old_lp, buffer.samples, adv, idx, config.clip_eps, &agrad);
                if (!std::isfinite(aloss) || !agrad.allFinite())
                    throw NumericError(snapshot(epoch, "actor loss", aloss, theta_a));
                actor_opt.step(theta_a, agrad);
                policy.set_params(theta_a);

                m.critic_loss += closs;
                m.actor_loss += aloss;
                ++n_batches;
            }
        }
        m.critic_loss /= double(n_batches);
        m.actor_loss /= double(n_batches);
        result.metrics.push_back(m);
        if (on_epoch && !on_epoch(m)) break;
    }
    critic.arm_derivative_hooks(false);
    return result;
}

void write_metrics_header(std::ostream& out) {
    out << "epoch,seed,critic_mode,mean_reward,critic_loss,actor_loss\n";
}

void write_metrics_rows(std::ostream& out, const std::vector<EpochMetrics>& rows,
                        std::uint64_t seed, CriticMode mode) {
    out << std::setprecision(17);
    for (const auto& r : rows)
        out << r.epoch << ',' << seed << ',' << to_string(mode) << ',' << r.mean_reward << ','
            << r.critic_loss << ',' << r.actor_loss << '\n';
}

} // namespace sdectl
