#include "sdectl/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace sdectl {

void CalibrationConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("calibration: " + m); };
    if (!(kappa1 >= 0.0) || !(kappa2 >= 0.0)) fail("kappa1 and kappa2 must be >= 0");
    if (!(C1 > 0.0) || !(C2 > 0.0)) fail("C1 and C2 must be > 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) fail("dt must be positive");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in (0,1)");
    if (hidden < 1) fail("hidden must be >= 1");
    if (!(lr > 0.0)) fail("lr must be > 0");
}

// ---------------------------------------------------------------------------

LearnedDiffusionModel::LearnedDiffusionModel(int state_dim, int input_dim, int hidden,
                                             Activation activation)
    : DiffusionModel(state_dim, input_dim),
      drift_({state_dim + input_dim, hidden, state_dim}, activation),
      diff_({state_dim + input_dim, hidden, state_dim}, activation),
      shift_(Vec::Zero(state_dim + input_dim)),
      scale_(Vec::Ones(state_dim + input_dim)) {}

LearnedDiffusionModel::LearnedDiffusionModel(DenseNet drift_net, DenseNet diff_net, Vec shift,
                                             Vec scale)
    : DiffusionModel(drift_net.output_dim(), drift_net.input_dim() - drift_net.output_dim()),
      drift_(std::move(drift_net)), diff_(std::move(diff_net)) {
    require(diff_.input_dim() == drift_.input_dim() && diff_.output_dim() == drift_.output_dim(),
            "drift and diffusion nets must have matching shapes");
    set_standardization(std::move(shift), std::move(scale));
}

void LearnedDiffusionModel::set_standardization(Vec shift, Vec scale) {
    const int k = state_dim() + input_dim();
    require_dim(shift, k, "standardization shift");
    require_dim(scale, k, "standardization scale");
    require((scale.array() > 0.0).all(), "standardization scale must be positive");
    shift_ = std::move(shift);
    scale_ = std::move(scale);
}

Vec LearnedDiffusionModel::joint(const Vec& x, const Vec& u) const {
    return ((concat(x, u) - shift_).array() / scale_.array()).matrix();
}

Vec LearnedDiffusionModel::drift(const Vec& x, const Vec& u) const {
    check_args(x, u);
    return drift_.forward(joint(x, u));
}

Vec LearnedDiffusionModel::diffusion_diag(const Vec& x, const Vec& u) const {
    check_args(x, u);
    Vec r = diff_.forward(joint(x, u));
    for (auto& v : r) v = PositiveMap::value(v) + kDiffusionFloor;
    return r;
}

Mat LearnedDiffusionModel::diffusion(const Vec& x, const Vec& u) const {
    return diffusion_diag(x, u).asDiagonal();
}

Mat LearnedDiffusionModel::drift_input_jac(const Vec& x, const Vec& u) const {
    check_args(x, u);
    return drift_.jacobian(joint(x, u)) * scale_.cwiseInverse().asDiagonal();
}

Mat LearnedDiffusionModel::diff_input_jac(const Vec& x, const Vec& u) const {
    check_args(x, u);
    const Vec s = joint(x, u);
    Vec slope = diff_.forward(s);
    for (auto& v : slope) v = PositiveMap::derivative(v);
    return slope.asDiagonal() * diff_.jacobian(s) * scale_.cwiseInverse().asDiagonal();
}

Mat LearnedDiffusionModel::drift_jac(const Vec& x, const Vec& u) const {
    return drift_input_jac(x, u).leftCols(state_dim());
}

Mat LearnedDiffusionModel::diff_sq_jac1(const Vec& x, const Vec& u) const {
    const Vec H = diffusion_diag(x, u);
    const Mat D = diff_input_jac(x, u);
    Mat C = Mat::Zero(state_dim(), state_dim());
    for (int i = 0; i < state_dim(); ++i) C(i, i) = 2.0 * H[i] * D(i, i);
    return C;
}

Mat LearnedDiffusionModel::diff_sq_jac2(const Vec& x, const Vec& u) const {
    Mat C = Mat::Zero(state_dim(), state_dim());
    for (int i = 0; i < state_dim(); ++i) {
        const double h = 1e-4 * (1.0 + std::abs(x[i]));
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        C(i, i) = (diff_sq_jac1(xp, u)(i, i) - diff_sq_jac1(xm, u)(i, i)) / (2.0 * h);
    }
    return C;
}

namespace {

constexpr char kModelMagic[4] = {'S', 'D', 'L', 'M'};

} // namespace

void LearnedDiffusionModel::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open " + path + " for writing");
    os.write(kModelMagic, 4);
    write_net(os, drift_);
    write_net(os, diff_);
    write_f64_block(os, shift_);
    write_f64_block(os, scale_);
    if (!os) throw NumericError("failed writing " + path);
}

LearnedPtr LearnedDiffusionModel::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kModelMagic))
        throw ConfigError(path + ": not a learned-model checkpoint");
    DenseNet drift = read_net(is);
    DenseNet diff = read_net(is);
    Vec shift = read_f64_block(is);
    Vec scale = read_f64_block(is);
    return std::make_shared<LearnedDiffusionModel>(std::move(drift), std::move(diff),
                                                   std::move(shift), std::move(scale));
}

// ---------------------------------------------------------------------------

double nll_loss(const DiffusionModel& model, const std::vector<CalibrationSample>& batch,
                double dt) {
    require(!batch.empty(), "nll_loss needs a non-empty batch");
    double total = 0.0;
    for (const auto& s : batch)
        total -= log_density(transition_law(model, s.prev_state, s.prev_input, dt), s.next_state);
    return total / double(batch.size());
}

double nll_value_and_grad(const LearnedDiffusionModel& model,
                          const std::vector<CalibrationSample>& batch,
                          const std::vector<std::size_t>& idx, double dt, Vec& grad) {
    require(!idx.empty(), "nll_value_and_grad needs a non-empty batch");
    const DenseNet& fnet = model.drift_net();
    const DenseNet& gnet = model.diff_net();
    const auto P1 = fnet.param_count(), P2 = gnet.param_count();
    require_dim(grad, P1 + P2, "nll gradient");
    Vec gf = Vec::Zero(P1), gg = Vec::Zero(P2);
    const int n = model.state_dim();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const double w = 1.0 / double(idx.size());
    double total = 0.0;
    Vec up_f(n), up_g(n);
    for (std::size_t k : idx) {
        const auto& s = batch[k];
        const Vec in = model.joint(s.prev_state, s.prev_input);
        const Vec f = fnet.forward(in);
        const Vec r = gnet.forward(in);
        for (int i = 0; i < n; ++i) {
            const double H = PositiveMap::value(r[i]) + LearnedDiffusionModel::kDiffusionFloor;
            const double var = H * H * dt;
            const double res = s.next_state[i] - s.prev_state[i] - f[i] * dt;
            total += 0.5 * (log2pi + std::log(var) + res * res / var);
            up_f[i] = -w * res * dt / var;
            up_g[i] = w * (1.0 / H - res * res / (H * H * H * dt)) * PositiveMap::derivative(r[i]);
        }
        fnet.accumulate_backward(in, up_f, gf);
        gnet.accumulate_backward(in, up_g, gg);
    }
    grad.head(P1) += gf;
    grad.tail(P2) += gg;
    return total * w;
}

namespace {

struct TopSingular {
    double sigma = 0.0;
    Vec u, v;
};

TopSingular top_singular(const Mat& J) {
    TopSingular t;
    if (J.size() == 0) return t;
    Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    t.sigma = svd.singularValues()[0];
    t.u = svd.matrixU().col(0);
    t.v = svd.matrixV().col(0);
    return t;
}

struct Blocks {
    TopSingular fx, fu, gx, gu;
    double sum() const { return fx.sigma + fu.sigma + gx.sigma + gu.sigma; }
};

Blocks jacobian_blocks(const LearnedDiffusionModel& m, const Vec& x, const Vec& u) {
    const int n = m.state_dim(), k = m.input_dim();
    const Mat F = m.drift_input_jac(x, u);
    const Mat G = m.diff_input_jac(x, u);
    return {top_singular(F.leftCols(n)), top_singular(F.rightCols(k)),
            top_singular(G.leftCols(n)), top_singular(G.rightCols(k))};
}

// d sigma / d theta = d/d theta [u' F(p + e v)]'(0), approximated by a central
// difference in e of exact parameter gradients.
void add_sigma_grad(const LearnedDiffusionModel& m, const TopSingular& t, bool diffusion,
                    int col0, const Vec& p, double coef, Vec& gf, Vec& gg) {
    if (t.sigma <= 0.0) return;
    const int n = m.state_dim();
    const double e = 1e-4 * (1.0 + p.lpNorm<Eigen::Infinity>());
    Vec dir = Vec::Zero(p.size());
    dir.segment(col0, t.v.size()) = t.v;
    for (int sgn : {1, -1}) {
        const Vec q = p + double(sgn) * e * dir;
        const Vec s = ((q - m.shift()).array() / m.scale().array()).matrix();
        Vec up = t.u * (double(sgn) * coef / (2.0 * e));
        if (diffusion) {
            const Vec r = m.diff_net().forward(s);
            for (int i = 0; i < n; ++i) up[i] *= PositiveMap::derivative(r[i]);
            m.diff_net().accumulate_backward(s, up, gg);
        } else {
            m.drift_net().accumulate_backward(s, up, gf);
        }
    }
}

} // namespace

double lipschitz_norm_sum(const LearnedDiffusionModel& model, const Vec& x, const Vec& u) {
    return jacobian_blocks(model, x, u).sum();
}

double lipschitz_penalty(const LearnedDiffusionModel& model,
                         const std::vector<CalibrationSample>& batch, double kappa, double C) {
    if (batch.empty() || kappa == 0.0) return 0.0;
    double total = 0.0;
    for (const auto& s : batch)
        total += std::max(0.0, lipschitz_norm_sum(model, s.prev_state, s.prev_input) - C);
    return kappa * total / double(batch.size());
}

double lipschitz_penalty_and_grad(const LearnedDiffusionModel& model,
                                  const std::vector<CalibrationSample>& batch,
                                  const std::vector<std::size_t>& idx, double kappa, double C,
                                  Vec& grad) {
    if (idx.empty() || kappa == 0.0) return 0.0;
    const auto P1 = model.drift_net().param_count(), P2 = model.diff_net().param_count();
    require_dim(grad, P1 + P2, "penalty gradient");
    Vec gf = Vec::Zero(P1), gg = Vec::Zero(P2);
    const double coef = kappa / double(idx.size());
    const int n = model.state_dim();
    double total = 0.0;
    bool any = false;
    for (std::size_t k : idx) {
        const auto& s = batch[k];
        const Blocks b = jacobian_blocks(model, s.prev_state, s.prev_input);
        const double excess = b.sum() - C;
        if (excess <= 0.0) continue;
        any = true;
        total += excess;
        const Vec p = concat(s.prev_state, s.prev_input);
        add_sigma_grad(model, b.fx, false, 0, p, coef, gf, gg);
        add_sigma_grad(model, b.fu, false, n, p, coef, gf, gg);
        add_sigma_grad(model, b.gx, true, 0, p, coef, gf, gg);
        add_sigma_grad(model, b.gu, true, n, p, coef, gf, gg);
    }
    if (any) {
        grad.head(P1) += gf;
        grad.tail(P2) += gg;
    }
    return kappa * total / double(idx.size());
}

// ---------------------------------------------------------------------------

std::vector<CalibrationSample> child_samples(const std::vector<Trajectory>& data) {
    std::vector<CalibrationSample> out;
    for (const auto& ep : data)
        for (std::size_t k = 0; k + 1 < ep.size(); ++k)
            out.push_back({ep[k].z, ep[k].u, ep[k + 1].z});
    return out;
}

std::vector<CalibrationSample> mother_samples(const std::vector<Trajectory>& data) {
    std::vector<CalibrationSample> out;
    for (const auto& ep : data)
        for (std::size_t k = 0; k + 1 < ep.size(); ++k)
            if (ep[k].w.size() > 0) out.push_back({ep[k].w, ep[k].z, ep[k + 1].w});
    return out;
}

std::vector<CalibrationEpoch> CalibrationResult::history() const {
    std::vector<CalibrationEpoch> h = child_history;
    for (std::size_t i = 0; i < h.size() && i < mother_history.size(); ++i) {
        h[i].train_nll += mother_history[i].train_nll;
        h[i].holdout_nll += mother_history[i].holdout_nll;
        h[i].penalty += mother_history[i].penalty;
    }
    return h;
}

namespace {

std::vector<CalibrationSample> gather(const std::vector<CalibrationSample>& all,
                                      const std::vector<std::size_t>& idx) {
    std::vector<CalibrationSample> out;
    out.reserve(idx.size());
    for (auto k : idx) out.push_back(all[k]);
    return out;
}

// Least-squares fit of the increments on [x, u, 1]; returns the residual
// variance per state dimension.
Vec linear_residual_variance(const std::vector<CalibrationSample>& s) {
    const auto N = Eigen::Index(s.size());
    const auto n = s[0].prev_state.size(), m = s[0].prev_input.size();
    Mat X(N, n + m + 1), Y(N, n);
    for (Eigen::Index r = 0; r < N; ++r) {
        X.row(r) << s[r].prev_state.transpose(), s[r].prev_input.transpose(), 1.0;
        Y.row(r) = (s[r].next_state - s[r].prev_state).transpose();
    }
    const Mat beta = X.colPivHouseholderQr().solve(Y);
    const Mat R = Y - X * beta;
    return R.colwise().squaredNorm().transpose() / double(std::max<Eigen::Index>(N - n - m - 1, 1));
}

} // namespace

LearnedPtr fit_model(const std::vector<CalibrationSample>& samples, int state_dim, int input_dim,
                     const CalibrationConfig& config, double kappa, double C, std::uint64_t seed,
                     std::vector<CalibrationEpoch>& history, std::ostream* log) {
    config.validate();
    std::ostream& warn = log ? *log : std::cerr;
    if (samples.size() < 4) throw ContractError("calibration needs at least 4 transitions");
    for (const auto& s : samples) {
        require_dim(s.prev_state, state_dim, "calibration state");
        require_dim(s.prev_input, input_dim, "calibration input");
        require_dim(s.next_state, state_dim, "calibration next state");
    }

    const Vec resvar = linear_residual_variance(samples);
    Vec incvar(state_dim);
    for (int i = 0; i < state_dim; ++i) {
        double mean = 0.0, sq = 0.0;
        for (const auto& s : samples) {
            const double d = s.next_state[i] - s.prev_state[i];
            mean += d;
            sq += d * d;
        }
        mean /= double(samples.size());
        incvar[i] = sq / double(samples.size()) - mean * mean;
    }
    for (int i = 0; i < state_dim; ++i) {
        if (resvar[i] <= 1e-12 * (1.0 + incvar[i])) {
            warn << "warning: state " << i + 1
                 << " increments are an exact linear function of the inputs; "
                    "the covariance would collapse to the jitter floor\n";
            throw DegenerateDataError("degenerate calibration data: no observable noise in state " +
                                      std::to_string(i + 1));
        }
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_hold = std::max<std::size_t>(
        1, std::size_t(std::floor(config.holdout_fraction * double(samples.size()))));
    std::vector<std::size_t> hold_idx(order.begin(), order.begin() + n_hold);
    std::vector<std::size_t> train_idx(order.begin() + n_hold, order.end());
    const auto train = gather(samples, train_idx);
    const auto holdout = gather(samples, hold_idx);

    const int k = state_dim + input_dim;
    Vec mean = Vec::Zero(k), sd = Vec::Zero(k);
    for (const auto& s : train) mean += concat(s.prev_state, s.prev_input);
    mean /= double(train.size());
    for (const auto& s : train) sd += (concat(s.prev_state, s.prev_input) - mean).cwiseAbs2();
    sd = (sd / double(train.size())).cwiseSqrt();
    for (auto& v : sd) v = v > 1e-12 ? v : 1.0;

    auto model = std::make_shared<LearnedDiffusionModel>(state_dim, input_dim, config.hidden,
                                                         config.activation);
    model->set_standardization(mean, sd);
    model->drift_net().init_glorot(rng);
    DenseNet& gnet = model->diff_net();
    gnet.init_glorot(rng);
    const int last = gnet.n_layers() - 1;
    gnet.params().segment(gnet.weight_offset(last), gnet.bias_offset(last) - gnet.weight_offset(last)) *= 0.1;
    for (int i = 0; i < state_dim; ++i)
        gnet.params()[gnet.bias_offset(last) + i] =
            PositiveMap::inverse(std::max(std::sqrt(resvar[i] / config.dt), 1e-3));

    const auto P1 = model->drift_net().param_count(), P2 = gnet.param_count();
    Vec theta(P1 + P2);
    theta << model->drift_net().params(), gnet.params();
    Adam adam(theta.size(), config.lr);
    Vec grad(theta.size());

    std::vector<std::size_t> all_train(train.size());
    std::iota(all_train.begin(), all_train.end(), std::size_t{0});
    history.clear();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(all_train.begin(), all_train.end(), rng);
        for (std::size_t b0 = 0; b0 < all_train.size(); b0 += std::size_t(config.batch_size)) {
            const std::size_t b1 = std::min(all_train.size(), b0 + std::size_t(config.batch_size));
            const std::vector<std::size_t> idx(all_train.begin() + b0, all_train.begin() + b1);
            grad.setZero();
            const double nll = nll_value_and_grad(*model, train, idx, config.dt, grad);
            const double pen = lipschitz_penalty_and_grad(*model, train, idx, kappa, C, grad);
            if (!std::isfinite(nll) || !std::isfinite(pen) || !grad.allFinite()) {
                std::ostringstream msg;
                msg << "non-finite calibration loss at epoch " << epoch << ", batch offset " << b0
                    << ": nll=" << nll << " penalty=" << pen << " |theta|=" << theta.norm()
                    << " |grad|=" << grad.norm();
                throw NumericError(msg.str());
            }
            adam.step(theta, grad);
            model->drift_net().params() = theta.head(P1);
            gnet.params() = theta.tail(P2);
        }
        CalibrationEpoch row;
        row.epoch = epoch;
        row.train_nll = nll_loss(*model, train, config.dt);
        row.holdout_nll = nll_loss(*model, holdout, config.dt);
        row.penalty = lipschitz_penalty(*model, holdout, kappa, C);
        if (!std::isfinite(row.train_nll) || !std::isfinite(row.holdout_nll))
            throw NumericError("non-finite calibration loss after epoch " + std::to_string(epoch));
        history.push_back(row);
        if (log)
            *log << "epoch " << epoch << " train_nll=" << row.train_nll
                 << " holdout_nll=" << row.holdout_nll << " penalty=" << row.penalty << '\n';
    }
    return model;
}

CalibrationResult calibrate(const std::vector<Trajectory>& data, const CalibrationConfig& config,
                            std::uint64_t seed, std::ostream* log) {
    config.validate();
    for (const auto& ep : data)
        for (std::size_t k = 0; k + 1 < ep.size(); ++k) {
            const double step = ep[k + 1].t - ep[k].t;
            if (std::abs(step - config.dt) > 1e-6 * config.dt)
                throw ContractError("dataset step " + std::to_string(step) + " at t=" +
                                    std::to_string(ep[k].t) + " differs from configured dt " +
                                    std::to_string(config.dt));
        }
    const auto cs = child_samples(data);
    if (cs.empty()) throw ContractError("calibration dataset has no transitions");
    CalibrationResult out;
    const int n = int(cs[0].prev_state.size()), m = int(cs[0].prev_input.size());
    if (log) *log << "child model\n";
    out.child = fit_model(cs, n, m, config, config.kappa2, config.C2, seed, out.child_history, log);
    const auto ms = mother_samples(data);
    if (!ms.empty()) {
        if (log) *log << "mother model\n";
        out.mother = fit_model(ms, int(ms[0].prev_state.size()), int(ms[0].prev_input.size()),
                               config, config.kappa1, config.C1, seed ^ 0x9E3779B97F4A7C15ULL,
                               out.mother_history, log);
    }
    return out;
}

void write_history_csv(std::ostream& out, const std::vector<CalibrationEpoch>& history) {
    out << "epoch,train_nll,holdout_nll,penalty\n" << std::setprecision(17);
    for (const auto& r : history)
        out << r.epoch << ',' << r.train_nll << ',' << r.holdout_nll << ',' << r.penalty << '\n';
}

} // namespace sdectl
