#include "sdectl/sde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sdectl {

DiffusionModel::DiffusionModel(int state_dim, int input_dim)
    : state_dim_(state_dim), input_dim_(input_dim) {
    require(state_dim > 0, "DiffusionModel: state_dim must be positive");
    require(input_dim >= 0, "DiffusionModel: input_dim must be non-negative");
}

void DiffusionModel::check_args(const Vec& x, const Vec& u) const {
    require_dim(x, state_dim_, name() + " state");
    require_dim(u, input_dim_, name() + " input");
}

Mat DiffusionModel::diffusion_square(const Vec& x, const Vec& u) const {
    Mat h = diffusion(x, u);
    return h * h.transpose();
}

Mat DiffusionModel::drift_jac(const Vec& x, const Vec& u) const { return fd_drift_jac(*this, x, u); }
Mat DiffusionModel::diff_sq_jac1(const Vec& x, const Vec& u) const {
    return fd_diff_sq_jac1(*this, x, u);
}
Mat DiffusionModel::diff_sq_jac2(const Vec& x, const Vec& u) const {
    return fd_diff_sq_jac2(*this, x, u);
}

namespace {

double first_step(double xi) { return 1e-5 * (1.0 + std::abs(xi)); }
double second_step(double xi) { return 1e-4 * (1.0 + std::abs(xi)); }

} // namespace

Mat fd_drift_jac(const DiffusionModel& m, const Vec& x, const Vec& u) {
    const auto n = x.size();
    Mat jac(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = first_step(x[j]);
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        jac.col(j) = (m.drift(xp, u) - m.drift(xm, u)) / (2.0 * h);
    }
    return jac;
}

Mat fd_diff_sq_jac1(const DiffusionModel& m, const Vec& x, const Vec& u) {
    const auto n = x.size();
    Mat c1(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = first_step(x[i]);
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        Mat d = (m.diffusion_square(xp, u) - m.diffusion_square(xm, u)) / (2.0 * h);
        c1.row(i) = d.row(i);
    }
    return c1;
}

Mat fd_diff_sq_jac2(const DiffusionModel& m, const Vec& x, const Vec& u) {
    const auto n = x.size();
    Mat c2(n, n);
    const Mat a0 = m.diffusion_square(x, u);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double hi = second_step(x[i]);
        Vec xp = x, xm = x;
        xp[i] += hi;
        xm[i] -= hi;
        c2(i, i) = (m.diffusion_square(xp, u)(i, i) - 2.0 * a0(i, i) +
                    m.diffusion_square(xm, u)(i, i)) / (hi * hi);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double hj = second_step(x[j]);
            auto shifted = [&](double si, double sj) {
                Vec y = x;
                y[i] += si * hi;
                y[j] += sj * hj;
                return m.diffusion_square(y, u)(i, j);
            };
            c2(i, j) = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) /
                       (4.0 * hi * hj);
        }
    }
    return c2;
}

FunctionModel::FunctionModel(int state_dim, int input_dim, Parts parts)
    : DiffusionModel(state_dim, input_dim), parts_(std::move(parts)) {
    require(static_cast<bool>(parts_.drift) && static_cast<bool>(parts_.diffusion),
            "FunctionModel: drift and diffusion are required");
}

Vec FunctionModel::drift(const Vec& x, const Vec& u) const {
    check_args(x, u);
    return parts_.drift(x, u);
}

Mat FunctionModel::diffusion(const Vec& x, const Vec& u) const {
    check_args(x, u);
    Mat h = parts_.diffusion(x, u);
    if (h.rows() != state_dim() || h.cols() != state_dim())
        throw ContractError(name() + ": diffusion must be n x n");
    return h;
}

Mat FunctionModel::drift_jac(const Vec& x, const Vec& u) const {
    return parts_.drift_jac ? parts_.drift_jac(x, u) : fd_drift_jac(*this, x, u);
}
Mat FunctionModel::diff_sq_jac1(const Vec& x, const Vec& u) const {
    return parts_.diff_sq_jac1 ? parts_.diff_sq_jac1(x, u) : fd_diff_sq_jac1(*this, x, u);
}
Mat FunctionModel::diff_sq_jac2(const Vec& x, const Vec& u) const {
    return parts_.diff_sq_jac2 ? parts_.diff_sq_jac2(x, u) : fd_diff_sq_jac2(*this, x, u);
}
bool FunctionModel::analytic_derivatives() const {
    return parts_.drift_jac && parts_.diff_sq_jac1 && parts_.diff_sq_jac2;
}

GaussianTransition::GaussianTransition(Vec mean, Mat cov, double dt)
    : mean_(std::move(mean)), dt_(dt) {
    const auto n = mean_.size();
    if (cov.rows() != n || cov.cols() != n)
        throw ContractError("GaussianTransition: covariance shape does not match mean");
    if (!all_finite(mean_) || !all_finite(cov))
        throw NumericError("GaussianTransition: non-finite mean or covariance");
    cov_ = 0.5 * (cov + cov.transpose());
    const double jitter = kCovJitterScale * cov_.trace() / static_cast<double>(n);
    if (jitter > 0.0) cov_.diagonal().array() += jitter;
    llt_.compute(cov_);
    if (llt_.info() != Eigen::Success)
        throw SingularCovarianceError("GaussianTransition: covariance is not positive definite");
    const Mat l = llt_.matrixL();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(l(i, i) > 0.0))
            throw SingularCovarianceError("GaussianTransition: degenerate Cholesky factor");
        log_det_ += 2.0 * std::log(l(i, i));
    }
}

Mat GaussianTransition::precision() const {
    return llt_.solve(Mat::Identity(mean_.size(), mean_.size()));
}

Vec euler_step(const DiffusionModel& model, const Vec& state, const Vec& input, double dt,
               const Vec& noise) {
    require(dt > 0.0, "euler_step: dt must be positive");
    require_dim(state, model.state_dim(), "euler_step state");
    require_dim(input, model.input_dim(), "euler_step input");
    require_dim(noise, model.state_dim(), "euler_step noise");
    return state + model.drift(state, input) * dt +
           model.diffusion(state, input) * (std::sqrt(dt) * noise);
}

GaussianTransition transition_law(const DiffusionModel& model, const Vec& prev_state,
                                  const Vec& prev_input, double dt) {
    require(dt > 0.0, "transition_law: dt must be positive");
    const Vec h = model.drift(prev_state, prev_input);
    const Mat a = model.diffusion_square(prev_state, prev_input);
    if (!all_finite(h) || !all_finite(a))
        throw NumericError("transition_law: non-finite drift or diffusion from " + model.name());
    return GaussianTransition(prev_state + h * dt, a * dt, dt);
}

double log_density(const GaussianTransition& law, const Vec& x) {
    require_dim(x, law.dim(), "log_density point");
    const Vec r = x - law.mean();
    const Vec q = law.cholesky().matrixL().solve(r);
    const double n = static_cast<double>(law.dim());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + law.log_det() + q.squaredNorm());
}

double derivative_mismatch(const DiffusionModel& model, const Vec& input, double lo, double hi,
                           int probes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    double worst = 0.0;
    auto rel = [](const Mat& a, const Mat& b) {
        const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
        return (a - b).cwiseAbs().maxCoeff() / scale;
    };
    for (int p = 0; p < probes; ++p) {
        Vec x(model.state_dim());
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = ud(rng);
        worst = std::max(worst, rel(model.drift_jac(x, input), fd_drift_jac(model, x, input)));
        worst = std::max(worst, rel(model.diff_sq_jac1(x, input), fd_diff_sq_jac1(model, x, input)));
        worst = std::max(worst, rel(model.diff_sq_jac2(x, input), fd_diff_sq_jac2(model, x, input)));
    }
    return worst;
}

} // namespace sdectl
