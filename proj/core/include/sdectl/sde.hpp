#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>

#include "sdectl/linalg.hpp"

namespace sdectl {

/// An Ito diffusion dX = h(X, u) dt + H(X, u) dW with an exogenous input u.
///
/// Derivative hooks follow the matrices used by the Y operator:
///   drift_jac(x,u)(i,j)    = dh_i / dx_j
///   diff_sq_jac1(x,u)(i,j) = d(HH^T)_ij / dx_i
///   diff_sq_jac2(x,u)(i,j) = d^2(HH^T)_ij / dx_i dx_j
/// The base implementations use central finite differences; models with
/// closed-form derivatives override them and report analytic_derivatives().
class DiffusionModel {
public:
    DiffusionModel(int state_dim, int input_dim);
    virtual ~DiffusionModel() = default;

    int state_dim() const noexcept { return state_dim_; }
    int input_dim() const noexcept { return input_dim_; }

    virtual Vec drift(const Vec& x, const Vec& u) const = 0;
    virtual Mat diffusion(const Vec& x, const Vec& u) const = 0;

    Mat diffusion_square(const Vec& x, const Vec& u) const;

    virtual Mat drift_jac(const Vec& x, const Vec& u) const;
    virtual Mat diff_sq_jac1(const Vec& x, const Vec& u) const;
    virtual Mat diff_sq_jac2(const Vec& x, const Vec& u) const;

    virtual bool analytic_derivatives() const { return false; }
    virtual std::string name() const { return "diffusion"; }

protected:
    void check_args(const Vec& x, const Vec& u) const;

private:
    int state_dim_;
    int input_dim_;
};

using ModelPtr = std::shared_ptr<const DiffusionModel>;

/// Finite-difference derivative matrices, usable by overrides as a fallback.
Mat fd_drift_jac(const DiffusionModel& m, const Vec& x, const Vec& u);
Mat fd_diff_sq_jac1(const DiffusionModel& m, const Vec& x, const Vec& u);
Mat fd_diff_sq_jac2(const DiffusionModel& m, const Vec& x, const Vec& u);

/// A DiffusionModel assembled from callables. Derivative callables are optional;
/// when all three are present the model reports analytic derivatives.
class FunctionModel final : public DiffusionModel {
public:
    using VecFn = std::function<Vec(const Vec&, const Vec&)>;
    using MatFn = std::function<Mat(const Vec&, const Vec&)>;

    struct Parts {
        std::string name = "function-model";
        VecFn drift;
        MatFn diffusion;
        MatFn drift_jac;
        MatFn diff_sq_jac1;
        MatFn diff_sq_jac2;
    };

    FunctionModel(int state_dim, int input_dim, Parts parts);

    Vec drift(const Vec& x, const Vec& u) const override;
    Mat diffusion(const Vec& x, const Vec& u) const override;
    Mat drift_jac(const Vec& x, const Vec& u) const override;
    Mat diff_sq_jac1(const Vec& x, const Vec& u) const override;
    Mat diff_sq_jac2(const Vec& x, const Vec& u) const override;
    bool analytic_derivatives() const override;
    std::string name() const override { return parts_.name; }

private:
    Parts parts_;
};

/// One-step law N(mean, cov) of an Euler-Maruyama step. The covariance is
/// symmetrized and regularized with 1e-9 * trace / n on the diagonal, then
/// factorized once at construction.
class GaussianTransition {
public:
    GaussianTransition(Vec mean, Mat cov, double dt);

    const Vec& mean() const noexcept { return mean_; }
    const Mat& cov() const noexcept { return cov_; }
    double dt() const noexcept { return dt_; }
    int dim() const noexcept { return static_cast<int>(mean_.size()); }
    const Eigen::LLT<Mat>& cholesky() const noexcept { return llt_; }
    Mat chol_lower() const { return llt_.matrixL(); }
    double log_det() const noexcept { return log_det_; }

    /// cov^{-1} v
    Vec solve(const Vec& v) const { return llt_.solve(v); }
    Mat precision() const;

private:
    Vec mean_;
    Mat cov_;
    double dt_;
    Eigen::LLT<Mat> llt_;
    double log_det_ = 0.0;
};

inline constexpr double kCovJitterScale = 1e-9;

/// state + h dt + H sqrt(dt) noise, where noise is a standard normal draw.
Vec euler_step(const DiffusionModel& model, const Vec& state, const Vec& input, double dt,
               const Vec& noise);

GaussianTransition transition_law(const DiffusionModel& model, const Vec& prev_state,
                                  const Vec& prev_input, double dt);

/// Exact multivariate normal log density.
double log_density(const GaussianTransition& law, const Vec& x);

/// Standard normal vector of dimension n.
template <class Rng>
Vec standard_normal(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

/// Largest relative mismatch between a model's derivative hooks and central
/// finite differences, over `probes` points drawn uniformly from [lo, hi]^n.
double derivative_mismatch(const DiffusionModel& model, const Vec& input, double lo, double hi,
                           int probes, std::uint64_t seed);

} // namespace sdectl
