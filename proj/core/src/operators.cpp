#include "sdectl/operators.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sdectl {

namespace {

Vec fd_gradient(const ScalarField& f, const Vec& x) {
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-5 * (1.0 + std::abs(x[i]));
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f.eval(xp) - f.eval(xm)) / (2.0 * h);
    }
    return g;
}

Mat fd_hessian(const ScalarField& f, const Vec& x) {
    const auto n = x.size();
    Mat hm(n, n);
    const double f0 = f.eval(x);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double hi = 1e-4 * (1.0 + std::abs(x[i]));
        for (Eigen::Index j = i; j < n; ++j) {
            const double hj = 1e-4 * (1.0 + std::abs(x[j]));
            auto at = [&](double si, double sj) {
                Vec y = x;
                y[i] += si * hi;
                y[j] += sj * hj;
                return f.eval(y);
            };
            double v;
            if (i == j)
                v = (at(1, 0) - 2.0 * f0 + at(-1, 0)) / (hi * hi);
            else
                v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
            hm(i, j) = hm(j, i) = v;
        }
    }
    return hm;
}

} // namespace

Vec field_gradient(const ScalarField& f, const Vec& x, DerivativeFallback fallback) {
    if (f.grad) return f.grad(x);
    if (fallback == DerivativeFallback::forbid)
        throw CapabilityError("scalar field has no gradient and finite differences are disabled");
    return fd_gradient(f, x);
}

Mat field_hessian(const ScalarField& f, const Vec& x, DerivativeFallback fallback) {
    if (f.hess) return f.hess(x);
    if (fallback == DerivativeFallback::forbid)
        throw CapabilityError("scalar field has no Hessian and finite differences are disabled");
    return fd_hessian(f, x);
}

double field_derivative_mismatch(const ScalarField& f, double lo, double hi, int probes,
                                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    double worst = 0.0;
    for (int p = 0; p < probes; ++p) {
        Vec x(f.dim);
        for (auto& v : x) v = ud(rng);
        if (f.grad) {
            const Vec a = f.grad(x), b = fd_gradient(f, x);
            worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() /
                                        std::max({1.0, a.cwiseAbs().maxCoeff()}));
        }
        if (f.hess) {
            const Mat a = f.hess(x), b = fd_hessian(f, x);
            worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() /
                                        std::max({1.0, a.cwiseAbs().maxCoeff()}));
        }
    }
    return worst;
}

double char_op_apply(const ScalarField& psi, const DiffusionModel& model, const Vec& x,
                     const Vec& input, DerivativeFallback fallback) {
    require_dim(x, model.state_dim(), "char_op_apply point");
    const Vec g = field_gradient(psi, x, fallback);
    const Mat hs = field_hessian(psi, x, fallback);
    const Vec h = model.drift(x, input);
    const Mat a = model.diffusion_square(x, input);
    return g.dot(h) + 0.5 * hs.cwiseProduct(a).sum();
}

double dual_op_apply(const ScalarField& p, const DiffusionModel& model, const Vec& x,
                     const Vec& input, DerivativeFallback fallback) {
    require_dim(x, model.state_dim(), "dual_op_apply point");
    const double pv = p.eval(x);
    const Vec g = field_gradient(p, x, fallback);
    const Mat hs = field_hessian(p, x, fallback);
    const Vec h = model.drift(x, input);
    const Mat a = model.diffusion_square(x, input);
    const Mat c1 = model.diff_sq_jac1(x, input);
    const Mat c2 = model.diff_sq_jac2(x, input);
    const double transport = -g.dot(h) - pv * model.drift_jac(x, input).trace();
    const double spread = hs.cwiseProduct(a).sum() + pv * c2.sum() + 2.0 * (c1 * g).sum();
    return transport + 0.5 * spread;
}

OperatorContext::OperatorContext(const DiffusionModel& model, Vec prev_state, Vec prev_input,
                                 double dt, YVariant variant)
    : model_(&model),
      prev_state_(std::move(prev_state)),
      prev_input_(std::move(prev_input)),
      law_(transition_law(model, prev_state_, prev_input_, dt)),
      ones_(Vec::Ones(model.state_dim())),
      precision_(law_.precision()),
      variant_(variant) {}

double y_bracket(const OperatorContext& ctx, const Vec& x, const Vec& input) {
    const DiffusionModel& m = ctx.model();
    require_dim(x, m.state_dim(), "y_bracket point");
    const Vec s = ctx.law().solve(x - ctx.law().mean());
    const Vec h = m.drift(x, input);
    const Mat a = m.diffusion_square(x, input);
    const Mat c1 = m.diff_sq_jac1(x, input);
    const Mat c2 = m.diff_sq_jac2(x, input);
    const double drift_term = s.dot(h) - m.drift_jac(x, input).diagonal().sum();
    const Mat curvature = (s * s.transpose() - ctx.precision()).cwiseProduct(a) + c2;
    const double diffusion_term = 0.5 * curvature.sum();
    double last = -(c1 * s).sum();
    if (ctx.variant() == YVariant::flipped_last_term) last = -last;
    return drift_term + diffusion_term + last;
}

} // namespace sdectl
