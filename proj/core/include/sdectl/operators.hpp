#pragma once

#include <functional>

#include "sdectl/sde.hpp"

namespace sdectl {

/// A real-valued function on R^n. Gradient and Hessian are optional.
struct ScalarField {
    int dim = 0;
    std::function<double(const Vec&)> eval;
    std::function<Vec(const Vec&)> grad;
    std::function<Mat(const Vec&)> hess;

    double operator()(const Vec& x) const { return eval(x); }
    bool has_derivatives() const { return grad && hess; }
};

enum class DerivativeFallback { finite_difference, forbid };

Vec field_gradient(const ScalarField& f, const Vec& x, DerivativeFallback fallback);
Mat field_hessian(const ScalarField& f, const Vec& x, DerivativeFallback fallback);

/// Largest relative gap between a field's derivative hooks and finite
/// differences of eval over `probes` uniform points in [lo, hi]^n.
double field_derivative_mismatch(const ScalarField& f, double lo, double hi, int probes,
                                 std::uint64_t seed);

/// Characteristic operator: grad(psi) . h + 1/2 sum_ij d2psi/dxi dxj (HH^T)_ij.
double char_op_apply(const ScalarField& psi, const DiffusionModel& model, const Vec& x,
                     const Vec& input,
                     DerivativeFallback fallback = DerivativeFallback::finite_difference);

/// Dual operator applied to a density field p, expanded with the model's
/// derivative hooks:
///   -grad(p).h - p tr(dh/dx) + 1/2 [ sum_ij p_ij a_ij + p 1'C2 1 + 2 * 1'C1 grad(p) ].
double dual_op_apply(const ScalarField& p, const DiffusionModel& model, const Vec& x,
                     const Vec& input,
                     DerivativeFallback fallback = DerivativeFallback::finite_difference);

/// `flipped_last_term` negates the C1 (Sigma^{-1} (x - mu)) term; it exists so
/// that verification suites can prove they detect a wrong operator.
enum class YVariant { standard, flipped_last_term };

/// Everything the Y operator needs about the step that led to time t: the
/// model and the Gaussian law of X_t given the predecessor state and input.
class OperatorContext {
public:
    OperatorContext(const DiffusionModel& model, Vec prev_state, Vec prev_input, double dt,
                    YVariant variant = YVariant::standard);

    const DiffusionModel& model() const noexcept { return *model_; }
    const GaussianTransition& law() const noexcept { return law_; }
    const Vec& prev_state() const noexcept { return prev_state_; }
    const Vec& prev_input() const noexcept { return prev_input_; }
    const Vec& all_ones() const noexcept { return ones_; }
    const Mat& precision() const noexcept { return precision_; }
    double dt() const noexcept { return law_.dt(); }
    YVariant variant() const noexcept { return variant_; }

private:
    const DiffusionModel* model_;
    Vec prev_state_, prev_input_;
    GaussianTransition law_;
    Vec ones_;
    Mat precision_;
    YVariant variant_;
};

/// The factor multiplying Psi(x) in the Y operator:
///   (S^{-1} r)' h - 1' C1_h + 1/2 1' { (-S^{-1} + S^{-1} r r' S^{-T}) o HH' + C2 } 1
///   - 1' C1 S^{-1} r,       r = x - E_mu,  S = Sigma,
/// with C1_h the diagonal of the drift Jacobian and C1, C2 the first and
/// second derivative matrices of HH'. Depends only on the model, never on Psi.
double y_bracket(const OperatorContext& ctx, const Vec& x, const Vec& input);

/// Y Psi(x) from the value Psi(x) alone.
inline double y_op_apply(double psi_value, const OperatorContext& ctx, const Vec& x,
                         const Vec& input) {
    return psi_value * y_bracket(ctx, x, input);
}

} // namespace sdectl
