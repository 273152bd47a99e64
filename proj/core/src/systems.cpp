#include "sdectl/systems.hpp"

#include <cmath>

namespace sdectl {

ChildMotherSystem::ChildMotherSystem(ModelPtr child_model, ModelPtr mother_model)
    : child(std::move(child_model)), mother(std::move(mother_model)) {
    require(static_cast<bool>(child), "ChildMotherSystem: child model is required");
    if (mother)
        require(mother->input_dim() == child->state_dim(),
                "ChildMotherSystem: mother input_dim must equal child state_dim");
}

double reward(const Vec& z, const Vec& w, const Vec& u, const RewardConstants& c) {
    double gap = z[0] - (w.size() > 0 ? w[0] : 0.0);
    double dev = std::abs(gap) - c.c3;
    return c.c1 * std::exp(-c.c2 * dev * dev) + c.c4 * u.squaredNorm();
}

namespace {

// Shared shape of all four benchmark models: a 2-D state whose first drift
// component is x2 and whose diffusion is diag(k1 x2 + b1, k2 x2 + b2).
class TwoStateModel : public DiffusionModel {
public:
    TwoStateModel(int input_dim, double k1, double b1, double k2, double b2)
        : DiffusionModel(2, input_dim), k1_(k1), b1_(b1), k2_(k2), b2_(b2) {}

    Mat diffusion(const Vec& x, const Vec& u) const override {
        check_args(x, u);
        Mat h = Mat::Zero(2, 2);
        h(0, 0) = k1_ * x[1] + b1_;
        h(1, 1) = k2_ * x[1] + b2_;
        return h;
    }

    // (HH^T)_11 depends on x2 only, so its x1-derivatives vanish.
    Mat diff_sq_jac1(const Vec& x, const Vec& u) const override {
        check_args(x, u);
        Mat c1 = Mat::Zero(2, 2);
        c1(1, 1) = 2.0 * k2_ * (k2_ * x[1] + b2_);
        return c1;
    }

    Mat diff_sq_jac2(const Vec& x, const Vec& u) const override {
        check_args(x, u);
        Mat c2 = Mat::Zero(2, 2);
        c2(1, 1) = 2.0 * k2_ * k2_;
        return c2;
    }

    bool analytic_derivatives() const override { return true; }

private:
    double k1_, b1_, k2_, b2_;
};

class LinearChild final : public TwoStateModel {
public:
    LinearChild() : TwoStateModel(1, 0.1, 0.1, 0.1, 0.3) {}
    std::string name() const override { return "linear-child"; }
    Vec drift(const Vec& z, const Vec& u) const override {
        check_args(z, u);
        return Vec{{z[1], u[0]}};
    }
    Mat drift_jac(const Vec& z, const Vec& u) const override {
        check_args(z, u);
        return Mat{{0.0, 1.0}, {0.0, 0.0}};
    }
};

class LinearMother final : public TwoStateModel {
public:
    LinearMother() : TwoStateModel(2, 0.2, 0.3, 0.1, 0.2) {}
    std::string name() const override { return "linear-mother"; }
    Vec drift(const Vec& w, const Vec& z) const override {
        check_args(w, z);
        return Vec{{w[1], z[1] - w[1]}};
    }
    Mat drift_jac(const Vec& w, const Vec& z) const override {
        check_args(w, z);
        return Mat{{0.0, 1.0}, {0.0, -1.0}};
    }
};

class NonlinearChild final : public TwoStateModel {
public:
    NonlinearChild() : TwoStateModel(1, 0.1, 0.1, 0.1, 0.3) {}
    std::string name() const override { return "nonlinear-child"; }
    Vec drift(const Vec& z, const Vec& u) const override {
        check_args(z, u);
        const double damp = 0.1 * z[1];
        return Vec{{z[1], u[0] - damp * damp - 0.5 * std::sin(z[0])}};
    }
    Mat drift_jac(const Vec& z, const Vec& u) const override {
        check_args(z, u);
        return Mat{{0.0, 1.0}, {-0.5 * std::cos(z[0]), -0.02 * z[1]}};
    }
};

class NonlinearMother final : public TwoStateModel {
public:
    NonlinearMother() : TwoStateModel(2, 0.2, 0.3, 0.1, 0.2) {}
    std::string name() const override { return "nonlinear-mother"; }
    Vec drift(const Vec& w, const Vec& z) const override {
        check_args(w, z);
        const double damp = 0.1 * w[1];
        return Vec{{w[1], z[1] - w[1] - damp * damp - 0.5 * std::sin(w[0])}};
    }
    Mat drift_jac(const Vec& w, const Vec& z) const override {
        check_args(w, z);
        return Mat{{0.0, 1.0}, {-0.5 * std::cos(w[0]), -1.0 - 0.02 * w[1]}};
    }
};

} // namespace

ModelPtr make_linear_child() { return std::make_shared<LinearChild>(); }
ModelPtr make_linear_mother() { return std::make_shared<LinearMother>(); }
ModelPtr make_nonlinear_child() { return std::make_shared<NonlinearChild>(); }
ModelPtr make_nonlinear_mother() { return std::make_shared<NonlinearMother>(); }

ChildMotherSystem linear_system() { return {make_linear_child(), make_linear_mother()}; }
ChildMotherSystem nonlinear_system() { return {make_nonlinear_child(), make_nonlinear_mother()}; }

} // namespace sdectl
