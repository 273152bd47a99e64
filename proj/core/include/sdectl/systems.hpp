#pragma once

#include <optional>

#include "sdectl/sde.hpp"

namespace sdectl {

/// Coupled pair: the child z is driven by the control u, the mother w by z.
/// A mother of dimension 0 (null model) reduces the system to a single
/// controlled diffusion.
struct ChildMotherSystem {
    ModelPtr child;
    ModelPtr mother;  // may be null

    ChildMotherSystem(ModelPtr child_model, ModelPtr mother_model);

    int child_dim() const { return child->state_dim(); }
    int control_dim() const { return child->input_dim(); }
    int mother_dim() const { return mother ? mother->state_dim() : 0; }
    bool has_mother() const { return static_cast<bool>(mother); }
};

struct RewardConstants {
    double c1 = 5.0;
    double c2 = 0.1;
    double c3 = 10.0;
    double c4 = -0.2;
};

/// c1 exp(-c2 (|z1 - w1| - c3)^2) + c4 |u|^2
double reward(const Vec& z, const Vec& w, const Vec& u, const RewardConstants& c);

// Benchmark systems with closed-form derivative hooks.
ModelPtr make_linear_child();
ModelPtr make_linear_mother();
ModelPtr make_nonlinear_child();
ModelPtr make_nonlinear_mother();

ChildMotherSystem linear_system();
ChildMotherSystem nonlinear_system();

} // namespace sdectl
