#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdectl/operators.hpp"

namespace sdectl {

enum class VerifyMethod { quadrature, monte_carlo };

struct VerifyOptions {
    int nodes_per_axis = 0;  // 0 selects 200 / 80 / 24 nodes for 1 / 2 / 3 dimensions
    long n_samples = 1'000'000;
    std::uint64_t seed = 1;
    YVariant variant = YVariant::standard;
};

int default_nodes(int dim);

/// Both sides of an operator identity. `std_error` is zero for quadrature.
struct EquivalenceReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double abs_err = 0.0;
    double rel_err = 0.0;
    double std_error = 0.0;
    long n_samples = 0;

    /// |lhs - rhs| within `sigmas` standard errors (Monte Carlo).
    bool within_sigmas(double sigmas) const { return abs_err <= sigmas * std_error; }
};

/// Flat key=value text, one pair per line.
void write_report(std::ostream& out, const EquivalenceReport& r);
EquivalenceReport read_report(std::istream& in);

/// lhs = <A psi, p>, rhs = <Y psi, p> under the law of X_t given the predecessor.
EquivalenceReport verify_equivalence(const ScalarField& psi, const DiffusionModel& model,
                                  const Vec& prev_state, const Vec& prev_input, double dt,
                                  VerifyMethod method, const VerifyOptions& opts = {});

/// lhs = integral of (A psi) p, rhs = integral of psi (A* p) for a Gaussian p.
EquivalenceReport verify_duality(const ScalarField& psi, const DiffusionModel& model,
                                 const Vec& input, const GaussianTransition& p,
                                 const VerifyOptions& opts = {});

/// Gaussian density as a field with closed-form derivatives.
ScalarField gaussian_density_field(const GaussianTransition& law);

/// One component of a coupled system; its model input is the concatenation of
/// the other components' states, in order.
struct CoupledProcess {
    ModelPtr model;
    Vec prev_state;
};

struct DecompositionReport {
    EquivalenceReport report;          // lhs: pathwise E[dPsi/dt], rhs: sum of Y terms
    std::vector<double> per_process;   // <Y_i psi, p_i>
};

DecompositionReport verify_decomposition(const ScalarField& psi, std::span<const CoupledProcess> processes,
                                 double dt, const VerifyOptions& opts = {});

/// (Y[a psi_a + b psi_b](x), a Y psi_a(x) + b Y psi_b(x))
std::pair<double, double> verify_linearity(const ScalarField& psi_a,
                                                 const ScalarField& psi_b, double a, double b,
                                                 const OperatorContext& ctx, const Vec& x,
                                                 const Vec& input);

/// A model / test-function pair whose quadrature sides must agree.
struct ZooCase {
    std::string name;
    ModelPtr model;
    ScalarField psi;
    Vec prev_state;
    Vec prev_input;
    double dt = 0.01;
};

struct ZooResult {
    std::string name;
    EquivalenceReport report;
    bool passed = false;
};

/// 1-D and 2-D models (constant, linear, affine diffusion, non-diagonal,
/// both benchmark systems) paired with polynomials of degree <= 4.
std::vector<ZooCase> operator_zoo();

std::vector<ZooResult> run_zoo(const std::vector<ZooCase>& cases, double rel_tol,
                               YVariant variant = YVariant::standard);

} // namespace sdectl
