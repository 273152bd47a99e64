#include "sdectl/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sdectl {

namespace {

// Orthonormal Hermite recurrence at z; returns (p_n(z), p_n'(z)).
std::pair<double, double> hermite_orthonormal(int n, double z) {
    double p1 = std::pow(std::numbers::pi, -0.25), p2 = 0.0;
    for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
    }
    return {p1, std::sqrt(2.0 * n) * p2};
}

} // namespace

// Golub-Welsch nodes from the Jacobi matrix, polished by Newton steps on the
// orthonormal recurrence, which also yields the weights 2 / p_n'(x)^2.
GaussHermiteRule gauss_hermite(int n) {
    require(n > 0, "gauss_hermite: node count must be positive");
    Vec diag = Vec::Zero(n);
    Vec sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Mat> eig;
    eig.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericError("gauss_hermite: eigen solver failed");

    GaussHermiteRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double z = eig.eigenvalues()[i];
        double dp = 0.0;
        for (int it = 0; it < 8; ++it) {
            auto [p, d] = hermite_orthonormal(n, z);
            dp = d;
            const double step = p / d;
            z -= step;
            if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(z))) break;
        }
        dp = hermite_orthonormal(n, z).second;
        rule.nodes[static_cast<std::size_t>(i)] = z;
        rule.weights[static_cast<std::size_t>(i)] = 2.0 / (dp * dp);
    }
    // symmetrize to remove the last bit of round-off
    for (int i = 0; i < n / 2; ++i) {
        const auto lo = static_cast<std::size_t>(i), hi = static_cast<std::size_t>(n - 1 - i);
        const double x = 0.5 * (rule.nodes[hi] - rule.nodes[lo]);
        const double w = 0.5 * (rule.weights[hi] + rule.weights[lo]);
        rule.nodes[lo] = -x;
        rule.nodes[hi] = x;
        rule.weights[lo] = rule.weights[hi] = w;
    }
    if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    return rule;
}

} // namespace sdectl
