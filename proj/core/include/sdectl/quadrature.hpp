#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sdectl/sde.hpp"

namespace sdectl {

/// Gauss-Hermite rule for the weight exp(-x^2); exact for polynomials of
/// degree < 2n.
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

GaussHermiteRule gauss_hermite(int n);

/// Tensor-product expectation of f over independent Gaussian blocks. The
/// integrand receives the concatenation of one point per block.
template <class F>
double product_expectation(std::span<const GaussianTransition* const> laws, int nodes_per_axis,
                           F&& f) {
    const GaussHermiteRule rule = gauss_hermite(nodes_per_axis);
    std::vector<Mat> scaled;
    int total = 0;
    for (const auto* law : laws) {
        scaled.push_back(std::sqrt(2.0) * law->chol_lower());
        total += law->dim();
    }
    const double norm = std::pow(std::numbers::pi, -0.5 * total);
    std::vector<int> idx(static_cast<std::size_t>(total), 0);
    Vec xi(total), x(total);
    double acc = 0.0;
    while (true) {
        double w = norm;
        for (int k = 0; k < total; ++k) {
            xi[k] = rule.nodes[static_cast<std::size_t>(idx[k])];
            w *= rule.weights[static_cast<std::size_t>(idx[k])];
        }
        int off = 0;
        for (std::size_t b = 0; b < laws.size(); ++b) {
            const int n = laws[b]->dim();
            x.segment(off, n) = laws[b]->mean() + scaled[b] * xi.segment(off, n);
            off += n;
        }
        acc += w * f(x);
        int k = 0;
        while (k < total && ++idx[k] == nodes_per_axis) idx[k++] = 0;
        if (k == total) break;
    }
    return acc;
}

template <class F>
double gaussian_expectation(const GaussianTransition& law, int nodes_per_axis, F&& f) {
    const GaussianTransition* one[] = {&law};
    return product_expectation(std::span<const GaussianTransition* const>(one), nodes_per_axis,
                               std::forward<F>(f));
}

} // namespace sdectl
