#pragma once

#include <random>
#include <vector>

#include "sdectl/operators.hpp"

namespace sdectl {

/// Multivariate polynomial with closed-form gradient and Hessian.
class Polynomial {
public:
    struct Term {
        double coef;
        std::vector<int> powers;
    };

    explicit Polynomial(int dim) : dim_(dim) {}
    Polynomial(int dim, std::vector<Term> terms);

    Polynomial& add(double coef, std::vector<int> powers);

    int dim() const noexcept { return dim_; }
    int degree() const;
    const std::vector<Term>& terms() const noexcept { return terms_; }

    double eval(const Vec& x) const;
    Vec grad(const Vec& x) const;
    Mat hess(const Vec& x) const;

    ScalarField field() const;

    /// `n_terms` monomials of total degree <= max_degree with N(0,1) coefficients.
    static Polynomial random(int dim, int max_degree, int n_terms, std::mt19937_64& rng);

private:
    int dim_;
    std::vector<Term> terms_;
};

} // namespace sdectl
