#include "sdectl/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace sdectl {

namespace {

double ipow(double x, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

} // namespace

Polynomial::Polynomial(int dim, std::vector<Term> terms) : dim_(dim) {
    for (auto& t : terms) add(t.coef, std::move(t.powers));
}

Polynomial& Polynomial::add(double coef, std::vector<int> powers) {
    require(static_cast<int>(powers.size()) == dim_, "Polynomial: exponent count must equal dim");
    for (int p : powers) require(p >= 0, "Polynomial: exponents must be non-negative");
    terms_.push_back({coef, std::move(powers)});
    return *this;
}

int Polynomial::degree() const {
    int d = 0;
    for (const auto& t : terms_)
        d = std::max(d, std::accumulate(t.powers.begin(), t.powers.end(), 0));
    return d;
}

double Polynomial::eval(const Vec& x) const {
    require_dim(x, dim_, "Polynomial point");
    double acc = 0.0;
    for (const auto& t : terms_) {
        double v = t.coef;
        for (int i = 0; i < dim_; ++i) v *= ipow(x[i], t.powers[static_cast<std::size_t>(i)]);
        acc += v;
    }
    return acc;
}

Vec Polynomial::grad(const Vec& x) const {
    require_dim(x, dim_, "Polynomial point");
    Vec g = Vec::Zero(dim_);
    for (const auto& t : terms_) {
        for (int k = 0; k < dim_; ++k) {
            const int pk = t.powers[static_cast<std::size_t>(k)];
            if (pk == 0) continue;
            double v = t.coef * pk;
            for (int i = 0; i < dim_; ++i)
                v *= ipow(x[i], t.powers[static_cast<std::size_t>(i)] - (i == k ? 1 : 0));
            g[k] += v;
        }
    }
    return g;
}

Mat Polynomial::hess(const Vec& x) const {
    require_dim(x, dim_, "Polynomial point");
    Mat hm = Mat::Zero(dim_, dim_);
    for (const auto& t : terms_) {
        for (int k = 0; k < dim_; ++k) {
            for (int l = 0; l < dim_; ++l) {
                std::vector<int> p = t.powers;
                double v = t.coef;
                v *= p[static_cast<std::size_t>(k)]--;
                if (v == 0.0) continue;
                v *= p[static_cast<std::size_t>(l)]--;
                if (v == 0.0) continue;
                for (int i = 0; i < dim_; ++i) v *= ipow(x[i], p[static_cast<std::size_t>(i)]);
                hm(k, l) += v;
            }
        }
    }
    return hm;
}

ScalarField Polynomial::field() const {
    auto self = std::make_shared<const Polynomial>(*this);
    ScalarField f;
    f.dim = dim_;
    f.eval = [self](const Vec& x) { return self->eval(x); };
    f.grad = [self](const Vec& x) { return self->grad(x); };
    f.hess = [self](const Vec& x) { return self->hess(x); };
    return f;
}

Polynomial Polynomial::random(int dim, int max_degree, int n_terms, std::mt19937_64& rng) {
    std::normal_distribution<double> coef(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, dim - 1);
    std::uniform_int_distribution<int> deg(0, max_degree);
    Polynomial poly(dim);
    for (int k = 0; k < n_terms; ++k) {
        std::vector<int> powers(static_cast<std::size_t>(dim), 0);
        const int d = deg(rng);
        for (int j = 0; j < d; ++j) ++powers[static_cast<std::size_t>(pick(rng))];
        poly.add(coef(rng), std::move(powers));
    }
    return poly;
}

} // namespace sdectl
