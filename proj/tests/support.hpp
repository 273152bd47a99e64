#pragma once

#include <cmath>
#include <random>

#include "sdectl/linalg.hpp"

namespace testing_support {

using sdectl::Mat;
using sdectl::Vec;

inline bool rel_close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

inline Vec random_vec(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> U(lo, hi);
    Vec v(n);
    for (auto& x : v) x = U(rng);
    return v;
}

/// Symmetric positive definite with eigenvalues roughly in [lo, lo + spread].
inline Mat random_spd(std::mt19937_64& rng, Eigen::Index n, double lo = 0.1, double spread = 2.0) {
    std::normal_distribution<double> N(0.0, 1.0);
    Mat A(n, n);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = N(rng);
    Mat S = A * A.transpose() * (spread / double(n)) + lo * Mat::Identity(n, n);
    return 0.5 * (S + S.transpose());
}

} // namespace testing_support
