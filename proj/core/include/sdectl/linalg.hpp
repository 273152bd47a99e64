#pragma once

#include <Eigen/Dense>

#include <string_view>

#include "sdectl/errors.hpp"

namespace sdectl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void require(bool ok, std::string_view msg) {
    if (!ok) throw ContractError(std::string(msg));
}

inline void require_dim(const Vec& v, Eigen::Index n, std::string_view what) {
    if (v.size() != n)
        throw ContractError(std::string(what) + ": expected dimension " + std::to_string(n) +
                            ", got " + std::to_string(v.size()));
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline Vec concat(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

} // namespace sdectl
