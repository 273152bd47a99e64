#include "sdectl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "sdectl/polynomial.hpp"
#include "sdectl/quadrature.hpp"
#include "sdectl/systems.hpp"

namespace sdectl {

int default_nodes(int dim) {
    switch (dim) {
    case 1: return 200;
    case 2: return 80;
    case 3: return 24;
    default: throw ContractError("quadrature is limited to at most 3 dimensions");
    }
}

namespace {

void finish(EquivalenceReport& r) {
    r.abs_err = std::abs(r.lhs - r.rhs);
    const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    r.rel_err = scale > 0.0 ? r.abs_err / scale : 0.0;
}

// Running mean / variance (Welford).
struct Moments {
    long n = 0;
    double mean = 0.0, m2 = 0.0;
    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    double std_error() const {
        return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    }
};

} // namespace

void write_report(std::ostream& out, const EquivalenceReport& r) {
    std::ostringstream s;
    s.precision(17);
    s << "lhs=" << r.lhs << '\n'
      << "rhs=" << r.rhs << '\n'
      << "abs_err=" << r.abs_err << '\n'
      << "rel_err=" << r.rel_err << '\n'
      << "stderr=" << r.std_error << '\n'
      << "n_samples=" << r.n_samples << '\n';
    out << s.str();
}

EquivalenceReport read_report(std::istream& in) {
    EquivalenceReport r;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "lhs") r.lhs = std::stod(val);
            else if (key == "rhs") r.rhs = std::stod(val);
            else if (key == "abs_err") r.abs_err = std::stod(val);
            else if (key == "rel_err") r.rel_err = std::stod(val);
            else if (key == "stderr") r.std_error = std::stod(val);
            else if (key == "n_samples") r.n_samples = std::stol(val);
            else throw ParseError("unknown report key '" + key + "'", line_no);
        } catch (const std::logic_error&) {
            throw ParseError("malformed value for '" + key + "'", line_no);
        }
    }
    return r;
}

EquivalenceReport verify_equivalence(const ScalarField& psi, const DiffusionModel& model,
                                  const Vec& prev_state, const Vec& prev_input, double dt,
                                  VerifyMethod method, const VerifyOptions& opts) {
    const OperatorContext ctx(model, prev_state, prev_input, dt, opts.variant);
    auto a_side = [&](const Vec& x) { return char_op_apply(psi, model, x, prev_input); };
    auto y_side = [&](const Vec& x) { return y_op_apply(psi.eval(x), ctx, x, prev_input); };

    EquivalenceReport r;
    if (method == VerifyMethod::quadrature) {
        const int nodes = opts.nodes_per_axis > 0 ? opts.nodes_per_axis : default_nodes(model.state_dim());
        r.lhs = gaussian_expectation(ctx.law(), nodes, a_side);
        r.rhs = gaussian_expectation(ctx.law(), nodes, y_side);
        r.n_samples = static_cast<long>(std::pow(nodes, model.state_dim()));
    } else {
        std::mt19937_64 rng(opts.seed);
        const Mat l = ctx.law().chol_lower();
        Moments lhs, rhs, diff;
        for (long k = 0; k < opts.n_samples; ++k) {
            const Vec x = ctx.law().mean() + l * standard_normal(rng, model.state_dim());
            const double a = a_side(x), y = y_side(x);
            lhs.add(a);
            rhs.add(y);
            diff.add(a - y);
        }
        r.lhs = lhs.mean;
        r.rhs = rhs.mean;
        r.std_error = diff.std_error();
        r.n_samples = opts.n_samples;
    }
    finish(r);
    return r;
}

ScalarField gaussian_density_field(const GaussianTransition& law) {
    auto shared = std::make_shared<const GaussianTransition>(law);
    ScalarField f;
    f.dim = law.dim();
    f.eval = [shared](const Vec& x) { return std::exp(log_density(*shared, x)); };
    f.grad = [shared](const Vec& x) {
        return Vec(-std::exp(log_density(*shared, x)) * shared->solve(x - shared->mean()));
    };
    f.hess = [shared](const Vec& x) {
        const Vec s = shared->solve(x - shared->mean());
        return Mat(std::exp(log_density(*shared, x)) * (s * s.transpose() - shared->precision()));
    };
    return f;
}

EquivalenceReport verify_duality(const ScalarField& psi, const DiffusionModel& model,
                                 const Vec& input, const GaussianTransition& p,
                                 const VerifyOptions& opts) {
    const ScalarField density = gaussian_density_field(p);
    const int nodes = opts.nodes_per_axis > 0 ? opts.nodes_per_axis : default_nodes(p.dim());
    EquivalenceReport r;
    r.lhs = gaussian_expectation(p, nodes, [&](const Vec& x) {
        return char_op_apply(psi, model, x, input);
    });
    // integral of psi A*p dx, written as an expectation under p itself
    r.rhs = gaussian_expectation(p, nodes, [&](const Vec& x) {
        return psi.eval(x) * dual_op_apply(density, model, x, input) / density.eval(x);
    });
    r.n_samples = static_cast<long>(std::pow(nodes, p.dim()));
    finish(r);
    return r;
}

DecompositionReport verify_decomposition(const ScalarField& psi, std::span<const CoupledProcess> processes,
                                 double dt, const VerifyOptions& opts) {
    require(!processes.empty(), "verify_decomposition: at least one process is required");
    const std::size_t m = processes.size();
    std::vector<int> offset(m + 1, 0);
    for (std::size_t i = 0; i < m; ++i) {
        require(static_cast<bool>(processes[i].model), "verify_decomposition: null model");
        require_dim(processes[i].prev_state, processes[i].model->state_dim(), "verify_decomposition state");
        offset[i + 1] = offset[i] + processes[i].model->state_dim();
    }
    const int total = offset[m];
    require(psi.dim == total, "verify_decomposition: psi dimension must equal the joint state dimension");

    auto block = [&](const Vec& joint, std::size_t i) -> Vec {
        return joint.segment(offset[i], offset[i + 1] - offset[i]);
    };
    auto others = [&](const Vec& joint, std::size_t i) {
        Vec out(total - (offset[i + 1] - offset[i]));
        int k = 0;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const int n = offset[j + 1] - offset[j];
            out.segment(k, n) = joint.segment(offset[j], n);
            k += n;
        }
        return out;
    };

    Vec prev(total);
    for (std::size_t i = 0; i < m; ++i)
        prev.segment(offset[i], offset[i + 1] - offset[i]) = processes[i].prev_state;

    std::vector<OperatorContext> ctx;
    ctx.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Vec input = others(prev, i);
        require_dim(input, processes[i].model->input_dim(), "verify_decomposition coupling input");
        ctx.emplace_back(*processes[i].model, processes[i].prev_state, input, dt, opts.variant);
    }

    auto y_term = [&](const Vec& joint, double psi_value, std::size_t i) {
        return y_op_apply(psi_value, ctx[i], block(joint, i), others(joint, i));
    };

    DecompositionReport out;
    out.per_process.assign(m, 0.0);
    const bool quad = total <= 3;
    if (quad) {
        std::vector<const GaussianTransition*> laws;
        for (const auto& c : ctx) laws.push_back(&c.law());
        const int nodes = opts.nodes_per_axis > 0 ? opts.nodes_per_axis : default_nodes(total);
        for (std::size_t i = 0; i < m; ++i) {
            out.per_process[i] = product_expectation(
                std::span<const GaussianTransition* const>(laws), nodes,
                [&](const Vec& joint) { return y_term(joint, psi.eval(joint), i); });
        }
    }

    std::vector<std::mt19937_64> state_rng, noise_rng;
    for (std::size_t i = 0; i < m; ++i) {
        std::seed_seq a{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(2 * i)};
        std::seed_seq b{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(2 * i + 1)};
        state_rng.emplace_back(a);
        noise_rng.emplace_back(b);
    }
    std::vector<Mat> chol;
    for (const auto& c : ctx) chol.push_back(c.law().chol_lower());

    Moments pathwise, paired;
    std::vector<Moments> y_mc(m);
    Vec now(total), next(total);
    for (long k = 0; k < opts.n_samples; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
            const int n = offset[i + 1] - offset[i];
            now.segment(offset[i], n) = ctx[i].law().mean() + chol[i] * standard_normal(state_rng[i], n);
        }
        for (std::size_t i = 0; i < m; ++i) {
            const int n = offset[i + 1] - offset[i];
            next.segment(offset[i], n) = euler_step(*processes[i].model, block(now, i),
                                                    others(now, i), dt,
                                                    standard_normal(noise_rng[i], n));
        }
        const double psi_now = psi.eval(now);
        const double d = (psi.eval(next) - psi_now) / dt;
        pathwise.add(d);
        if (!quad) {
            double y_sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double y = y_term(now, psi_now, i);
                y_mc[i].add(y);
                y_sum += y;
            }
            paired.add(d - y_sum);
        }
    }

    EquivalenceReport& r = out.report;
    r.lhs = pathwise.mean;
    if (!quad)
        for (std::size_t i = 0; i < m; ++i) out.per_process[i] = y_mc[i].mean;
    for (double v : out.per_process) r.rhs += v;
    r.std_error = quad ? pathwise.std_error() : paired.std_error();
    r.n_samples = opts.n_samples;
    finish(r);
    return out;
}

std::pair<double, double> verify_linearity(const ScalarField& psi_a,
                                                 const ScalarField& psi_b, double a, double b,
                                                 const OperatorContext& ctx, const Vec& x,
                                                 const Vec& input) {
    const double va = psi_a.eval(x), vb = psi_b.eval(x);
    const double combined = y_op_apply(a * va + b * vb, ctx, x, input);
    const double separate = a * y_op_apply(va, ctx, x, input) + b * y_op_apply(vb, ctx, x, input);
    return {combined, separate};
}

namespace {

using Parts = FunctionModel::Parts;

ModelPtr scalar_model(std::string name, std::function<double(double, double)> h,
                      std::function<double(double, double)> dh, std::function<double(double)> s,
                      std::function<double(double)> ds, std::function<double(double)> d2s,
                      int input_dim) {
    // 1-D: a = s^2, da/dx = 2 s s', d2a/dx2 = 2 s'^2 + 2 s s''
    Parts p;
    p.name = std::move(name);
    auto in = [](const Vec& u) { return u.size() > 0 ? u[0] : 0.0; };
    p.drift = [h, in](const Vec& x, const Vec& u) { return Vec::Constant(1, h(x[0], in(u))); };
    p.diffusion = [s](const Vec& x, const Vec&) { return Mat::Constant(1, 1, s(x[0])); };
    p.drift_jac = [dh, in](const Vec& x, const Vec& u) { return Mat::Constant(1, 1, dh(x[0], in(u))); };
    p.diff_sq_jac1 = [s, ds](const Vec& x, const Vec&) {
        return Mat::Constant(1, 1, 2.0 * s(x[0]) * ds(x[0]));
    };
    p.diff_sq_jac2 = [s, ds, d2s](const Vec& x, const Vec&) {
        const double v = x[0];
        return Mat::Constant(1, 1, 2.0 * ds(v) * ds(v) + 2.0 * s(v) * d2s(v));
    };
    return std::make_shared<FunctionModel>(1, input_dim, std::move(p));
}

ModelPtr coupled_full_model() {
    Parts p;
    p.name = "nondiagonal-2d";
    p.drift = [](const Vec& x, const Vec&) { return Vec{{-x[0] + 0.5 * x[1], -0.3 * x[1]}}; };
    p.diffusion = [](const Vec& x, const Vec&) {
        return Mat{{0.3 + 0.1 * x[1], 0.1}, {0.05 * x[0], 0.4}};
    };
    return std::make_shared<FunctionModel>(2, 0, std::move(p));
}

Vec v1(double a) { return Vec::Constant(1, a); }

} // namespace

std::vector<ZooCase> operator_zoo() {
    auto zero = [](double) { return 0.0; };
    const ModelPtr constant = scalar_model(
        "constant", [](double, double) { return 0.7; }, [](double, double) { return 0.0; },
        [](double) { return 0.4; }, zero, zero, 0);
    const ModelPtr ou = scalar_model(
        "ornstein-uhlenbeck", [](double x, double) { return -x; }, [](double, double) { return -1.0; },
        [](double) { return 0.5; }, zero, zero, 0);
    const ModelPtr affine = scalar_model(
        "affine-diffusion", [](double x, double) { return 0.3 - 0.8 * x; },
        [](double, double) { return -0.8; }, [](double x) { return 0.2 * x + 0.5; },
        [](double) { return 0.2; }, zero, 0);
    const ModelPtr quadratic = scalar_model(
        "quadratic-diffusion-input", [](double x, double u) { return -x + u; },
        [](double, double) { return -1.0; }, [](double x) { return 0.1 + 0.3 * x * x; },
        [](double x) { return 0.6 * x; }, [](double) { return 0.6; }, 1);

    auto poly1 = [](std::vector<std::pair<double, int>> terms) {
        Polynomial p(1);
        for (auto [c, k] : terms) p.add(c, {k});
        return p.field();
    };
    auto poly2 = [](std::vector<std::tuple<double, int, int>> terms) {
        Polynomial p(2);
        for (auto [c, i, j] : terms) p.add(c, {i, j});
        return p.field();
    };

    std::vector<ZooCase> zoo;
    zoo.push_back({"constant/cubic", constant, poly1({{1.0, 3}, {-2.0, 1}}), v1(0.8), Vec(0), 0.01});
    zoo.push_back({"ou/square", ou, poly1({{1.0, 2}}), v1(1.0), Vec(0), 0.01});
    zoo.push_back({"affine/quartic", affine, poly1({{1.0, 4}, {-1.0, 1}}), v1(1.5), Vec(0), 0.01});
    zoo.push_back({"quadratic-input/cubic", quadratic, poly1({{1.0, 3}, {0.5, 2}}), v1(0.7), v1(0.4), 0.01});
    zoo.push_back({"nondiagonal/mixed", coupled_full_model(), poly2({{1.0, 2, 1}, {0.3, 0, 2}}),
                   Vec{{1.0, 2.0}}, Vec(0), 0.01});
    zoo.push_back({"linear-child/z1+z2^2", make_linear_child(), poly2({{1.0, 1, 0}, {1.0, 0, 2}}),
                   Vec{{5.0, 2.0}}, v1(0.5), 0.01});
    zoo.push_back({"linear-child/quartic", make_linear_child(), poly2({{1.0, 1, 1}, {0.1, 0, 4}}),
                   Vec{{5.0, 2.0}}, v1(-0.5), 0.01});
    zoo.push_back({"linear-mother/quadratic", make_linear_mother(), poly2({{1.0, 2, 0}, {1.0, 1, 1}}),
                   Vec{{12.0, 4.0}}, Vec{{5.0, 3.0}}, 0.01});
    zoo.push_back({"nonlinear-child/cubic", make_nonlinear_child(), poly2({{1.0, 2, 1}}),
                   Vec{{1.0, 2.0}}, v1(0.3), 0.01});
    zoo.push_back({"nonlinear-mother/cubic", make_nonlinear_mother(), poly2({{1.0, 0, 3}, {-1.0, 1, 0}}),
                   Vec{{9.0, 4.0}}, Vec{{1.0, 2.0}}, 0.01});
    return zoo;
}

std::vector<ZooResult> run_zoo(const std::vector<ZooCase>& cases, double rel_tol, YVariant variant) {
    std::vector<ZooResult> out;
    VerifyOptions opts;
    opts.variant = variant;
    for (const auto& c : cases) {
        ZooResult r;
        r.name = c.name;
        r.report = verify_equivalence(c.psi, *c.model, c.prev_state, c.prev_input, c.dt,
                                   VerifyMethod::quadrature, opts);
        r.passed = r.report.rel_err < rel_tol;
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace sdectl
