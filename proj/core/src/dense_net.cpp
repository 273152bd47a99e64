#include "sdectl/dense_net.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "sdectl/errors.hpp"

namespace sdectl {

std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    }
    return "?";
}

Activation parse_activation(std::string_view name) {
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace {

double activate(Activation a, double z) {
    switch (a) {
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    }
    return z;
}

// Derivative written in terms of the activation output y.
double activate_grad(Activation a, double y) {
    switch (a) {
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

} // namespace

DenseNet::DenseNet(std::vector<int> layer_sizes, Activation activation)
    : sizes_(std::move(layer_sizes)), act_(activation) {
    require(sizes_.size() >= 2, "DenseNet needs at least an input and an output layer");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        require(sizes_[l] > 0 && sizes_[l + 1] > 0, "layer sizes must be positive");
        offsets_.push_back(total);
        total += Eigen::Index(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    params_ = Vec::Zero(total);
}

void DenseNet::init_glorot(std::mt19937_64& rng) {
    for (int l = 0; l < n_layers(); ++l) {
        const double lim = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
        std::uniform_real_distribution<double> U(-lim, lim);
        const Eigen::Index w0 = weight_offset(l), b0 = bias_offset(l);
        for (Eigen::Index k = w0; k < b0; ++k) params_[k] = U(rng);
        params_.segment(b0, sizes_[l + 1]).setZero();
    }
}

void DenseNet::set_params(const Vec& p) {
    require_dim(p, param_count(), "DenseNet params");
    params_ = p;
}

Eigen::Map<const DenseNet::RowMat> DenseNet::weight(int l) const {
    return {params_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const Vec> DenseNet::bias(int l) const {
    return {params_.data() + bias_offset(l), sizes_[l + 1]};
}

void DenseNet::forward_trace(const Vec& x, std::vector<Vec>& outs) const {
    require_dim(x, input_dim(), "DenseNet input");
    outs.resize(sizes_.size());
    outs[0] = x;
    const int L = n_layers();
    for (int l = 0; l < L; ++l) {
        outs[l + 1].noalias() = weight(l) * outs[l];
        outs[l + 1] += bias(l);
        if (l + 1 < L)
            for (auto& v : outs[l + 1]) v = activate(act_, v);
    }
}

Vec DenseNet::forward(const Vec& x) const {
    thread_local std::vector<Vec> outs;
    forward_trace(x, outs);
    return outs.back();
}

void DenseNet::accumulate_backward(const Vec& x, const Vec& upstream, Vec& param_grad,
                                   Vec* input_grad) const {
    require_dim(upstream, output_dim(), "DenseNet upstream");
    require_dim(param_grad, param_count(), "DenseNet param_grad");
    thread_local std::vector<Vec> outs;
    thread_local Vec delta, next;
    forward_trace(x, outs);
    delta = upstream;
    for (int l = n_layers() - 1; l >= 0; --l) {
        if (l + 1 < n_layers())
            for (Eigen::Index i = 0; i < delta.size(); ++i)
                delta[i] *= activate_grad(act_, outs[l + 1][i]);
        Eigen::Map<RowMat> gW(param_grad.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
        gW.noalias() += delta * outs[l].transpose();
        param_grad.segment(bias_offset(l), sizes_[l + 1]) += delta;
        if (l > 0 || input_grad) {
            next.noalias() = weight(l).transpose() * delta;
            delta.swap(next);
        }
    }
    if (input_grad) *input_grad = delta;
}

DenseNet::Gradients DenseNet::backward(const Vec& x, const Vec& upstream) const {
    Gradients g{Vec::Zero(param_count()), Vec()};
    accumulate_backward(x, upstream, g.params, &g.input);
    return g;
}

Mat DenseNet::jacobian(const Vec& x) const {
    Mat J(output_dim(), input_dim());
    Vec scratch = Vec::Zero(param_count()), g;
    for (int i = 0; i < output_dim(); ++i) {
        accumulate_backward(x, Vec::Unit(output_dim(), i), scratch, &g);
        J.row(i) = g.transpose();
    }
    return J;
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::step(Vec& params, const Vec& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "Adam dimension mismatch");
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double PositiveMap::value(double raw) {
    // softplus underflows below about -745; keep the result strictly positive
    return std::max(std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw))),
                    std::numeric_limits<double>::min());
}

double PositiveMap::derivative(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

double PositiveMap::second_derivative(double raw) {
    const double s = derivative(raw);
    return s * (1.0 - s);
}

double PositiveMap::inverse(double value) {
    require(value > 0.0, "PositiveMap::inverse needs a positive value");
    return value > 30.0 ? value : std::log(std::expm1(value));
}

namespace {

constexpr std::array<char, 4> kMagic{'S', 'D', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class U> void put_le(std::ostream& os, U v) {
    std::array<char, sizeof(U)> b;
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b.data(), b.size());
}

template <class U> U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), b.size()))
        throw ConfigError("truncated checkpoint");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(b[i]) << (8 * i);
    return v;
}

} // namespace

void write_f64_block(std::ostream& os, const Vec& v) {
    put_le<std::uint64_t>(os, std::uint64_t(v.size()));
    for (double d : v) put_le(os, std::bit_cast<std::uint64_t>(d));
}

Vec read_f64_block(std::istream& is) {
    const auto n = get_le<std::uint64_t>(is);
    if (n > (std::uint64_t(1) << 32)) throw ConfigError("implausible parameter count");
    Vec v(static_cast<Eigen::Index>(n));
    for (auto& d : v) d = std::bit_cast<double>(get_le<std::uint64_t>(is));
    return v;
}

void write_net(std::ostream& os, const DenseNet& net) {
    os.write(kMagic.data(), kMagic.size());
    put_le(os, kVersion);
    put_le(os, static_cast<std::uint32_t>(net.activation()));
    put_le(os, std::uint32_t(net.layer_sizes().size()));
    for (int s : net.layer_sizes()) put_le(os, std::uint32_t(s));
    write_f64_block(os, net.params());
    if (!os) throw NumericError("failed writing checkpoint");
}

DenseNet read_net(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw ConfigError("not a net checkpoint (bad magic)");
    if (const auto ver = get_le<std::uint32_t>(is); ver != kVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(ver));
    const auto act = get_le<std::uint32_t>(is);
    if (act > 2) throw ConfigError("unknown activation id " + std::to_string(act));
    const auto n = get_le<std::uint32_t>(is);
    if (n < 2 || n > 1024) throw ConfigError("implausible layer count");
    std::vector<int> sizes(n);
    for (auto& s : sizes) s = int(get_le<std::uint32_t>(is));
    DenseNet net(sizes, static_cast<Activation>(act));
    Vec p = read_f64_block(is);
    if (p.size() != net.param_count()) throw ConfigError("parameter count mismatch");
    net.set_params(p);
    return net;
}

void save_net(const std::string& path, const DenseNet& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("cannot open " + path + " for writing");
    write_net(os, net);
}

DenseNet load_net(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    return read_net(is);
}

} // namespace sdectl
