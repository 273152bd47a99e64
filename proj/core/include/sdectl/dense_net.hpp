#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sdectl/linalg.hpp"

namespace sdectl {

enum class Activation : std::uint32_t { sigmoid = 0, tanh = 1, relu = 2 };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Fully-connected net with `activation` on hidden layers and a linear output.
/// Parameters live in one flat vector: for each layer, the weight matrix
/// (row-major, out x in) followed by the bias.
class DenseNet {
public:
    DenseNet() = default;
    DenseNet(std::vector<int> layer_sizes, Activation activation);

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    void init_glorot(std::mt19937_64& rng);

    const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
    Activation activation() const noexcept { return act_; }
    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
    Eigen::Index param_count() const noexcept { return params_.size(); }

    const Vec& params() const noexcept { return params_; }
    Vec& params() noexcept { return params_; }
    void set_params(const Vec& p);

    Vec forward(const Vec& x) const;

    /// Adds d(upstream . forward(x))/dparams into `param_grad` and, when
    /// `input_grad` is non-null, writes d/dx there.
    void accumulate_backward(const Vec& x, const Vec& upstream, Vec& param_grad,
                             Vec* input_grad = nullptr) const;

    struct Gradients {
        Vec params;
        Vec input;
    };
    Gradients backward(const Vec& x, const Vec& upstream) const;

    /// d forward / dx, one row per output.
    Mat jacobian(const Vec& x) const;

    Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
    Eigen::Index bias_offset(int layer) const {
        return offsets_[layer] + Eigen::Index(sizes_[layer + 1]) * sizes_[layer];
    }

private:
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> weight(int layer) const;
    Eigen::Map<const Vec> bias(int layer) const;
    void forward_trace(const Vec& x, std::vector<Vec>& outs) const;

    std::vector<int> sizes_;
    Activation act_ = Activation::tanh;
    std::vector<Eigen::Index> offsets_;
    Vec params_;
};

/// Adaptive-moment optimizer over a flat parameter vector.
class Adam {
public:
    explicit Adam(Eigen::Index n = 0, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(Vec& params, const Vec& grad);
    double lr() const noexcept { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long steps() const noexcept { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    Vec m_, v_;
    long t_ = 0;
};

/// Smooth positive transform log(1 + e^raw), stable for large |raw|.
struct PositiveMap {
    static double value(double raw);
    static double derivative(double raw);
    static double second_derivative(double raw);
    static double inverse(double value);
};

// Checkpoints: "SDNN", u32 version, u32 activation, u32 n_sizes, u32 sizes[],
// u64 n_params, f64 params[], all little-endian.
void write_net(std::ostream& os, const DenseNet& net);
DenseNet read_net(std::istream& is);
void save_net(const std::string& path, const DenseNet& net);
DenseNet load_net(const std::string& path);

void write_f64_block(std::ostream& os, const Vec& v);
Vec read_f64_block(std::istream& is);

} // namespace sdectl
