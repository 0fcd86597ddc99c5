#pragma once

#include "lapfusion/parallel.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace lapfusion {

/// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)],
/// each block spanning every input coordinate.
struct PositionalEncoding {
    int frequencies = 10;
    bool include_input = true;

    int output_dim(int input_dim) const { return input_dim * (2 * frequencies + (include_input ? 1 : 0)); }
    void encode(const Eigen::Ref<const Eigen::VectorXd>& p, Eigen::Ref<Eigen::VectorXd> out) const;
    Eigen::VectorXd operator()(const Eigen::Ref<const Eigen::VectorXd>& p) const;
};

Eigen::VectorXd encode(const Eigen::Ref<const Eigen::VectorXd>& p, int frequencies = 10, bool include_input = true);

struct MlpGradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    /// dL/dX when requested.
    Eigen::MatrixXd input;

    void add(const MlpGradients& other);
    double squared_norm() const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Fully connected network, ReLU on hidden layers, linear output. Samples are
/// columns: forward maps an (in x N) matrix to (out x N). widths = {in, h1, ...,
/// out}, so a net with widths.size() - 1 linear layers.
class Mlp {
public:
    struct Cache {
        /// activations[l] is the input of layer l; the last entry is the output.
        std::vector<Eigen::MatrixXd> activations;
    };

    Mlp() = default;
    /// He-uniform weights U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) from `seed`, zero biases.
    Mlp(std::vector<int> widths, std::uint64_t seed);

    const std::vector<int>& widths() const { return widths_; }
    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    std::size_t parameter_count() const;

    Eigen::MatrixXd& weight(int l) { return weights_[static_cast<std::size_t>(l)]; }
    const Eigen::MatrixXd& weight(int l) const { return weights_[static_cast<std::size_t>(l)]; }
    Eigen::VectorXd& bias(int l) { return biases_[static_cast<std::size_t>(l)]; }
    const Eigen::VectorXd& bias(int l) const { return biases_[static_cast<std::size_t>(l)]; }

    /// Evaluates fixed-size column blocks; Serial and Parallel give identical bits.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Exec exec = Exec::Serial) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;
    /// Exact reverse-mode gradients of sum(dy .* y) for the cached forward pass.
    MlpGradients backward(const Cache& cache, const Eigen::MatrixXd& dy, bool input_gradient = false) const;
    /// Forward + backward over fixed-size column blocks, reduced in block order,
    /// so the result does not depend on `exec`. `loss_grad` receives the output
    /// block and its first column index and returns dL/dy for that block.
    template <typename LossGrad>
    MlpGradients gradients(const Eigen::MatrixXd& x, LossGrad&& loss_grad, Exec exec) const;

    void zero_output_layer();
    bool all_finite() const;

    /// Adam moments and step count; empty until the first adam_step.
    struct AdamState {
        std::int64_t step = 0;
        std::vector<Eigen::MatrixXd> m_w, v_w;
        std::vector<Eigen::VectorXd> m_b, v_b;
        bool empty() const { return m_w.empty(); }
    };
    AdamState& adam() { return adam_; }
    const AdamState& adam() const { return adam_; }

    /// Flat binary checkpoint: "LFMLP001", uint32 layer count, uint32 widths,
    /// per layer W (row-major, out x in) then b as little-endian float64, then a
    /// uint8 Adam flag followed (if 1) by int64 step and m, v in parameter order.
    void save(std::ostream& out, bool with_adam = true) const;
    static Mlp load(std::istream& in);

    friend bool operator==(const Mlp& a, const Mlp& b);

    static constexpr int kBlock = 512;

private:
    std::vector<int> widths_;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
    AdamState adam_;
};

/// Standard Adam with bias correction; increments the step count.
void adam_step(Mlp& mlp, const MlpGradients& grads, const AdamConfig& config);

template <typename LossGrad>
MlpGradients Mlp::gradients(const Eigen::MatrixXd& x, LossGrad&& loss_grad, Exec exec) const
{
    const Eigen::Index n = x.cols();
    const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
    std::vector<MlpGradients> parts(static_cast<std::size_t>(blocks));
    parallel_for_dynamic(blocks, exec, [&](std::ptrdiff_t b) {
        const Eigen::Index begin = b * kBlock;
        const Eigen::Index count = std::min<Eigen::Index>(kBlock, n - begin);
        Cache cache;
        const Eigen::MatrixXd y = forward(x.middleCols(begin, count), cache);
        const Eigen::MatrixXd dy = loss_grad(y, begin);
        parts[static_cast<std::size_t>(b)] = backward(cache, dy);
    });
    MlpGradients total = std::move(parts.front());
    for (std::size_t b = 1; b < parts.size(); ++b) {
        total.add(parts[b]);
    }
    return total;
}

} // namespace lapfusion
