#include "lapfusion/neural.hpp"

#include "lapfusion/error.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>

namespace lapfusion {

void PositionalEncoding::encode(const Eigen::Ref<const Eigen::VectorXd>& p, Eigen::Ref<Eigen::VectorXd> out) const
{
    const Eigen::Index d = p.size();
    if (out.size() != output_dim(static_cast<int>(d))) {
        throw NumericError("positional encoding: output has " + std::to_string(out.size()) + " entries, expected " +
                           std::to_string(output_dim(static_cast<int>(d))));
    }
    Eigen::Index o = 0;
    if (include_input) {
        out.segment(o, d) = p;
        o += d;
    }
    double freq = std::numbers::pi;
    for (int k = 0; k < frequencies; ++k) {
        for (Eigen::Index i = 0; i < d; ++i) {
            out[o + i] = std::sin(freq * p[i]);
            out[o + d + i] = std::cos(freq * p[i]);
        }
        o += 2 * d;
        freq *= 2.0;
    }
}

Eigen::VectorXd PositionalEncoding::operator()(const Eigen::Ref<const Eigen::VectorXd>& p) const
{
    Eigen::VectorXd out(output_dim(static_cast<int>(p.size())));
    encode(p, out);
    return out;
}

Eigen::VectorXd encode(const Eigen::Ref<const Eigen::VectorXd>& p, int frequencies, bool include_input)
{
    return PositionalEncoding{frequencies, include_input}(p);
}

void MlpGradients::add(const MlpGradients& other)
{
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
}

double MlpGradients::squared_norm() const
{
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        s += weights[l].squaredNorm() + biases[l].squaredNorm();
    }
    return s;
}

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed)
    : widths_(std::move(widths))
{
    if (widths_.size() < 2) {
        throw ConfigError("an MLP needs at least an input and an output width");
    }
    for (int w : widths_) {
        if (w <= 0) {
            throw ConfigError("MLP widths must be positive");
        }
    }
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l];
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Eigen::MatrixXd W(widths_[l + 1], fan_in);
        for (Eigen::Index r = 0; r < W.rows(); ++r) {
            for (Eigen::Index c = 0; c < W.cols(); ++c) {
                W(r, c) = dist(rng);
            }
        }
        weights_.push_back(std::move(W));
        biases_.push_back(Eigen::VectorXd::Zero(widths_[l + 1]));
    }
}

std::size_t Mlp::parameter_count() const
{
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    }
    return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Exec exec) const
{
    if (x.rows() != input_dim()) {
        throw NumericError("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                           std::to_string(input_dim()));
    }
    Eigen::MatrixXd y(output_dim(), x.cols());
    const Eigen::Index blocks = (x.cols() + kBlock - 1) / kBlock;
    parallel_for_dynamic(blocks, exec, [&](std::ptrdiff_t b) {
        const Eigen::Index begin = b * kBlock;
        const Eigen::Index count = std::min<Eigen::Index>(kBlock, x.cols() - begin);
        Eigen::MatrixXd a = x.middleCols(begin, count);
        for (int l = 0; l < layer_count(); ++l) {
            Eigen::MatrixXd z = weights_[l] * a;
            z.colwise() += biases_[l];
            if (l + 1 < layer_count()) {
                z = z.cwiseMax(0.0);
            }
            a = std::move(z);
        }
        y.middleCols(begin, count) = a;
    });
    return y;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const
{
    if (x.rows() != input_dim()) {
        throw NumericError("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                           std::to_string(input_dim()));
    }
    cache.activations.clear();
    cache.activations.push_back(x);
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weights_[l] * cache.activations.back();
        z.colwise() += biases_[l];
        if (l + 1 < layer_count()) {
            z = z.cwiseMax(0.0);
        }
        cache.activations.push_back(std::move(z));
    }
    return cache.activations.back();
}

MlpGradients Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dy, bool input_gradient) const
{
    if (cache.activations.size() != weights_.size() + 1) {
        throw NumericError("MLP backward called without a matching forward cache");
    }
    if (dy.rows() != output_dim() || dy.cols() != cache.activations.back().cols()) {
        throw NumericError("MLP backward: output gradient shape mismatch");
    }
    MlpGradients g;
    g.weights.resize(weights_.size());
    g.biases.resize(biases_.size());
    Eigen::MatrixXd delta = dy;
    for (int l = layer_count() - 1; l >= 0; --l) {
        const Eigen::MatrixXd& a = cache.activations[static_cast<std::size_t>(l)];
        g.weights[l].noalias() = delta * a.transpose();
        g.biases[l] = delta.rowwise().sum();
        if (l > 0 || input_gradient) {
            Eigen::MatrixXd prev = weights_[l].transpose() * delta;
            if (l > 0) {
                // ReLU: the gradient passes only where the unit was active.
                prev.array() *= (a.array() > 0.0).cast<double>();
            }
            delta = std::move(prev);
        }
    }
    if (input_gradient) {
        g.input = std::move(delta);
    }
    return g;
}

void Mlp::zero_output_layer()
{
    weights_.back().setZero();
    biases_.back().setZero();
}

bool Mlp::all_finite() const
{
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (!weights_[l].allFinite() || !biases_[l].allFinite()) {
            return false;
        }
    }
    return true;
}

void adam_step(Mlp& mlp, const MlpGradients& grads, const AdamConfig& config)
{
    const int L = mlp.layer_count();
    if (static_cast<int>(grads.weights.size()) != L || static_cast<int>(grads.biases.size()) != L) {
        throw NumericError("adam_step: gradient layer count mismatch");
    }
    Mlp::AdamState& s = mlp.adam();
    if (s.empty()) {
        for (int l = 0; l < L; ++l) {
            s.m_w.push_back(Eigen::MatrixXd::Zero(mlp.weight(l).rows(), mlp.weight(l).cols()));
            s.v_w.push_back(Eigen::MatrixXd::Zero(mlp.weight(l).rows(), mlp.weight(l).cols()));
            s.m_b.push_back(Eigen::VectorXd::Zero(mlp.bias(l).size()));
            s.v_b.push_back(Eigen::VectorXd::Zero(mlp.bias(l).size()));
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(s.step));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        if (param.rows() != g.rows() || param.cols() != g.cols()) {
            throw NumericError("adam_step: gradient shape mismatch");
        }
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        param.array() -= config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
    };
    for (int l = 0; l < L; ++l) {
        update(mlp.weight(l), s.m_w[l], s.v_w[l], grads.weights[l]);
        update(mlp.bias(l), s.m_b[l], s.v_b[l], grads.biases[l]);
    }
}

namespace {

constexpr char kMagic[8] = {'L', 'F', 'M', 'L', 'P', '0', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in)
{
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw IoError("truncated MLP checkpoint");
    }
    return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m)
{
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = m;
    out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(double)));
}

void get_matrix(std::istream& in, Eigen::MatrixXd& m)
{
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r(m.rows(), m.cols());
    if (!in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(double)))) {
        throw IoError("truncated MLP checkpoint");
    }
    m = r;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v)
{
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_vector(std::istream& in, Eigen::VectorXd& v)
{
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
        throw IoError("truncated MLP checkpoint");
    }
}

} // namespace

void Mlp::save(std::ostream& out, bool with_adam) const
{
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer_count()));
    for (int w : widths_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    }
    for (int l = 0; l < layer_count(); ++l) {
        put_matrix(out, weights_[l]);
        put_vector(out, biases_[l]);
    }
    const bool adam = with_adam && !adam_.empty();
    put<std::uint8_t>(out, adam ? 1 : 0);
    if (adam) {
        put<std::int64_t>(out, adam_.step);
        for (int l = 0; l < layer_count(); ++l) {
            put_matrix(out, adam_.m_w[l]);
            put_vector(out, adam_.m_b[l]);
        }
        for (int l = 0; l < layer_count(); ++l) {
            put_matrix(out, adam_.v_w[l]);
            put_vector(out, adam_.v_b[l]);
        }
    }
    if (!out) {
        throw IoError("failed while writing an MLP checkpoint");
    }
}

Mlp Mlp::load(std::istream& in)
{
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not an MLP checkpoint");
    }
    const auto layers = get<std::uint32_t>(in);
    if (layers == 0 || layers > 1024) {
        throw IoError("MLP checkpoint has an implausible layer count");
    }
    Mlp mlp;
    for (std::uint32_t i = 0; i <= layers; ++i) {
        const auto w = get<std::uint32_t>(in);
        if (w == 0 || w > (1u << 24)) {
            throw IoError("MLP checkpoint has an implausible width");
        }
        mlp.widths_.push_back(static_cast<int>(w));
    }
    for (std::uint32_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd W(mlp.widths_[l + 1], mlp.widths_[l]);
        Eigen::VectorXd b(mlp.widths_[l + 1]);
        get_matrix(in, W);
        get_vector(in, b);
        mlp.weights_.push_back(std::move(W));
        mlp.biases_.push_back(std::move(b));
    }
    if (get<std::uint8_t>(in) == 1) {
        AdamState& s = mlp.adam_;
        s.step = get<std::int64_t>(in);
        for (std::uint32_t l = 0; l < layers; ++l) {
            s.m_w.emplace_back(mlp.weights_[l].rows(), mlp.weights_[l].cols());
            s.m_b.emplace_back(mlp.biases_[l].size());
            get_matrix(in, s.m_w.back());
            get_vector(in, s.m_b.back());
        }
        for (std::uint32_t l = 0; l < layers; ++l) {
            s.v_w.emplace_back(mlp.weights_[l].rows(), mlp.weights_[l].cols());
            s.v_b.emplace_back(mlp.biases_[l].size());
            get_matrix(in, s.v_w.back());
            get_vector(in, s.v_b.back());
        }
    }
    return mlp;
}

bool operator==(const Mlp& a, const Mlp& b)
{
    if (a.widths_ != b.widths_) {
        return false;
    }
    for (std::size_t l = 0; l < a.weights_.size(); ++l) {
        if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) {
            return false;
        }
    }
    return true;
}

} // namespace lapfusion
