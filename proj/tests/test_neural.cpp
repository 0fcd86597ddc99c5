#include "reference.hpp"

#include "lapfusion/error.hpp"
#include "lapfusion/neural.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace lapfusion;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = n(rng);
    return m;
}

// Same arithmetic as Mlp::forward, written out per sample.
Eigen::MatrixXd naive_forward(const Mlp& net, const Eigen::MatrixXd& x)
{
    Eigen::MatrixXd out(net.output_dim(), x.cols());
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
        Eigen::VectorXd a = x.col(s);
        for (int l = 0; l < net.layer_count(); ++l) {
            Eigen::VectorXd z = net.bias(l);
            for (Eigen::Index i = 0; i < z.size(); ++i)
                for (Eigen::Index j = 0; j < a.size(); ++j)
                    z(i) += net.weight(l)(i, j) * a(j);
            if (l + 1 < net.layer_count())
                z = z.cwiseMax(0.0);
            a = z;
        }
        out.col(s) = a;
    }
    return out;
}

} // namespace

TEST_SUITE("neural") {

TEST_CASE("positional encoding")
{
    const PositionalEncoding enc;
    CHECK(enc.output_dim(3) == 63);
    SUBCASE("origin")
    {
        const Eigen::VectorXd e = enc(Eigen::Vector3d::Zero());
        REQUIRE(e.size() == 63);
        CHECK(e.head(3).isZero(0));
        for (int k = 0; k < 10; ++k) {
            CHECK(e.segment(3 + 6 * k, 3).isZero(0));
            CHECK(e.segment(6 + 6 * k, 3).isOnes(0));
        }
    }
    SUBCASE("layout against a direct evaluation")
    {
        const Eigen::Vector3d p(0.3, -0.7, 1.1);
        const Eigen::VectorXd e = encode(p, 4);
        REQUIRE(e.size() == 27);
        CHECK(e.head(3) == p);
        for (int k = 0; k < 4; ++k)
            for (int c = 0; c < 3; ++c) {
                const double a = std::ldexp(std::numbers::pi, k) * p(c);
                CHECK(e(3 + 6 * k + c) == doctest::Approx(std::sin(a)).epsilon(1e-14));
                CHECK(e(6 + 6 * k + c) == doctest::Approx(std::cos(a)).epsilon(1e-14));
            }
    }
    SUBCASE("1 and -1 differ only in the raw term")
    {
        const Eigen::VectorXd a = encode(Eigen::Vector3d::Constant(1.0));
        const Eigen::VectorXd b = encode(Eigen::Vector3d::Constant(-1.0));
        CHECK((a.head(3) - b.head(3)).cwiseAbs().minCoeff() == 2.0);
        CHECK((a.tail(60) - b.tail(60)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("without the raw input")
    {
        const PositionalEncoding bare{2, false};
        CHECK(bare.output_dim(3) == 12);
        CHECK(bare(Eigen::Vector3d(0.25, 0, 0))(0) == doctest::Approx(std::sin(std::numbers::pi / 4)));
    }
    SUBCASE("wrong output size")
    {
        Eigen::VectorXd out(5);
        CHECK_THROWS_AS(enc.encode(Eigen::Vector3d::Zero(), out), NumericError);
    }
}

TEST_CASE("forward")
{
    SUBCASE("zero parameters give zero")
    {
        Mlp net({4, 8, 3}, 1);
        for (int l = 0; l < net.layer_count(); ++l) {
            net.weight(l).setZero();
            net.bias(l).setZero();
        }
        CHECK(net.forward(random_matrix(4, 5, 2)).isZero(0));
    }
    SUBCASE("identity linear layer")
    {
        Mlp net({3, 3}, 1);
        net.weight(0).setIdentity();
        const Eigen::MatrixXd x = random_matrix(3, 7, 3);
        CHECK(net.forward(x) == x);
    }
    SUBCASE("matches the duplicate arithmetic")
    {
        const Mlp net({5, 16, 2}, 4);
        const Eigen::MatrixXd x = random_matrix(5, 20, 5);
        CHECK((net.forward(x) - naive_forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
        const Mlp deep({6, 12, 12, 12, 3}, 6);
        const Eigen::MatrixXd x2 = random_matrix(6, 9, 7);
        CHECK((deep.forward(x2) - naive_forward(deep, x2)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("serial, parallel and cached passes agree bitwise")
    {
        const Mlp net({10, 32, 32, 3}, 8);
        const Eigen::MatrixXd x = random_matrix(10, 3 * Mlp::kBlock + 17, 9);
        const Eigen::MatrixXd a = net.forward(x, Exec::Serial);
        CHECK(a == net.forward(x, Exec::Parallel));
        Mlp::Cache cache;
        CHECK(a.leftCols(Mlp::kBlock) == net.forward(x.leftCols(Mlp::kBlock), cache));
    }
    SUBCASE("shape mismatch")
    {
        const Mlp net({4, 8, 3}, 1);
        CHECK_THROWS_AS(net.forward(random_matrix(5, 2, 1)), NumericError);
        CHECK_THROWS_AS(Mlp({4}, 1), ConfigError);
        CHECK_THROWS_AS(Mlp({4, 0, 3}, 1), ConfigError);
    }
    SUBCASE("initialization")
    {
        const Mlp net({50, 40, 3}, 3);
        const double bound = std::sqrt(6.0 / 50);
        CHECK(net.weight(0).cwiseAbs().maxCoeff() <= bound);
        CHECK(net.weight(0).cwiseAbs().maxCoeff() > 0.9 * bound);
        CHECK(net.bias(0).isZero(0));
        CHECK(net == Mlp({50, 40, 3}, 3));
        CHECK_FALSE(net == Mlp({50, 40, 3}, 4));
        CHECK(net.parameter_count() == 50 * 40 + 40 + 40 * 3 + 3);
    }
}

TEST_CASE("backward")
{
    SUBCASE("single linear layer matches the least-squares gradient")
    {
        const Mlp net({4, 2}, 1);
        const Eigen::MatrixXd x = random_matrix(4, 6, 2);
        const Eigen::MatrixXd t = random_matrix(2, 6, 3);
        Mlp::Cache cache;
        const Eigen::MatrixXd r = net.forward(x, cache) - t;
        const MlpGradients g = net.backward(cache, r, true);
        CHECK((g.weights[0] - r * x.transpose()).norm() < 1e-12);
        CHECK((g.biases[0] - r.rowwise().sum()).norm() < 1e-12);
        CHECK((g.input - net.weight(0).transpose() * r).norm() < 1e-12);
    }
    SUBCASE("dead ReLU unit passes no gradient")
    {
        Mlp net({3, 4, 2}, 5);
        net.bias(0)(1) = -100.0;
        const Eigen::MatrixXd x = random_matrix(3, 8, 6);
        Mlp::Cache cache;
        net.forward(x, cache);
        const MlpGradients g = net.backward(cache, Eigen::MatrixXd::Ones(2, 8));
        CHECK(g.weights[0].row(1).isZero(0));
        CHECK(g.biases[0](1) == 0.0);
        CHECK(g.weights[1].col(1).isZero(0));
    }
    SUBCASE("central differences on small nets")
    {
        for (const std::vector<int>& widths : {std::vector<int>{3, 5, 2}, std::vector<int>{7, 16, 16, 16, 3}}) {
            const Mlp net(widths, 11);
            const auto chk = ref::gradient_check(net, random_matrix(widths.front(), 4, 12),
                                                 random_matrix(widths.back(), 4, 13), 200, 14);
            CHECK(chk.max_relative_error < 1e-4);
        }
    }
    SUBCASE("central differences on the pipeline architectures")
    {
        // 63-dimensional encoded query plus a 3-joint pose feature.
        const Mlp base({72, 600, 600, 600, 600, 3}, 21);
        const Mlp detail({72, 800, 800, 3}, 22);
        const Eigen::MatrixXd x = random_matrix(72, 2, 23);
        const Eigen::MatrixXd t = random_matrix(3, 2, 24);
        CHECK(ref::gradient_check(base, x, t, 20, 25).max_relative_error < 1e-4);
        CHECK(ref::gradient_check(detail, x, t, 20, 26).max_relative_error < 1e-4);
    }
    SUBCASE("blocked gradients equal one big backward pass and ignore the exec mode")
    {
        const Mlp net({6, 24, 24, 3}, 31);
        const Eigen::MatrixXd x = random_matrix(6, 2 * Mlp::kBlock + 100, 32);
        const Eigen::MatrixXd t = random_matrix(3, x.cols(), 33);
        auto loss = [&](const Eigen::MatrixXd& y, Eigen::Index begin) -> Eigen::MatrixXd {
            return y - t.middleCols(begin, y.cols());
        };
        const MlpGradients a = net.gradients(x, loss, Exec::Serial);
        const MlpGradients b = net.gradients(x, loss, Exec::Parallel);
        for (int l = 0; l < net.layer_count(); ++l) {
            CHECK(a.weights[static_cast<std::size_t>(l)] == b.weights[static_cast<std::size_t>(l)]);
            CHECK(a.biases[static_cast<std::size_t>(l)] == b.biases[static_cast<std::size_t>(l)]);
        }
        Mlp::Cache cache;
        const MlpGradients whole = net.backward(cache, net.forward(x, cache) - t);
        CHECK((a.weights[0] - whole.weights[0]).norm() < 1e-9 * whole.weights[0].norm());
    }
    SUBCASE("backward without a cache")
    {
        const Mlp net({3, 4, 2}, 5);
        CHECK_THROWS_AS(net.backward(Mlp::Cache{}, Eigen::MatrixXd::Ones(2, 1)), NumericError);
    }
}

TEST_CASE("adam")
{
    // A bias-only net: the bias of a single 1 -> n layer is the parameter vector.
    auto bowl = [](const Eigen::VectorXd& w0) {
        Mlp net({1, static_cast<int>(w0.size())}, 1);
        net.weight(0).setZero();
        net.bias(0) = w0;
        return net;
    };
    auto gradient = [](const Mlp& net) {
        MlpGradients g;
        g.weights = {Eigen::MatrixXd::Zero(net.weight(0).rows(), 1)};
        g.biases = {2.0 * net.bias(0)};
        return g;
    };
    AdamConfig cfg;

    SUBCASE("first step")
    {
        Eigen::VectorXd w0(3);
        w0 << 0.5, -2.0, 1e-3;
        Mlp net = bowl(w0);
        const MlpGradients g = gradient(net);
        adam_step(net, g, cfg);
        const Eigen::ArrayXd gb = g.biases[0].array();
        const Eigen::VectorXd want = w0.array() - cfg.lr * gb / (gb.abs() + cfg.epsilon);
        CHECK((net.bias(0) - want).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(net.adam().step == 1);
    }
    SUBCASE("zero gradient leaves parameters and decays moments")
    {
        Mlp net = bowl(Eigen::Vector2d(1.0, 2.0));
        adam_step(net, gradient(net), cfg);
        const Eigen::VectorXd m = net.adam().m_b[0];
        MlpGradients zero = gradient(net);
        zero.biases[0].setZero();
        net.bias(0).setZero();
        adam_step(net, zero, cfg);
        CHECK(net.adam().m_b[0].isApprox(cfg.beta1 * m, 1e-15));
        CHECK(net.adam().step == 2);
        // With no history a zero gradient does not move anything.
        Mlp fresh = bowl(Eigen::Vector2d(1.0, 2.0));
        adam_step(fresh, zero, cfg);
        CHECK(fresh.bias(0) == Eigen::Vector2d(1.0, 2.0));
    }
    SUBCASE("quadratic bowl")
    {
        Eigen::VectorXd w0(4);
        w0 << 0.3, -0.2, 0.25, 0.1;
        Mlp net = bowl(w0);
        double prev = w0.norm();
        bool monotone = true;
        for (int step = 0; step < 500; ++step) {
            adam_step(net, gradient(net), cfg);
            const double n = net.bias(0).norm();
            if (step >= 10 && n > 0.1 * w0.norm() && n > prev)
                monotone = false;
            prev = n;
        }
        CHECK(monotone);
        CHECK(net.bias(0).norm() < 0.1 * w0.norm());
    }
    SUBCASE("shape mismatch")
    {
        Mlp net = bowl(Eigen::Vector2d(1.0, 2.0));
        MlpGradients g = gradient(net);
        g.biases[0] = Eigen::Vector3d::Zero();
        CHECK_THROWS_AS(adam_step(net, g, cfg), NumericError);
    }
}

TEST_CASE("checkpoint")
{
    Mlp net({5, 9, 3}, 41);
    Mlp::Cache cache;
    const Eigen::MatrixXd x = random_matrix(5, 4, 42);
    adam_step(net, net.backward(cache, net.forward(x, cache)), AdamConfig{});

    std::stringstream full;
    net.save(full);
    const Mlp back = Mlp::load(full);
    CHECK(back == net);
    CHECK(back.adam().step == 1);
    CHECK(back.adam().v_w[0] == net.adam().v_w[0]);

    std::stringstream bare;
    net.save(bare, false);
    const Mlp light = Mlp::load(bare);
    CHECK(light.adam().empty());
    CHECK(light.forward(x) == net.forward(x));

    std::string bytes = full.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(Mlp::load(truncated), IoError);
    bytes[0] = 'X';
    std::istringstream bad(bytes);
    CHECK_THROWS_AS(Mlp::load(bad), IoError);
}

TEST_CASE("zero output layer and finiteness")
{
    Mlp net({4, 6, 3}, 1);
    net.zero_output_layer();
    CHECK(net.forward(random_matrix(4, 3, 2)).isZero(0));
    CHECK(net.all_finite());
    net.weight(0)(0, 0) = std::nan("");
    CHECK_FALSE(net.all_finite());
}

} // TEST_SUITE
