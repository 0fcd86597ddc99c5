#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace ref {

std::vector<int> brute_knn(const Points& points, const Vec3& q, int k)
{
    std::vector<int> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return (points[a] - q).squaredNorm() < (points[b] - q).squaredNorm();
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

namespace {

double segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b)
{
    const Vec3 ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (a + t * ab - p).squaredNorm();
}

} // namespace

double triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    // Solve the 2x2 normal equations for the plane foot.
    Eigen::Matrix<double, 3, 2> E;
    E.col(0) = b - a;
    E.col(1) = c - a;
    const Eigen::Vector2d st = (E.transpose() * E).ldlt().solve(E.transpose() * (p - a));
    if (st[0] >= 0.0 && st[1] >= 0.0 && st[0] + st[1] <= 1.0)
        return (a + E * st - p).squaredNorm();
    return std::min({segment_distance2(p, a, b), segment_distance2(p, b, c), segment_distance2(p, c, a)});
}

double mesh_distance2(const TriangleMesh& mesh, const Vec3& p)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces())
        best = std::min(best, triangle_distance2(p, mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2])));
    return best;
}

Eigen::MatrixXd dense_cotangent(const TriangleMesh& mesh)
{
    const int n = mesh.vertex_count();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd area = Eigen::VectorXd::Zero(n);
    for (const auto& f : mesh.faces()) {
        const Vec3 p[3] = {mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2])};
        const double A = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]).norm();
        double cot[3];
        bool obtuse = false;
        int obtuse_corner = -1;
        for (int i = 0; i < 3; ++i) {
            const Vec3 u = p[(i + 1) % 3] - p[i];
            const Vec3 v = p[(i + 2) % 3] - p[i];
            cot[i] = u.dot(v) / u.cross(v).norm();
            if (u.dot(v) < 0.0) {
                obtuse = true;
                obtuse_corner = i;
            }
        }
        for (int i = 0; i < 3; ++i) {
            // Edge opposite corner i joins the other two corners.
            const int j = f[(i + 1) % 3];
            const int k = f[(i + 2) % 3];
            W(j, k) += 0.5 * cot[i];
            W(k, j) += 0.5 * cot[i];
        }
        for (int i = 0; i < 3; ++i) {
            double a;
            if (!obtuse) {
                const Vec3 e1 = p[(i + 1) % 3] - p[i];
                const Vec3 e2 = p[(i + 2) % 3] - p[i];
                a = (e1.squaredNorm() * cot[(i + 2) % 3] + e2.squaredNorm() * cot[(i + 1) % 3]) / 8.0;
            } else {
                a = i == obtuse_corner ? A / 2.0 : A / 4.0;
            }
            area[f[i]] += a;
        }
    }
    Eigen::MatrixXd L = -W;
    for (int k = 0; k < n; ++k) {
        L(k, k) = W.row(k).sum();
        L.row(k) /= area[k];
    }
    return L;
}

Eigen::MatrixXd dense_uniform(const TriangleMesh& mesh)
{
    const int n = mesh.vertex_count();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (const auto& f : mesh.faces())
        for (int i = 0; i < 3; ++i) {
            A(f[i], f[(i + 1) % 3]) = 1.0;
            A(f[(i + 1) % 3], f[i]) = 1.0;
        }
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n, n);
    for (int k = 0; k < n; ++k)
        L.row(k) -= A.row(k) / A.row(k).sum();
    return L;
}

TriangleMesh grid(int nx, int ny, double h)
{
    Points v;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            v.emplace_back(h * i, h * j, 0.0);
    std::vector<lapfusion::Face> f;
    for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
            const int a = j * nx + i;
            // The two corners off the main diagonal get the other split so every
            // vertex has at least three neighbors.
            if ((i == nx - 2 && j == 0) || (i == 0 && j == ny - 2)) {
                f.push_back({a, a + 1, a + nx});
                f.push_back({a + 1, a + nx + 1, a + nx});
            } else {
                f.push_back({a, a + 1, a + nx + 1});
                f.push_back({a, a + nx + 1, a + nx});
            }
        }
    return TriangleMesh::build(std::move(v), std::move(f));
}

TriangleMesh hex_patch(int rings)
{
    // Axial lattice coordinates (q, r) with |q|, |r|, |q + r| <= rings.
    std::map<std::pair<int, int>, int> id;
    Points v;
    auto add = [&](int q, int r) {
        id[{q, r}] = static_cast<int>(v.size());
        v.emplace_back(q + 0.5 * r, r * std::sqrt(3.0) / 2.0, 0.0);
    };
    add(0, 0);
    for (int q = -rings; q <= rings; ++q)
        for (int r = -rings; r <= rings; ++r)
            if ((q != 0 || r != 0) && std::abs(q + r) <= rings)
                add(q, r);
    std::vector<lapfusion::Face> f;
    for (const auto& [key, a] : id) {
        const auto [q, r] = key;
        const auto b = id.find({q + 1, r});
        const auto c = id.find({q, r + 1});
        const auto d = id.find({q - 1, r + 1});
        if (b != id.end() && c != id.end())
            f.push_back({a, b->second, c->second});
        if (c != id.end() && d != id.end())
            f.push_back({a, c->second, d->second});
    }
    return TriangleMesh::build(std::move(v), std::move(f));
}

TriangleMesh wavy_patch(int n, double amp, double wavelength)
{
    const TriangleMesh flat = grid(n, n, 1.0 / (n - 1));
    Points v = flat.vertices();
    for (Vec3& p : v)
        p.z() = amp * std::sin(2.0 * std::numbers::pi * p.x() / wavelength);
    return flat.with_vertices(std::move(v));
}

} // namespace ref

namespace ref {

namespace {

double half_squared_error(const lapfusion::Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& target)
{
    return 0.5 * (net.forward(x, lapfusion::Exec::Serial) - target).squaredNorm();
}

} // namespace

GradientCheck gradient_check(const lapfusion::Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& target,
                             int probes, std::uint64_t seed, double eps, double floor)
{
    lapfusion::Mlp::Cache cache;
    const Eigen::MatrixXd y = net.forward(x, cache);
    const lapfusion::MlpGradients g = net.backward(cache, y - target);

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> layer_pick(0, net.layer_count() - 1);
    GradientCheck out;
    lapfusion::Mlp probe = net;
    for (int i = 0; i < probes; ++i) {
        const int l = layer_pick(rng);
        const bool bias = std::uniform_int_distribution<int>(0, 9)(rng) == 0;
        double* param;
        double analytic;
        if (bias) {
            const auto r = std::uniform_int_distribution<Eigen::Index>(0, probe.bias(l).size() - 1)(rng);
            param = &probe.bias(l)(r);
            analytic = g.biases[static_cast<std::size_t>(l)](r);
        } else {
            const auto r = std::uniform_int_distribution<Eigen::Index>(0, probe.weight(l).rows() - 1)(rng);
            const auto c = std::uniform_int_distribution<Eigen::Index>(0, probe.weight(l).cols() - 1)(rng);
            param = &probe.weight(l)(r, c);
            analytic = g.weights[static_cast<std::size_t>(l)](r, c);
        }
        const double saved = *param;
        *param = saved + eps;
        const double up = half_squared_error(probe, x, target);
        *param = saved - eps;
        const double down = half_squared_error(probe, x, target);
        *param = saved;
        const double numeric = (up - down) / (2 * eps);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic - numeric) / scale);
        ++out.probes;
    }
    return out;
}

} // namespace ref
