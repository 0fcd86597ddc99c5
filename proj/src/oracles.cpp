#include "lapfusion/oracles.hpp"

#include "lapfusion/laplacian.hpp"
#include "lapfusion/pointcloud.hpp"
#include "lapfusion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace lapfusion {
namespace {

double median(std::vector<double> v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

std::string fmt(double x)
{
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

OracleResult below(std::string name, double value, double threshold, std::string detail = {})
{
    return {std::move(name), value, threshold, false, std::isfinite(value) && value < threshold, std::move(detail)};
}

// Median relative error of |delta| against 2/r and the smallest cosine between
// delta and the outward radial direction.
struct SphereStats {
    double median_error = 0.0;
    double min_cos = 1.0;
    int used = 0;
};

SphereStats sphere_stats(std::span<const Vec3> points, std::span<const Vec3> delta, double radius,
                         const std::vector<std::uint8_t>* flagged = nullptr)
{
    SphereStats st;
    std::vector<double> err;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (flagged && (*flagged)[i])
            continue;
        err.push_back(std::abs(delta[i].norm() * radius / 2.0 - 1.0));
        st.min_cos = std::min(st.min_cos, delta[i].normalized().dot(points[i].normalized()));
    }
    st.used = static_cast<int>(err.size());
    st.median_error = median(std::move(err));
    return st;
}

} // namespace

std::vector<OracleResult> run_operator_oracles(std::uint64_t seed, Exec exec)
{
    std::vector<OracleResult> out;

    {
        double worst[3] = {0.0, 0.0, 0.0};
        for (int m = 0; m < 20; ++m) {
            const TriangleMesh mesh = make_random_mesh(seed * 1000 + static_cast<std::uint64_t>(m));
            const LaplacianMatrix ops[3] = {uniform_laplacian(mesh), cotangent_laplacian(mesh),
                                            uniform_angle_laplacian(mesh)};
            for (int o = 0; o < 3; ++o) {
                const Eigen::VectorXd ones = Eigen::VectorXd::Ones(ops[o].size());
                worst[o] = std::max(worst[o], (ops[o].matrix * ones).cwiseAbs().maxCoeff());
            }
        }
        out.push_back(below("null space, uniform", worst[0], 1e-9, "max |M 1| over 20 random meshes"));
        out.push_back(below("null space, cotangent", worst[1], 1e-9, "max |M 1| over 20 random meshes"));
        out.push_back(below("null space, uniform-angle", worst[2], 1e-9, "max |M 1| over 20 random meshes"));
    }

    {
        const TriangleMesh sphere = make_icosphere(3);
        double area = 0.0;
        for (double a : voronoi_areas(sphere))
            area += a;
        const double exact = 4.0 * std::numbers::pi;
        out.push_back(below("voronoi area, unit icosphere L3", std::abs(area / exact - 1.0), 0.02,
                            "sum a_k = " + fmt(area) + " vs 4 pi"));
    }

    Points unit_cot;
    for (double radius : {1.0, 2.0}) {
        const TriangleMesh sphere = make_icosphere(4, radius);
        const LaplacianField d = cotangent_laplacian(sphere).apply(sphere.vertices());
        const SphereStats st = sphere_stats(sphere.vertices(), d, radius);
        const std::string tag = "cotangent curvature, r=" + fmt(radius);
        out.push_back(below(tag + " |delta|", st.median_error, 0.03,
                            "median relative error vs 2/r = " + fmt(2.0 / radius)));
        out.push_back({tag + " direction", st.min_cos, 0.99, true, st.min_cos > 0.99, "min cos to outward normal"});
        if (radius == 1.0)
            unit_cot = d;
    }

    {
        const TriangleMesh sphere = make_icosphere(4);
        const LaplacianField d = uniform_angle_laplacian(sphere).apply(sphere.vertices());
        std::vector<double> ratio;
        for (std::size_t i = 0; i < d.size(); ++i)
            ratio.push_back(std::abs(d[i].norm() / unit_cot[i].norm() - 1.0));
        out.push_back(below("uniform-angle vs cotangent, unit icosphere", median(std::move(ratio)), 0.15,
                            "median relative |delta| difference"));
    }

    for (double radius : {1.0, 0.5}) {
        PointCloudFrame frame;
        frame.points = sample_sphere(5000, radius, seed + 7);
        ApproxLaplacianOptions opt;
        opt.k = 25;
        opt.exec = exec;
        const PointLaplacian pl = approx_laplacian(frame, opt);
        const SphereStats st = sphere_stats(frame.points, pl.delta, radius, &pl.flagged);
        const std::string tag = "point-cloud curvature, r=" + fmt(radius);
        out.push_back(below(tag + " |delta|", st.median_error, 0.05,
                            "median relative error vs " + fmt(2.0 / radius) + ", " +
                                std::to_string(pl.flagged_count) + " flagged"));
        out.push_back({tag + " direction", st.min_cos, 0.99, true, st.min_cos > 0.99, "min cos to outward normal"});
    }

    {
        const TriangleMesh mesh = make_random_mesh(seed * 1000 + 1);
        const TriangleMesh sphere = make_icosphere(4);
        for (const TriangleMesh* m : {&sphere, &mesh}) {
            const LaplacianMatrix op = uniform_angle_laplacian(*m);
            const LaplacianField d = op.apply(m->vertices());
            const std::vector<int> anchor = {0};
            const Points c = {m->vertex(0)};
            const LaplacianSolver solver(op, anchor);
            const ReconstructionResult r = solver.solve(d, c);
            double sq = 0.0;
            for (int k = 0; k < m->vertex_count(); ++k)
                sq += (r.positions[static_cast<std::size_t>(k)] - m->vertex(k)).squaredNorm();
            const double rmse = std::sqrt(sq / m->vertex_count()) / m->bounds().diagonal().norm();
            out.push_back(below(m == &sphere ? "roundtrip, icosphere, 1 anchor" : "roundtrip, random mesh, 1 anchor",
                                rmse, 1e-8, "vertex RMSE / bbox diagonal"));
        }
    }
    return out;
}

} // namespace lapfusion
