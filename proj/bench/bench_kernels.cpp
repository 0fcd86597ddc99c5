// Serial vs OpenMP versions of the parallel kernels. Compare the /0 (serial) and
// /1 (parallel) rows of each benchmark.

#include "lapfusion/fusion.hpp"
#include "lapfusion/neural.hpp"
#include "lapfusion/pointcloud.hpp"
#include "lapfusion/skinning.hpp"
#include "lapfusion/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace lapfusion;

namespace {

Exec exec_of(const benchmark::State& state)
{
    return state.range(0) ? Exec::Parallel : Exec::Serial;
}

const RiggedTemplate& rig()
{
    static const RiggedTemplate r = make_synthetic_rig(RigSpec{});
    return r;
}

const Pose& bent()
{
    static const Pose p = make_synthetic_poses(rig().joint_count(), 1, 0.8, 3).front();
    return p;
}

void BM_Chamfer(benchmark::State& state)
{
    const TriangleMesh mesh = build_lbs_mesh(rig(), bent());
    const Points scan = sample_surface(mesh, 20000, 0.0005, 1);
    const SurfaceLocator locator(mesh);
    for (auto _ : state)
        benchmark::DoNotOptimize(chamfer(scan, locator, exec_of(state)));
}

void BM_ApproxLaplacian(benchmark::State& state)
{
    PointCloudFrame frame;
    frame.points = sample_sphere(20000, 0.3, 2);
    ApproxLaplacianOptions opt;
    opt.exec = exec_of(state);
    for (auto _ : state)
        benchmark::DoNotOptimize(approx_laplacian(frame, opt));
}

void BM_Lbs(benchmark::State& state)
{
    const Subdivision sub = midpoint_subdivide(rig().mesh, 2, rig().skin_weights, true);
    for (auto _ : state)
        benchmark::DoNotOptimize(lbs_apply(rig(), bent(), sub.mesh.vertices(), sub.attributes, exec_of(state)));
}

void BM_MlpForward(benchmark::State& state)
{
    const Mlp net({72, 800, 800, 3}, 4);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    Eigen::MatrixXd x(72, 8192);
    for (double& v : x.reshaped())
        v = g(rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(net.forward(x, exec_of(state)));
}

void BM_NormalConsistency(benchmark::State& state)
{
    const TriangleMesh a = midpoint_subdivide(build_lbs_mesh(rig(), bent()), 1, Eigen::MatrixXd(), false).mesh;
    const TriangleMesh b = build_lbs_mesh(rig(), bent());
    for (auto _ : state)
        benchmark::DoNotOptimize(normal_consistency(a, b, exec_of(state)));
}

} // namespace

BENCHMARK(BM_Chamfer)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ApproxLaplacian)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lbs)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MlpForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NormalConsistency)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
