// Acceptance run: one PASS/FAIL line per criterion, measured on synthetic data.
// Exits non-zero only when a stage throws (or with --strict when any line fails).

#include "commands.hpp"
#include "reference.hpp"

#include "lapfusion/fusion.hpp"
#include "lapfusion/io.hpp"
#include "lapfusion/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace lapfusion;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v)
{
    double s = 0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

double rmse(std::span<const Vec3> a, std::span<const Vec3> b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]).squaredNorm();
    return std::sqrt(s / static_cast<double>(a.size()));
}

double bbox_diagonal(std::span<const Vec3> p)
{
    Vec3 lo = p[0], hi = p[0];
    for (const Vec3& v : p) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return (hi - lo).norm();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Scratch {
    fs::path path;
    Scratch() : path(fs::temp_directory_path() / ("lapfusion_accept_" + std::to_string(::getpid())))
    {
        fs::create_directories(path);
    }
    ~Scratch() { fs::remove_all(path); }
};

int run_cli(std::vector<std::string> args)
{
    std::vector<const char*> argv = {"lapfusion"};
    for (const std::string& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (rc != cli::kOk)
        std::cerr << "  cli " << args[0] << " failed (" << rc << "): " << err.str();
    return rc;
}

// The synthetic subject shared by criteria 4 and 6-10.
struct Subject {
    RiggedTemplate rig;
    std::vector<Pose> poses;
    SyntheticScans scans;
    FusionConfig config;
    std::optional<DetailModel> model;
    std::optional<TrainingSet> pairs;

    Subject()
    {
        rig = make_synthetic_rig(RigSpec{});
        poses = make_synthetic_poses(rig.joint_count(), 20, 0.8, 7);
        WrinkleSpec w;
        w.amplitude = 0.005;
        w.wavelength = 0.06;
        w.rest_fraction = 0.5;
        w.round = true;
        ScanSpec s;
        s.points = 20000;
        s.noise = 0.0005;
        scans = make_synthetic_scans(rig, poses, w, s);

        config.base_width = 128;
        config.base_epochs = 100;
        config.base_points_per_frame = 4000;
        config.detail_width = 128;
        config.detail_epochs = 10;
        config.anchor_weight = 1e8;
        config.lambda_r = 200;
    }

    const DetailModel& trained()
    {
        if (!model) {
            const BaseMeshModel base = train_base(rig, scans.frames, poses, config);
            pairs = build_training_pairs(base, scans.frames, poses, config.k_neighbors);
            model = train_detail(base, *pairs);
        }
        return *model;
    }
};

Outcome operator_null_space()
{
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const TriangleMesh m = make_random_mesh(seed);
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.vertex_count());
        for (const LaplacianMatrix& L : {uniform_laplacian(m), cotangent_laplacian(m), uniform_angle_laplacian(m)})
            worst = std::max(worst, (L.matrix * ones).lpNorm<Eigen::Infinity>());
    }
    return {worst < 1e-9, fmt("max |M 1|_inf = %.2e over 20 meshes x 3 operators", worst)};
}

Outcome curvature_oracle()
{
    const double r = 1.0;
    const TriangleMesh m = make_icosphere(4, r);
    const LaplacianField d = cotangent_laplacian(m).apply(m.vertices());
    std::vector<double> mesh_err;
    double min_cos = 1;
    for (int k = 0; k < m.vertex_count(); ++k) {
        const Vec3& dk = d[static_cast<std::size_t>(k)];
        mesh_err.push_back(std::abs(dk.norm() - 2 / r) / (2 / r));
        min_cos = std::min(min_cos, dk.normalized().dot(m.vertex(k).normalized()));
    }

    PointCloudFrame f;
    f.points = sample_sphere(5000, r, 9);
    ApproxLaplacianOptions opt;
    const PointLaplacian pl = approx_laplacian(f, opt);
    std::vector<double> cloud_err;
    for (const Vec3& dk : pl.delta)
        cloud_err.push_back(std::abs(dk.norm() - 2 / r) / (2 / r));

    const double me = median(mesh_err), ce = median(cloud_err);
    return {me < 0.03 && min_cos > 0.99 && ce < 0.05,
            fmt("mesh median err %.2e, min cos %.5f; cloud median err %.2e", me, min_cos, ce)};
}

Outcome roundtrip()
{
    // Template edge chosen so two subdivision levels (x16 faces) give ~50k vertices.
    RigSpec spec;
    spec.edge = 0.0075;
    const RiggedTemplate rig = make_synthetic_rig(spec);
    const TriangleMesh mesh = midpoint_subdivide(rig.mesh, 2, Eigen::MatrixXd(), false).mesh;
    const LaplacianField delta = uniform_angle_laplacian(mesh).apply(mesh.vertices());
    const double diag = bbox_diagonal(mesh.vertices());

    const ReconstructionResult one = reconstruct(mesh, delta, std::vector<int>{0});
    const ReconstructionResult many = reconstruct(mesh, delta, sample_anchors(mesh, 800, 1));
    const double e1 = rmse(one.positions, mesh.vertices()) / diag;
    const double e800 = rmse(many.positions, mesh.vertices()) / diag;
    // "No worse" up to round-off: both sit at machine precision.
    return {e1 < 1e-8 && e800 <= std::max(e1, 1e-14),
            fmt("%d vertices; RMSE/diag 1 anchor %.2e, 800 anchors %.2e", mesh.vertex_count(), e1, e800)};
}

Outcome gradients()
{
    const FusionConfig c;
    const PositionalEncoding enc{c.frequencies, c.include_input};
    const int in = enc.output_dim(3) + 3;
    auto widths = [&](int layers, int width) {
        std::vector<int> w(static_cast<std::size_t>(layers + 1), width);
        w.front() = in;
        w.back() = 3;
        return w;
    };
    const Mlp base(widths(c.base_layers, c.base_width), 41);
    const Mlp detail(widths(c.detail_layers, c.detail_width), 42);
    std::mt19937_64 rng(43);
    std::normal_distribution<double> g;
    Eigen::MatrixXd x(in, 2), t(3, 2);
    for (double& v : x.reshaped())
        v = g(rng);
    for (double& v : t.reshaped())
        v = g(rng);
    const ref::GradientCheck a = ref::gradient_check(base, x, t, 100, 44);
    const ref::GradientCheck b = ref::gradient_check(detail, x, t, 100, 45);
    return {a.max_relative_error < 1e-4 && b.max_relative_error < 1e-4,
            fmt("max rel err %dx%d %.2e, %dx%d %.2e (100 probes each)", c.base_layers, c.base_width,
                a.max_relative_error, c.detail_layers, c.detail_width, b.max_relative_error)};
}

struct EndToEnd {
    Outcome ordering, recovery, ablation;
};

EndToEnd end_to_end(Subject& s)
{
    const DetailModel& model = s.trained();
    Reconstructor rec(model);

    BaseMeshModel disp_base = model.base;
    disp_base.config.target = DetailTarget::Displacement;
    const DetailModel disp = train_detail(disp_base, *s.pairs);
    Reconstructor disp_rec(disp);

    const int frames = static_cast<int>(s.poses.size());
    int ordered = 0;
    std::vector<double> cs, cb, ds, db, nc_lap, nc_disp, c_disp;
    for (int t = 0; t < frames; ++t) {
        const auto& scan = s.scans.frames[static_cast<std::size_t>(t)].points;
        const TriangleMesh& gt = s.scans.ground_truth[static_cast<std::size_t>(t)];
        const double amp = s.scans.wrinkle_rms[static_cast<std::size_t>(t)];
        const ReconstructedFrame r = rec.run(s.poses[static_cast<std::size_t>(t)]);
        const double S = chamfer(scan, r.mesh), B = chamfer(scan, r.base),
                     L = chamfer(scan, build_lbs_mesh(s.rig, s.poses[static_cast<std::size_t>(t)]));
        ordered += S < B && B < L;
        cs.push_back(S);
        cb.push_back(B);
        ds.push_back(rms_surface_distance(r.mesh, gt) / amp);
        db.push_back(rms_surface_distance(r.base, gt) / amp);
        nc_lap.push_back(normal_consistency(r.mesh, gt));

        const TriangleMesh d = disp_rec.run(s.poses[static_cast<std::size_t>(t)]).mesh;
        nc_disp.push_back(normal_consistency(d, gt));
        c_disp.push_back(chamfer(scan, d));
    }

    EndToEnd e;
    const double ratio = mean(cs) / mean(cb);
    e.ordering = {ordered >= (9 * frames + 9) / 10 && ratio < 0.5,
                  fmt("S<B<LBS on %d/%d frames; mean chamfer S/B %.3f", ordered, frames, ratio)};
    const double dS = mean(ds), dB = mean(db);
    e.recovery = {dS < 0.25 && dB > 0.80,
                  fmt("RMS distance to ground truth / wrinkle amplitude: S %.3f, B %.3f", dS, dB)};
    const double margin = mean(nc_lap) - mean(nc_disp);
    e.ablation = {margin >= 0.005,
                  fmt("NC laplacian %.4f, displacement %.4f (margin %+.4f); chamfer laplacian/displacement %.2f",
                      mean(nc_lap), mean(nc_disp), margin, mean(cs) / mean(c_disp))};
    return e;
}

Outcome anchor_trend(Subject& s)
{
    const DetailModel& model = s.trained();
    Reconstructor rec(model);
    const Subdivision sub = model.base.canonical_subdivision();
    const std::vector<int> counts = {1, 50, 200, 500, 800};
    const int frames = 5;

    std::vector<ReconstructedFrame> predicted;
    for (int t = 0; t < frames; ++t)
        predicted.push_back(rec.run(s.poses[static_cast<std::size_t>(t)]));

    std::vector<double> med;
    for (int n : counts) {
        const std::vector<int> anchors = sample_anchors(sub.mesh, n, model.base.config.seed);
        std::vector<double> err;
        for (int t = 0; t < frames; ++t) {
            const ReconstructedFrame& r = predicted[static_cast<std::size_t>(t)];
            const ReconstructionResult x = reconstruct(r.base, r.field, anchors, model.base.config.anchor_weight);
            const TriangleMesh out = r.base.with_vertices(x.positions);
            err.push_back(rms_surface_distance(out, s.scans.ground_truth[static_cast<std::size_t>(t)]));
        }
        med.push_back(median(err));
    }
    int inversions = 0;
    bool small = true;
    for (std::size_t i = 1; i < med.size(); ++i)
        if (med[i] > med[i - 1]) {
            ++inversions;
            small = small && med[i] <= 1.05 * med[i - 1];
        }
    std::string detail = "median error (mm) over n = 1/50/200/500/800:";
    for (double m : med)
        detail += fmt(" %.3f", 1e3 * m);
    return {inversions == 0 || (inversions == 1 && small), detail};
}

Outcome scaling(Subject& s, const fs::path& dir)
{
    const DetailModel& model = s.trained();
    const std::vector<Pose> poses(s.poses.begin(), s.poses.begin() + 2);
    write_rig(dir / "rig.json", s.rig);
    write_poses(dir / "poses.txt", poses);
    save_checkpoint(dir / "model.lfm", model);
    const std::vector<std::string> common = {"--rig", (dir / "rig.json").string(), "--poses",
                                             (dir / "poses.txt").string(), "--checkpoint",
                                             (dir / "model.lfm").string()};
    auto cli = [&](std::vector<std::string> args, const fs::path& out) {
        args.insert(args.end(), common.begin(), common.end());
        args.insert(args.end(), {"-o", out.string()});
        if (run_cli(args) != cli::kOk)
            throw std::runtime_error("cli " + args[0] + " failed");
    };

    cli({"reconstruct"}, dir / "plain");
    Reconstructor rec(model);
    std::vector<TriangleMesh> bases;
    for (const Pose& p : poses)
        bases.push_back(rec.run(p).base);

    const std::vector<double> factors = {0.0, 0.5, 1.0, 2.0};
    std::vector<double> amp;
    bool identical = true;
    for (double f : factors) {
        const fs::path out = dir / fmt("scale_%g", f);
        cli({"scale", "-s", fmt("%.17g", f)}, out);
        double a = 0;
        for (std::size_t i = 0; i < poses.size(); ++i) {
            const std::string name = fmt("scale_%04zu.obj", i);
            a += wrinkle_amplitude(read_obj(out / name), bases[i]) / static_cast<double>(poses.size());
            if (f == 1.0)
                identical = identical && slurp(out / name) == slurp(dir / "plain" / fmt("recon_%04zu.obj", i));
        }
        amp.push_back(a);
    }
    bool increasing = true;
    for (std::size_t i = 1; i < amp.size(); ++i)
        increasing = increasing && amp[i] > amp[i - 1];
    std::string detail = "amplitude (mm) at s = 0/0.5/1/2:";
    for (double a : amp)
        detail += fmt(" %.3f", 1e3 * a);
    detail += identical ? "; s=1 bit-identical" : "; s=1 differs";
    return {increasing && identical, detail};
}

Outcome self_transfer(Subject& s)
{
    const DetailModel& model = s.trained();
    bool identical = true;
    for (std::size_t t = 0; t < 3; ++t) {
        const TriangleMesh a = transfer_details(model, model.base, s.poses[t]);
        const TriangleMesh b = reconstruct_frame(model, s.poses[t]);
        identical = identical && a.vertices() == b.vertices() && a.faces() == b.faces();
    }
    return {identical, identical ? "3 poses bit-identical" : "outputs differ"};
}

Outcome determinism(const fs::path& dir)
{
    const fs::path config = dir / "det.toml";
    std::ofstream(config) << "[paths]\noutput = \"data\"\nrig = \"data/rig.json\"\nposes = \"data/poses.txt\"\n"
                             "scans = \"data/scans\"\n\n[base]\nwidth = 64\nepochs = 10\npoints_per_frame = 1000\n\n"
                             "[detail]\nwidth = 64\nepochs = 3\nbatch_points = 2000\n\n[reconstruction]\n"
                             "anchors = 200\nanchor_weight = 1e8\n\n[synth]\nframes = 3\npoints = 5000\n";
    if (run_cli({"synth", "-c", config.string()}) != cli::kOk)
        throw std::runtime_error("synth failed");
    for (const char* run : {"a", "b"}) {
        const std::string out = (dir / run).string(), ckpt = (dir / run / "model.lfm").string();
        for (const char* cmd : {"fit", "reconstruct"})
            if (run_cli({cmd, "-c", config.string(), "--threads", "1", "--seed", "3", "--checkpoint", ckpt, "-o",
                         out}) != cli::kOk)
                throw std::runtime_error(std::string(cmd) + " failed");
    }
    int compared = 0, equal = 0;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        ++compared;
        equal += slurp(entry.path()) == slurp(dir / "b" / entry.path().filename());
    }
    return {compared > 0 && equal == compared, fmt("%d/%d output files byte-identical", equal, compared)};
}

} // namespace

int main(int argc, char** argv)
{
    bool strict = false;
    for (int i = 1; i < argc; ++i)
        strict = strict || std::strcmp(argv[i], "--strict") == 0;

    Scratch scratch;

    Subject subject;
    std::optional<EndToEnd> e2e;
    auto ensure_e2e = [&] {
        if (!e2e)
            e2e = end_to_end(subject);
    };

    struct Criterion {
        int id;
        const char* name;
        double budget;  // seconds
        std::function<Outcome()> check;
    };
    const std::vector<Criterion> criteria = {
        {1, "operator null space", 10, operator_null_space},
        {2, "analytic curvature oracle", 30, curvature_oracle},
        {3, "exact reconstruction roundtrip", 60, roundtrip},
        {5, "gradient correctness", 120, gradients},
        {6, "end-to-end fidelity ordering", 1200, [&] { ensure_e2e(); return e2e->ordering; }},
        {7, "detail recovery vs ground truth", 0, [&] { ensure_e2e(); return e2e->recovery; }},
        {8, "displacement vs Laplacian ablation", 0, [&] { ensure_e2e(); return e2e->ablation; }},
        {4, "anchor-count trend", 300, [&] { return anchor_trend(subject); }},
        {9, "scaling behavior", 0, [&] {
             fs::create_directories(scratch.path / "scale");
             return scaling(subject, scratch.path / "scale");
         }},
        {10, "self-transfer identity", 0, [&] { return self_transfer(subject); }},
        {11, "determinism", 0, [&] {
             fs::create_directories(scratch.path / "det");
             return determinism(scratch.path / "det");
         }},
    };

    std::vector<std::pair<int, std::string>> lines;
    int failed = 0, errors = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
            ++errors;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        // Criteria 7 and 8 share criterion 6's run, which carries the time budget.
        if (c.budget > 0 && secs > c.budget) {
            o.pass = false;
            o.detail += fmt("; over the %.0f s budget", c.budget);
        }
        failed += !o.pass;
        std::string line =
            fmt("%s %2d %-36s %s (%.2f s)", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::cout << line << std::endl;
        lines.emplace_back(c.id, std::move(line));
    }

    std::sort(lines.begin(), lines.end());
    std::cout << "\nsummary: " << lines.size() - static_cast<std::size_t>(failed) << "/" << lines.size()
              << " criteria pass\n";
    for (const auto& [id, line] : lines)
        std::cout << line << "\n";
    return errors > 0 || (strict && failed > 0) ? 1 : 0;
}
