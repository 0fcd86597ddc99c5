#include "lapfusion/error.hpp"
#include "lapfusion/fusion.hpp"
#include "lapfusion/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <unistd.h>

using namespace lapfusion;
namespace fs = std::filesystem;

namespace {

RigSpec small_rig()
{
    RigSpec s;
    s.edge = 0.03;
    return s;
}

FusionConfig small_config()
{
    FusionConfig c;
    c.base_layers = 3;
    c.base_width = 32;
    c.base_epochs = 20;
    c.base_batch_frames = 2;
    c.base_points_per_frame = 1000;
    c.detail_layers = 3;
    c.detail_width = 32;
    c.detail_epochs = 5;
    c.detail_batch_points = 1000;
    c.subdivision = 1;
    c.anchors = 100;
    c.anchor_weight = 1e6;
    c.lambda_r = 100;
    return c;
}

// One small trained subject shared by the tests that only read it.
struct Subject {
    RiggedTemplate rig = make_synthetic_rig(small_rig());
    std::vector<Pose> poses = make_synthetic_poses(3, 3, 0.8, 5);
    WrinkleSpec wrinkles;
    SyntheticScans scans;
    FusionConfig config = small_config();
    BaseMeshModel base;
    TrainingSet pairs;
    DetailModel detail;

    Subject()
    {
        wrinkles.subdivision = 1;
        config.base_width = 64;
        config.base_epochs = 60;
        ScanSpec scan;
        scan.points = 8000;
        scans = make_synthetic_scans(rig, poses, wrinkles, scan);
        base = train_base(rig, scans.frames, poses, config);
        pairs = build_training_pairs(base, scans.frames, poses, config.k_neighbors);
        detail = train_detail(base, pairs);
    }
};

const Subject& subject()
{
    static const Subject s;
    return s;
}

bool same_mesh(const TriangleMesh& a, const TriangleMesh& b)
{
    return a.vertices() == b.vertices() && a.faces() == b.faces();
}

double pearson(const std::vector<double>& a, const std::vector<double>& b)
{
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Template locations (with skin weights) of the subdivided template's vertices.
std::vector<SurfaceSample> template_samples(const BaseMeshModel& model)
{
    std::vector<SurfaceSample> out;
    for (const SurfaceSample& s : model.canonical_subdivision().vertex_samples())
        out.push_back(model.rig.sample(s.face, s.bary));
    return out;
}

double rms_norm(const Points& field)
{
    double s = 0;
    for (const Vec3& v : field)
        s += v.squaredNorm();
    return std::sqrt(s / static_cast<double>(field.size()));
}

} // namespace

TEST_SUITE("fusion") {

TEST_CASE("base mesh with an untrained f_d")
{
    const RiggedTemplate rig = make_synthetic_rig(small_rig());
    const BaseMeshModel model = make_base_model(rig, small_config());
    CHECK(model.f_d.input_dim() == 63 + 9);
    CHECK(model.f_d.output_dim() == 3);
    CHECK(static_cast<int>(model.anchors.size()) == 100);

    const TriangleMesh rest = build_base_mesh(model, Pose::identity(3));
    CHECK(rest.faces() == rig.mesh.faces());
    for (int k = 0; k < rig.mesh.vertex_count(); ++k)
        CHECK((rest.vertex(k) - rig.mesh.vertex(k)).norm() < 1e-15);

    const Pose bent = make_synthetic_poses(3, 1, 0.8, 2)[0];
    CHECK(same_mesh(build_base_mesh(model, bent), build_lbs_mesh(rig, bent)));
}

TEST_CASE("config validation")
{
    FusionConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.anchors = 1000000;
    CHECK_THROWS_AS(make_base_model(make_synthetic_rig(small_rig()), c), ConfigError);
}

TEST_CASE("train_base")
{
    const RiggedTemplate rig = make_synthetic_rig(small_rig());
    const std::vector<Pose> poses = make_synthetic_poses(3, 2, 0.8, 3);
    WrinkleSpec w;
    w.subdivision = 1;
    ScanSpec scan;
    scan.points = 3000;

    SUBCASE("smooth subject fits to the noise floor")
    {
        w.amplitude = 0;
        const SyntheticScans s = make_synthetic_scans(rig, poses, w, scan);
        FusionConfig c = small_config();
        c.base_epochs = 150;
        c.lambda_r = 1;
        TrainingReport report;
        const BaseMeshModel m = train_base(rig, s.frames, poses, c, &report);
        CHECK(report.loss.size() == 150u);
        CHECK(report.loss.back() < report.loss.front());
        for (std::size_t t = 0; t < poses.size(); ++t) {
            const double c_base = chamfer(s.frames[t].points, build_base_mesh(m, poses[t]));
            CHECK(c_base < 2 * scan.noise * scan.noise);
            CHECK(c_base < chamfer(s.frames[t].points, build_lbs_mesh(rig, poses[t])));
        }
    }
    SUBCASE("a heavy regularizer shrinks f_d")
    {
        const SyntheticScans s = make_synthetic_scans(rig, poses, w, scan);
        FusionConfig c = small_config();
        auto offset_norm = [&](double lambda_r) {
            c.lambda_r = lambda_r;
            const BaseMeshModel m = train_base(rig, s.frames, poses, c);
            double total = 0;
            for (const Pose& p : poses) {
                const TriangleMesh a = build_base_mesh(m, p), b = build_lbs_mesh(rig, p);
                for (int k = 0; k < a.vertex_count(); ++k)
                    total += (a.vertex(k) - b.vertex(k)).squaredNorm();
            }
            return total;
        };
        CHECK(offset_norm(1e3) < offset_norm(1.0));
    }
    SUBCASE("the anchor term pulls visible anchors onto the scan")
    {
        scan.camera = Vec3(0, 0.2, 1.0);
        const SyntheticScans s = make_synthetic_scans(rig, poses, w, scan);
        FusionConfig c = small_config();
        auto anchor_distance = [&](double lambda_a) {
            c.lambda_a = lambda_a;
            const BaseMeshModel m = train_base(rig, s.frames, poses, c);
            const Subdivision sub = m.canonical_subdivision();
            const std::vector<SurfaceSample> samples = sub.vertex_samples();
            double total = 0;
            int count = 0;
            for (std::size_t t = 0; t < poses.size(); ++t) {
                const TriangleMesh coarse = build_base_mesh(m, poses[t]);
                const KdTree tree(s.frames[t].points);
                for (int a : m.anchors) {
                    const Vec3 p = samples[static_cast<std::size_t>(a)].position(coarse);
                    const double d2 = tree.knn(p, 1)[0].squared_distance;
                    if (d2 < c.visibility_tolerance * c.visibility_tolerance) {
                        total += std::sqrt(d2);
                        ++count;
                    }
                }
            }
            return total / count;
        };
        CHECK(anchor_distance(2.0) < anchor_distance(0.0));
    }
    SUBCASE("frames and poses must pair up")
    {
        const SyntheticScans s = make_synthetic_scans(rig, poses, w, scan);
        CHECK_THROWS_AS(train_base(rig, s.frames, std::span<const Pose>(poses).first(1), small_config()), ConfigError);
    }
    SUBCASE("serial and parallel training agree bitwise")
    {
        const SyntheticScans s = make_synthetic_scans(rig, poses, w, scan);
        FusionConfig c = small_config();
        c.base_epochs = 3;
        c.exec = Exec::Serial;
        const BaseMeshModel a = train_base(rig, s.frames, poses, c);
        c.exec = Exec::Parallel;
        const BaseMeshModel b = train_base(rig, s.frames, poses, c);
        CHECK(a.f_d == b.f_d);
    }
}

TEST_CASE("training pairs")
{
    const RiggedTemplate rig = make_synthetic_rig(small_rig());
    const BaseMeshModel model = make_base_model(rig, small_config());
    const Pose rest = Pose::identity(3);

    SUBCASE("scan points on the base mesh project onto themselves")
    {
        PointCloudFrame f;
        f.points = sample_surface(build_base_mesh(model, rest), 2000, 0.0, 3);
        const TrainingSet set = build_training_pairs(model, std::span(&f, 1), std::span(&rest, 1), 25);
        REQUIRE(set.pairs.size() + static_cast<std::size_t>(set.flagged) == f.size());
        double worst = 0;
        for (const TrainingPair& p : set.pairs)
            worst = std::max(worst, p.displacement.norm());
        CHECK(worst < 1e-12);
        CHECK(set.pairs.front().weight == 1.0);
    }
    SUBCASE("flat region gives near-zero Laplacians")
    {
        // The cylinder has zero curvature along the axis: the Laplacian points
        // radially with the magnitude of 1/r and no axial component.
        PointCloudFrame f;
        f.points = sample_surface(midpoint_subdivide(rig.mesh, 2, Eigen::MatrixXd(), false).mesh, 20000, 0.0, 4);
        const TrainingSet set = build_training_pairs(model, std::span(&f, 1), std::span(&rest, 1), 25);
        std::vector<double> axial;
        for (const TrainingPair& p : set.pairs) {
            const Vec3 q = query_point(rig, p.sample);
            if (q.y() > 0.1 && q.y() < 0.3)
                axial.push_back(std::abs(p.gt_laplacian.y()));
        }
        std::sort(axial.begin(), axial.end());
        CHECK(axial[axial.size() / 2] < 0.05 / 0.05);
    }
    SUBCASE("wrinkle Laplacians follow the analytic curvature")
    {
        WrinkleSpec w;
        w.subdivision = 2;
        w.amplitude = 0.005;
        w.rest_fraction = 1.0;
        w.round = true;
        ScanSpec scan;
        scan.points = 40000;
        scan.noise = 0;
        const SyntheticScans s = make_synthetic_scans(rig, std::span(&rest, 1), w, scan);
        const TrainingSet set = build_training_pairs(model, s.frames, std::span(&rest, 1), 25);

        std::vector<double> measured, analytic;
        const double h = 1e-3;
        for (std::size_t i = 0; i < set.pairs.size(); i += 10) {
            const TrainingPair& p = set.pairs[i];
            const Vec3 q = query_point(rig, p.sample);
            if (q.y() < 0.05 || q.y() > 0.35)
                continue;
            Vec3 radial(q.x(), 0, q.z());
            radial.normalize();
            std::vector<double> wr;
            synthetic_displacement(rig, {q - Vec3(0, h, 0), q, q + Vec3(0, h, 0)}, w, rest, &wr);
            analytic.push_back(-(wr[0] - 2 * wr[1] + wr[2]) / (h * h));
            measured.push_back(p.gt_laplacian.dot(radial));
        }
        REQUIRE(measured.size() > 500);
        CHECK(pearson(measured, analytic) > 0.7);
    }
}

TEST_CASE("train_detail")
{
    const RiggedTemplate rig = make_synthetic_rig(small_rig());
    const BaseMeshModel model = make_base_model(rig, small_config());
    const Pose rest = Pose::identity(3);

    SUBCASE("all-zero field")
    {
        TrainingSet set;
        set.poses = {rest};
        for (const SurfaceSample& s : template_samples(model)) {
            TrainingPair p;
            p.sample = s;
            p.gt_laplacian = Vec3::Zero();
            set.pairs.push_back(p);
        }
        const DetailModel d = train_detail(model, set);
        const QueryInputs in = QueryInputs::build(rig, template_samples(model), model.encoding);
        CHECK(rms_norm(predict_field(d, in, rest)) < 1e-3);
    }
    SUBCASE("held-out points on a single pose")
    {
        // The ground truth is refined well below the neighborhood size so the
        // targets are not dominated by its facets.
        WrinkleSpec w;
        w.subdivision = 3;
        w.round = true;
        w.amplitude = 0.005;
        w.rest_fraction = 1.0;
        ScanSpec scan;
        scan.points = 20000;
        scan.noise = 0;
        const SyntheticScans s = make_synthetic_scans(rig, std::span(&rest, 1), w, scan);
        TrainingSet all = build_training_pairs(model, s.frames, std::span(&rest, 1), 25);
        TrainingSet train, held;
        train.poses = held.poses = all.poses;
        for (std::size_t i = 0; i < all.pairs.size(); ++i)
            (i % 5 == 0 ? held : train).pairs.push_back(all.pairs[i]);

        BaseMeshModel m = model;
        m.config.detail_width = 128;
        m.config.detail_epochs = 100;
        m.config.detail_batch_points = 500;
        m.config.learning_rate = 3e-3;
        m.config.frequencies = 8;
        m.encoding.frequencies = 8;
        const DetailModel d = train_detail(m, train);

        std::vector<SurfaceSample> samples;
        Points truth;
        for (const TrainingPair& p : held.pairs) {
            samples.push_back(p.sample);
            truth.push_back(p.gt_laplacian);
        }
        const Points predicted = predict_field(d, QueryInputs::build(rig, samples, m.encoding), rest);
        Points error(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
            error[i] = predicted[i] - truth[i];
        MESSAGE("held-out field error ", rms_norm(error) / rms_norm(truth));
        CHECK(rms_norm(error) < 0.15 * rms_norm(truth));
    }
    SUBCASE("the field depends on the pose")
    {
        const Subject& sub = subject();
        const QueryInputs in = QueryInputs::build(sub.rig, template_samples(sub.base),
                                                  sub.base.encoding);
        const Eigen::MatrixXd a = predict_canonical(sub.detail, in, sub.poses[0]);
        const Eigen::MatrixXd b = predict_canonical(sub.detail, in, sub.poses[1]);
        CHECK((a - b).norm() > 0);
    }
    SUBCASE("no pairs")
    {
        CHECK_THROWS_AS(train_detail(model, TrainingSet{}), ConfigError);
    }
}

TEST_CASE("reconstruction")
{
    const Subject& sub = subject();
    const DetailModel& d = sub.detail;

    SUBCASE("canonical prediction is the posed one at the rest pose")
    {
        const QueryInputs in = QueryInputs::build(sub.rig, template_samples(d.base),
                                                  d.base.encoding);
        const Pose rest = Pose::identity(3);
        const Eigen::MatrixXd c = predict_canonical(d, in, rest);
        const Points posed = predict_field(d, in, rest);
        for (std::size_t i = 0; i < posed.size(); ++i)
            CHECK((posed[i] - c.col(static_cast<Eigen::Index>(i))).norm() < 1e-15 * (1 + posed[i].norm()));
    }
    SUBCASE("the trained base beats plain skinning")
    {
        // S against B is measured at full scale by the acceptance run; this
        // subject is too coarse for the detail stage to pay off.
        for (std::size_t t = 0; t < sub.poses.size(); ++t) {
            const Points& scan = sub.scans.frames[t].points;
            CHECK(chamfer(scan, build_base_mesh(sub.base, sub.poses[t])) <
                  chamfer(scan, build_lbs_mesh(sub.rig, sub.poses[t])));
        }
    }
    SUBCASE("zero field gives the least-bending surface through the anchors")
    {
        DetailModel flat = d;
        flat.f_l.zero_output_layer();
        Reconstructor r(flat);
        const ReconstructedFrame f = r.run(sub.poses[0]);
        CHECK(rms_norm(f.field) == 0.0);
        // B itself meets every anchor, so the minimizer cannot bend more than B.
        const LaplacianField lb = uniform_angle_laplacian(f.base).apply(f.base.vertices());
        double bent = 0;
        for (const Vec3& v : lb)
            bent += v.squaredNorm();
        CHECK(f.solve.objective <= bent);
    }
    SUBCASE("unseen interpolated pose is well shaped")
    {
        const Pose mid = interpolate(sub.poses[0], sub.poses[2], 0.37);
        const TriangleMesh m = reconstruct_frame(d, mid);
        for (const Vec3& v : m.vertices())
            REQUIRE(v.allFinite());
        CHECK(max_edge_ratio(m) < 5.0);
    }
    SUBCASE("scale 1 changes nothing")
    {
        Reconstructor r(d);
        const ReconstructedFrame f = r.run(sub.poses[1]);
        CHECK(scale_field(f.field, 1.0) == f.field);
        CHECK(same_mesh(reconstruct_frame(d, sub.poses[1], 1.0), f.mesh));
    }
    SUBCASE("topology invariance and animation")
    {
        const std::vector<TriangleMesh> frames = animate(d, sub.poses);
        REQUIRE(frames.size() == sub.poses.size());
        for (std::size_t t = 0; t < frames.size(); ++t) {
            CHECK(frames[t].faces() == frames[0].faces());
            CHECK(same_mesh(frames[t], reconstruct_frame(d, sub.poses[t])));
        }
        const std::vector<Pose> still(3, sub.poses[1]);
        const std::vector<TriangleMesh> same = animate(d, still);
        CHECK(same_mesh(same[0], same[1]));
        CHECK(same_mesh(same[1], same[2]));
    }
    SUBCASE("trajectories under interpolated poses are continuous")
    {
        std::vector<Pose> path;
        for (int i = 0; i <= 10; ++i)
            path.push_back(interpolate(sub.poses[0], sub.poses[1], i / 10.0));
        const std::vector<TriangleMesh> frames = animate(d, path);
        for (std::size_t i = 1; i < path.size(); ++i) {
            const TriangleMesh a = build_lbs_mesh(sub.rig, path[i - 1]), b = build_lbs_mesh(sub.rig, path[i]);
            double bound = 0, moved = 0;
            for (int k = 0; k < a.vertex_count(); ++k)
                bound = std::max(bound, (a.vertex(k) - b.vertex(k)).norm());
            for (int k = 0; k < frames[i].vertex_count(); ++k)
                moved = std::max(moved, (frames[i].vertex(k) - frames[i - 1].vertex(k)).norm());
            CHECK(moved < 2 * bound);
        }
    }
}

TEST_CASE("detail transfer")
{
    const Subject& sub = subject();
    const DetailModel& d = sub.detail;
    const Pose& pose = sub.poses[2];

    SUBCASE("self transfer is bit identical")
    {
        CHECK(same_mesh(transfer_details(d, d.base, pose), reconstruct_frame(d, pose)));
    }
    SUBCASE("onto a smooth base the field is unchanged")
    {
        const BaseMeshModel smooth = make_base_model(sub.rig, sub.config);
        Reconstructor own(d), moved(d, &smooth);
        const double a = rms_norm(own.run(pose).field), b = rms_norm(moved.run(pose).field);
        CHECK(std::abs(b * b / (a * a) - 1) < 0.1);
    }
    SUBCASE("a zero field reproduces the target's smooth surface")
    {
        DetailModel flat = d;
        flat.f_l.zero_output_layer();
        const BaseMeshModel smooth = make_base_model(sub.rig, sub.config);
        DetailModel target_flat = flat;
        target_flat.base = smooth;
        CHECK(same_mesh(transfer_details(flat, smooth, pose), reconstruct_frame(target_flat, pose)));
    }
    SUBCASE("mismatched rigs")
    {
        RigSpec four = small_rig();
        four.joints = 4;
        FusionConfig c = sub.config;
        const BaseMeshModel other = make_base_model(make_synthetic_rig(four), c);
        CHECK_THROWS_AS(transfer_details(d, other, pose), TopologyError);
        RigSpec finer = small_rig();
        finer.edge = 0.025;
        const BaseMeshModel dense = make_base_model(make_synthetic_rig(finer), c);
        CHECK_THROWS_AS(transfer_details(d, dense, pose), TopologyError);
    }
}

TEST_CASE("checkpoints")
{
    const Subject& sub = subject();
    const fs::path path = fs::temp_directory_path() / ("lapfusion_model_" + std::to_string(::getpid()) + ".lfm");
    save_checkpoint(path, sub.detail);
    const DetailModel back = load_checkpoint(path, sub.rig);
    CHECK(back.f_l == sub.detail.f_l);
    CHECK(back.base.f_d == sub.detail.base.f_d);
    CHECK(back.base.anchors == sub.detail.base.anchors);
    CHECK(back.field_scale == sub.detail.field_scale);
    CHECK(same_mesh(reconstruct_frame(back, sub.poses[0]), reconstruct_frame(sub.detail, sub.poses[0])));

    RigSpec other = small_rig();
    other.radius = 0.06;
    CHECK_THROWS_AS(load_checkpoint(path, make_synthetic_rig(other)), IoError);
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint(path, sub.rig), IoError);
    CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing", sub.rig), IoError);
    fs::remove(path);
}

TEST_CASE("metrics")
{
    const TriangleMesh sphere = make_icosphere(3);
    // Vertex normals against face normals: close to, not exactly, 1 on a polyhedron.
    const double self = normal_consistency(sphere, sphere);
    CHECK(self > 0.99);
    CHECK(self <= 1.0);
    CHECK(rms_surface_distance(sphere, sphere) == 0.0);
    CHECK(wrinkle_amplitude(sphere, sphere) == 0.0);
    Points grown = sphere.vertices();
    for (Vec3& v : grown)
        v *= 1.01;
    CHECK(wrinkle_amplitude(sphere.with_vertices(grown), sphere) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(max_edge_ratio(sphere) < 1.5);
    Points bumpy = sphere.vertices();
    for (std::size_t i = 0; i < bumpy.size(); i += 2)
        bumpy[i] *= 1.05;
    CHECK(normal_consistency(sphere.with_vertices(bumpy), sphere) < self);
}

} // TEST_SUITE
