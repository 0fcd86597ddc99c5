#include "lapfusion/synthetic.hpp"

#include "lapfusion/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace lapfusion {

namespace {

constexpr double kPi = std::numbers::pi;

struct Ring {
    int first = 0;
    int count = 0;
    double offset = 0.0;  ///< angular phase in units of the ring spacing
};

double ring_angle(const Ring& r, int i)
{
    return 2.0 * kPi * (i + r.offset) / r.count;
}

/// Closes the band between two coaxial rings (a below b) with a.count + b.count
/// triangles, advancing whichever ring has the next vertex at the smaller angle.
void stitch(const Ring& a, const Ring& b, std::vector<Face>& faces)
{
    int i = 0;
    int j = 0;
    while (i < a.count || j < b.count) {
        const int ai = a.first + i % a.count;
        const int bj = b.first + j % b.count;
        const bool advance_a = j == b.count || (i < a.count && ring_angle(a, i + 1) < ring_angle(b, j + 1));
        if (advance_a) {
            faces.push_back({ai, bj, a.first + (i + 1) % a.count});
            ++i;
        } else {
            faces.push_back({ai, bj, b.first + (j + 1) % b.count});
            ++j;
        }
    }
}

double smoothstep(double e0, double e1, double x)
{
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace

RiggedTemplate make_synthetic_rig(const RigSpec& spec)
{
    if (spec.joints < 1 || !(spec.radius > 0.0) || !(spec.length > 0.0) || !(spec.edge > 0.0) ||
        !(spec.blend > 0.0) || spec.edge > spec.radius) {
        throw ConfigError("synthetic rig: joints >= 1 and positive radius, length, blend and edge <= radius required");
    }
    const double r = spec.radius;
    const double row_step = spec.edge * std::sqrt(3.0) / 2.0;
    const int nc = std::max(6, static_cast<int>(std::lround(2.0 * kPi * r / spec.edge)));
    const int rows = std::max(2, static_cast<int>(std::lround(spec.length / row_step)) + 1);
    const int cap_rings = std::max(1, static_cast<int>(std::lround(0.5 * kPi * r / row_step)));

    Points verts;
    std::vector<Ring> rings;
    auto add_ring = [&](double y, double radius, int count, double offset) {
        Ring ring{static_cast<int>(verts.size()), count, offset};
        for (int i = 0; i < count; ++i) {
            const double a = ring_angle(ring, i);
            verts.emplace_back(radius * std::cos(a), y, radius * std::sin(a));
        }
        rings.push_back(ring);
    };

    // Bottom cap (pole first), cylinder, top cap.
    const int bottom_pole = 0;
    verts.emplace_back(0.0, -r, 0.0);
    double phase = 0.0;
    for (int c = cap_rings - 1; c >= 1; --c) {
        const double phi = 0.5 * kPi * c / cap_rings;
        const int count = std::max(3, static_cast<int>(std::lround(2.0 * kPi * r * std::cos(phi) / spec.edge)));
        add_ring(-r * std::sin(phi), r * std::cos(phi), count, phase);
        phase = phase == 0.0 ? 0.5 : 0.0;
    }
    for (int i = 0; i < rows; ++i) {
        add_ring(spec.length * i / (rows - 1), r, nc, phase);
        phase = phase == 0.0 ? 0.5 : 0.0;
    }
    for (int c = 1; c < cap_rings; ++c) {
        const double phi = 0.5 * kPi * c / cap_rings;
        const int count = std::max(3, static_cast<int>(std::lround(2.0 * kPi * r * std::cos(phi) / spec.edge)));
        add_ring(spec.length + r * std::sin(phi), r * std::cos(phi), count, phase);
        phase = phase == 0.0 ? 0.5 : 0.0;
    }
    const int top_pole = static_cast<int>(verts.size());
    verts.emplace_back(0.0, spec.length + r, 0.0);

    std::vector<Face> faces;
    const Ring& lowest = rings.front();
    for (int j = 0; j < lowest.count; ++j) {
        faces.push_back({bottom_pole, lowest.first + j, lowest.first + (j + 1) % lowest.count});
    }
    for (std::size_t k = 0; k + 1 < rings.size(); ++k) {
        stitch(rings[k], rings[k + 1], faces);
    }
    const Ring& highest = rings.back();
    for (int i = 0; i < highest.count; ++i) {
        faces.push_back({highest.first + i, top_pole, highest.first + (i + 1) % highest.count});
    }

    RiggedTemplate rig;
    rig.mesh = TriangleMesh::build(std::move(verts), std::move(faces));
    const int J = spec.joints;
    const double bone = spec.length / J;
    for (int j = 0; j < J; ++j) {
        rig.joints.push_back({"joint" + std::to_string(j), j - 1, Vec3(0.0, bone * j, 0.0)});
    }
    const double sigma = spec.blend * bone;
    const int K = rig.mesh.vertex_count();
    rig.skin_weights = Eigen::MatrixXd::Zero(K, J);
    for (int k = 0; k < K; ++k) {
        const double y = rig.mesh.vertex(k).y();
        for (int j = 0; j < J; ++j) {
            const double lo = j == 0 ? -std::numeric_limits<double>::infinity() : bone * j;
            const double hi = j == J - 1 ? std::numeric_limits<double>::infinity() : bone * (j + 1);
            const double d = y < lo ? lo - y : (y > hi ? y - hi : 0.0);
            const double t = d / sigma;
            rig.skin_weights(k, j) = t < 1.0 ? std::pow(1.0 - t * t, 3) : 0.0;
        }
        rig.skin_weights.row(k) /= rig.skin_weights.row(k).sum();
    }
    rig.association = Eigen::MatrixXd::Zero(J, J);
    for (int j = 1; j < J; ++j) {
        for (int i = std::max(0, j - 1); i <= std::min(J - 1, j + 1); ++i) {
            rig.association(j, i) = 1.0;
        }
    }
    rig.validate();
    return rig;
}

std::vector<double> synthetic_displacement(const RiggedTemplate& rig, const Points& canonical,
                                           const WrinkleSpec& wrinkles, const Pose& pose,
                                           std::vector<double>* wrinkle_only)
{
    pose.validate(rig.joint_count());
    const int J = rig.joint_count();
    double length = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    for (const Vec3& v : rig.mesh.vertices()) {
        length = std::max(length, v.y());
        lo = std::min(lo, v.y());
    }
    // Cylinder span: caps are as tall as the radius.
    const double radius = -lo;
    const double top = length - radius;
    const double bone = top / J;
    const double taper = 0.15 * top;

    std::vector<double> out(canonical.size());
    if (wrinkle_only) {
        wrinkle_only->assign(canonical.size(), 0.0);
    }
    for (std::size_t k = 0; k < canonical.size(); ++k) {
        const double s = canonical[k].y();
        double bulge = 0.0;
        double modulation = 0.0;
        for (int j = 1; j < J; ++j) {
            const double b = std::min(1.0, pose.theta.row(j).norm());
            const double y = rig.joints[j].rest.y();
            bulge += b * std::exp(-std::pow((s - y) / wrinkles.bulge_width, 2));
            modulation += b * std::exp(-std::pow((s - y) / (0.5 * bone), 2));
        }
        const double amp = wrinkles.amplitude *
                           (wrinkles.rest_fraction + (1.0 - wrinkles.rest_fraction) * std::min(1.0, modulation));
        const double env = smoothstep(0.0, taper, s) * (1.0 - smoothstep(top - taper, top, s));
        const double w = env * amp * std::sin(2.0 * kPi * s / wrinkles.wavelength);
        out[k] = wrinkles.offset + wrinkles.bulge * bulge + w;
        if (wrinkle_only) {
            (*wrinkle_only)[k] = w;
        }
    }
    return out;
}

Points sample_surface(const TriangleMesh& mesh, int count, double noise, std::uint64_t seed)
{
    std::vector<double> cumulative(static_cast<std::size_t>(mesh.face_count()));
    double total = 0.0;
    for (int f = 0; f < mesh.face_count(); ++f) {
        total += mesh.face_area(f);
        cumulative[f] = total;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Points out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double pick = uni(rng) * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        const int f = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), mesh.face_count() - 1));
        const double r1 = std::sqrt(uni(rng));
        const double r2 = uni(rng);
        const Face& tri = mesh.face(f);
        Vec3 p = (1.0 - r1) * mesh.vertex(tri[0]) + r1 * (1.0 - r2) * mesh.vertex(tri[1]) +
                 r1 * r2 * mesh.vertex(tri[2]);
        if (noise > 0.0) {
            const double nx = gauss(rng);
            const double ny = gauss(rng);
            const double nz = gauss(rng);
            p += noise * Vec3(nx, ny, nz);
        }
        out.push_back(p);
    }
    return out;
}

SyntheticScans make_synthetic_scans(const RiggedTemplate& rig, std::span<const Pose> poses,
                                    const WrinkleSpec& wrinkles, const ScanSpec& scan)
{
    if (scan.points <= 0 || scan.noise < 0.0 || wrinkles.subdivision < 0 || !(wrinkles.wavelength > 0.0)) {
        throw ConfigError("synthetic scans: points > 0, noise >= 0, subdivision >= 0 and wavelength > 0 required");
    }
    const Subdivision sub = midpoint_subdivide(rig.mesh, wrinkles.subdivision, rig.skin_weights, true);
    Points canonical = sub.mesh.vertices();
    Points normals = sub.mesh.vertex_normals();
    if (wrinkles.round) {
        double lo = 0.0, hi = 0.0;
        for (const Vec3& v : rig.mesh.vertices()) {
            lo = std::min(lo, v.y());
            hi = std::max(hi, v.y());
        }
        const double radius = -lo;
        const double top = hi - radius;
        for (std::size_t k = 0; k < canonical.size(); ++k) {
            const Vec3& v = canonical[k];
            const Vec3 axis(0.0, std::clamp(v.y(), 0.0, top), 0.0);
            normals[k] = (v - axis).normalized();
            canonical[k] = axis + radius * normals[k];
        }
    }

    SyntheticScans out;
    for (std::size_t t = 0; t < poses.size(); ++t) {
        std::vector<double> wrinkle;
        const std::vector<double> disp = synthetic_displacement(rig, canonical, wrinkles, poses[t], &wrinkle);
        Points detailed(canonical.size());
        Points smooth(canonical.size());
        for (std::size_t k = 0; k < canonical.size(); ++k) {
            detailed[k] = canonical[k] + disp[k] * normals[k];
            smooth[k] = canonical[k] + (disp[k] - wrinkle[k]) * normals[k];
        }
        const std::vector<Mat4> T = forward_kinematics(rig, poses[t]);
        const TriangleMesh gt = sub.mesh.with_vertices(lbs_apply(T, detailed, sub.attributes));
        const TriangleMesh sm = sub.mesh.with_vertices(lbs_apply(T, smooth, sub.attributes));

        PointCloudFrame frame;
        frame.frame_index = static_cast<int>(t);
        const std::uint64_t seed = scan.seed * 1000003ULL + t;
        if (!scan.camera) {
            frame.points = sample_surface(gt, scan.points, scan.noise, seed);
        } else {
            // Sample the camera-facing part of the surface only.
            const Vec3 center = gt.bounds().center();
            const Vec3 forward = (center - *scan.camera).normalized();
            std::vector<Face> visible;
            for (int f = 0; f < gt.face_count(); ++f) {
                const Face& tri = gt.face(f);
                const Vec3 c = (gt.vertex(tri[0]) + gt.vertex(tri[1]) + gt.vertex(tri[2])) / 3.0;
                if (gt.face_normal(f).dot(*scan.camera - c) > 0.0) {
                    visible.push_back(tri);
                }
            }
            if (visible.empty()) {
                throw ConfigError("synthetic scans: no surface faces the camera");
            }
            const TriangleMesh part = TriangleMesh::build(gt.vertices(), std::move(visible));
            frame.points = sample_surface(part, scan.points, scan.noise, seed);
            frame.viewpoint = scan.camera;
            for (const Vec3& p : frame.points) {
                frame.depth.push_back(std::abs((p - *scan.camera).dot(forward)));
            }
        }
        double ss = 0.0;
        for (double w : wrinkle) {
            ss += w * w;
        }
        out.wrinkle_rms.push_back(std::sqrt(ss / static_cast<double>(wrinkle.size())));
        out.frames.push_back(std::move(frame));
        out.ground_truth.push_back(gt);
        out.smooth.push_back(sm);
        out.wrinkle.push_back(std::move(wrinkle));
    }
    return out;
}

std::vector<Pose> make_synthetic_poses(int joint_count, int frames, double max_bend, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> bend(0.1, std::max(0.1, max_bend));
    std::uniform_real_distribution<double> twist(-0.2, 0.2);
    std::vector<Pose> poses;
    for (int t = 0; t < frames; ++t) {
        Pose p = Pose::identity(joint_count);
        for (int j = 1; j < joint_count; ++j) {
            const double b = bend(rng);
            const double tw = twist(rng);
            p.theta.row(j) << 0.0, tw, b;
        }
        poses.push_back(p);
    }
    return poses;
}

} // namespace lapfusion

namespace lapfusion {

TriangleMesh make_icosphere(int level, double radius)
{
    if (level < 0)
        throw ConfigError("icosphere level must be non-negative, got " + std::to_string(level));
    if (!(radius > 0.0))
        throw ConfigError("icosphere radius must be positive");
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    Points v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (Vec3& p : v)
        p = radius * p.normalized();
    TriangleMesh mesh = TriangleMesh::build(std::move(v), std::move(f));
    for (int l = 0; l < level; ++l) {
        const TriangleMesh refined = midpoint_subdivide(mesh).mesh;
        Points v = refined.vertices();
        for (Vec3& p : v)
            p = radius * p.normalized();
        mesh = refined.with_vertices(std::move(v));
    }
    return mesh;
}

Points sample_sphere(int count, double radius, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Points out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        Vec3 d;
        do {
            const double x = gauss(rng);
            const double y = gauss(rng);
            const double z = gauss(rng);
            d = Vec3(x, y, z);
        } while (d.squaredNorm() < 1e-12);
        out.push_back(radius * d.normalized());
    }
    return out;
}

TriangleMesh make_random_mesh(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    if (rng() % 2 == 0) {
        const int level = static_cast<int>(rng() % 3);
        const double radius = 0.2 + 2.0 * std::abs(uni(rng));
        const TriangleMesh sphere = make_icosphere(level, radius);
        // Stay well below half the edge length so no face degenerates.
        const double jitter = 0.15 * radius / static_cast<double>(1 << (level + 1));
        Points v = sphere.vertices();
        for (Vec3& p : v) {
            const double x = uni(rng);
            const double y = uni(rng);
            const double z = uni(rng);
            p += jitter * Vec3(x, y, z);
        }
        return sphere.with_vertices(std::move(v));
    }
    const int nx = 3 + static_cast<int>(rng() % 8);
    const int ny = 3 + static_cast<int>(rng() % 8);
    const double h = 0.01 + 0.1 * std::abs(uni(rng));
    Points v;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const double dx = uni(rng);
            const double dy = uni(rng);
            const double dz = uni(rng);
            v.emplace_back(h * (i + 0.2 * dx), h * (j + 0.2 * dy), h * 0.5 * dz);
        }
    std::vector<Face> f;
    for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
            const int a = j * nx + i;
            const int b = a + 1;
            const int c = a + nx;
            const int d = c + 1;
            // Corner cells take the diagonal through the corner so every vertex
            // keeps at least three neighbors.
            const bool corner_ad = (i == 0 && j == 0) || (i == nx - 2 && j == ny - 2);
            const bool corner_bc = (i == nx - 2 && j == 0) || (i == 0 && j == ny - 2);
            const bool flip = rng() % 2 == 0;
            if (corner_ad || (flip && !corner_bc)) {
                f.push_back({a, b, d});
                f.push_back({a, d, c});
            } else {
                f.push_back({a, b, c});
                f.push_back({b, d, c});
            }
        }
    return TriangleMesh::build(std::move(v), std::move(f));
}

} // namespace lapfusion
