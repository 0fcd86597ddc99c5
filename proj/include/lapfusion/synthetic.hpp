#pragma once

#include "lapfusion/pointcloud.hpp"
#include "lapfusion/skinning.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace lapfusion {

/// Closed capsule along +y: a cylinder of `length` with hemispherical caps,
/// triangulated with near-equilateral triangles of roughly `edge` side.
struct RigSpec {
    int joints = 3;
    double radius = 0.05;
    double length = 0.4;
    double edge = 0.02;
    /// Skin-weight falloff half-width as a fraction of the bone length.
    double blend = 0.35;
};

/// Joints sit on the axis at y = j * length / J; bone j covers [y_j, y_j+1)
/// (the first and last bones also own the caps). Weights fall off smoothly with
/// axial distance to each bone, so mid-bone vertices are bound to one bone only.
/// W couples every non-root joint with its chain neighbors; the root row is zero.
RiggedTemplate make_synthetic_rig(const RigSpec& spec);

/// Garment-like pose-dependent detail, in meters, applied along canonical
/// normals of the subdivided template before skinning:
///   offset + bulge * sum_j b_j g_j(s) + taper(s) A(s, theta) sin(2 pi s / wavelength)
/// with s the canonical axial coordinate, b_j = min(1, |theta_j|) the bend of
/// joint j and A growing from amplitude * rest_fraction toward amplitude near
/// bent joints.
struct WrinkleSpec {
    double amplitude = 0.004;
    double wavelength = 0.055;
    double rest_fraction = 0.35;
    double offset = 0.002;
    double bulge = 0.004;
    double bulge_width = 0.04;
    int subdivision = 2;
    /// Move the subdivided canonical vertices onto the analytic capsule (and
    /// displace along its normals) so the ground truth is free of the coarse
    /// template's facets.
    bool round = false;
};

struct ScanSpec {
    int points = 20000;
    double noise = 0.0005;  ///< isotropic Gaussian sigma, meters
    std::uint64_t seed = 1;
    /// When set, only faces facing the camera are sampled and each point gets a
    /// depth value along the camera's viewing axis (aimed at the subject center).
    std::optional<Vec3> camera;
};

struct SyntheticScans {
    std::vector<PointCloudFrame> frames;
    std::vector<TriangleMesh> ground_truth;   ///< subdivided, posed, detailed
    std::vector<TriangleMesh> smooth;         ///< same without the sinusoidal wrinkles
    std::vector<std::vector<double>> wrinkle; ///< per-vertex wrinkle displacement
    /// RMS over vertices of the wrinkle displacement, per frame.
    std::vector<double> wrinkle_rms;
};

/// Per-vertex canonical displacement of the subdivided template for one pose.
/// When `wrinkle_only` is non-null it receives the sinusoidal part alone.
std::vector<double> synthetic_displacement(const RiggedTemplate& rig, const Points& canonical,
                                           const WrinkleSpec& wrinkles, const Pose& pose,
                                           std::vector<double>* wrinkle_only = nullptr);

SyntheticScans make_synthetic_scans(const RiggedTemplate& rig, std::span<const Pose> poses,
                                    const WrinkleSpec& wrinkles, const ScanSpec& scan);

/// Deterministic pose sequence: every non-root joint bends about z by an angle in
/// [0.1, max_bend] with a small twist about y; the root stays fixed.
std::vector<Pose> make_synthetic_poses(int joint_count, int frames, double max_bend, std::uint64_t seed);

/// Icosahedron refined `level` times by midpoint subdivision, every vertex pushed
/// onto the sphere of `radius` about the origin.
TriangleMesh make_icosphere(int level, double radius = 1.0);

/// Uniformly distributed points on the sphere of `radius` about the origin.
Points sample_sphere(int count, double radius, std::uint64_t seed);

/// Irregular test mesh drawn from `seed`: either a jittered icosphere (closed) or
/// a jittered triangulated grid patch with a boundary and mixed diagonals.
TriangleMesh make_random_mesh(std::uint64_t seed);

/// Area-uniform surface samples with optional Gaussian noise.
Points sample_surface(const TriangleMesh& mesh, int count, double noise, std::uint64_t seed);

} // namespace lapfusion
