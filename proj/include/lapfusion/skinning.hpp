#pragma once

#include "lapfusion/mesh.hpp"
#include "lapfusion/parallel.hpp"
#include "lapfusion/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lapfusion {

struct Joint {
    std::string name;
    int parent = -1;  ///< -1 for the root (joint 0)
    Vec3 rest = Vec3::Zero();
};

/// Canonical-pose mesh with a joint tree, per-vertex skinning weights (K x J,
/// rows sum to 1) and the joint association map W (J x J, entries in [0, 1]).
struct RiggedTemplate {
    TriangleMesh mesh;
    std::vector<Joint> joints;
    Eigen::MatrixXd skin_weights;
    Eigen::MatrixXd association;

    int joint_count() const { return static_cast<int>(joints.size()); }
    /// Throws TopologyError/NumericError when any invariant is violated.
    void validate() const;
    /// Barycentric location on the canonical mesh with re-normalized weights.
    SurfaceSample sample(int face, const Vec3& bary) const;
    /// Content hash of geometry, joints, weights and W (FNV-1a over the raw values).
    std::uint64_t hash() const;
};

/// Per-joint axis-angle rotations (J x 3, radians) and a root translation.
struct Pose {
    Eigen::Matrix<double, Eigen::Dynamic, 3> theta;
    Vec3 translation = Vec3::Zero();

    static Pose identity(int joint_count);
    int joint_count() const { return static_cast<int>(theta.rows()); }
    /// Throws NumericError for a joint-count mismatch, non-finite values or an
    /// axis-angle magnitude of 2 pi or more.
    void validate(int expected_joints) const;
};

Mat3 axis_angle_matrix(const Vec3& axis_angle);

/// T_j taking rest-pose points to posed space for bone j:
/// G_0 = [R_0 | J_0 + t], G_j = G_parent [R_j | J_j - J_parent], T_j = G_j [I | -J_j].
std::vector<Mat4> forward_kinematics(const RiggedTemplate& rig, const Pose& pose);

/// Posed joint locations (translation part of G_j).
Points posed_joints(const RiggedTemplate& rig, const Pose& pose);

/// Throws NumericError unless w is non-negative and sums to 1 within 1e-6.
void check_skin_weights(const Eigen::Ref<const Eigen::VectorXd>& w, std::ptrdiff_t row);

/// sum_j w_j T_j (weights checked).
Mat4 blend_transforms(std::span<const Mat4> transforms, const Eigen::Ref<const Eigen::VectorXd>& w);

/// v' = (sum_j w_j T_j) v for every row of `weights` (one row per vertex).
Points lbs_apply(std::span<const Mat4> transforms, std::span<const Vec3> vertices, const Eigen::MatrixXd& weights,
                 Exec exec = Exec::Parallel);
Points lbs_apply(const RiggedTemplate& rig, const Pose& pose, std::span<const Vec3> vertices,
                 const Eigen::MatrixXd& weights, Exec exec = Exec::Parallel);
/// Template vertices with the template's own weights.
Points lbs_apply(const RiggedTemplate& rig, const Pose& pose, std::span<const Vec3> vertices,
                 Exec exec = Exec::Parallel);

/// Applies only the blended 3 x 3 part of sum_j w_j T_j.
Vec3 lbs_rotate(std::span<const Mat4> transforms, const Eigen::Ref<const Eigen::VectorXd>& w, const Vec3& v);
Vec3 lbs_rotate(const RiggedTemplate& rig, const Pose& pose, const SurfaceSample& sample, const Vec3& v);

/// Row j of theta kept iff (W w)_j > 0, zeroed otherwise.
Eigen::Matrix<double, Eigen::Dynamic, 3> pose_feature(const RiggedTemplate& rig,
                                                      const Eigen::Ref<const Eigen::VectorXd>& weights,
                                                      const Pose& pose);
Eigen::Matrix<double, Eigen::Dynamic, 3> pose_feature(const RiggedTemplate& rig, const SurfaceSample& sample,
                                                      const Pose& pose);
/// 0/1 row mask ceil(W w), used to build pose features for many poses at once.
Eigen::VectorXd pose_mask(const RiggedTemplate& rig, const Eigen::Ref<const Eigen::VectorXd>& weights);

/// Linear interpolation of two poses (per-joint axis-angle and translation).
Pose interpolate(const Pose& a, const Pose& b, double t);

/// Rig text format (JSON): {"format": "lapfusion-rig", "version": 1,
/// "vertices": [[x,y,z],...], "faces": [[a,b,c],...],
/// "joints": [{"name", "parent", "rest": [x,y,z]}, ...],
/// "weights": [[[joint, w], ...], ...] (one sparse row per vertex),
/// "association": [[...J values...], ...]}.
RiggedTemplate read_rig(const std::filesystem::path& path);
void write_rig(const std::filesystem::path& path, const RiggedTemplate& rig);

/// One pose per line: 3J axis-angle values, optionally followed by 3 root
/// translation values. Blank lines and lines starting with '#' are skipped.
std::vector<Pose> read_poses(const std::filesystem::path& path, int joint_count);
void write_poses(const std::filesystem::path& path, std::span<const Pose> poses);

} // namespace lapfusion
