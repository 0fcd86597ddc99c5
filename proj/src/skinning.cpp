#include "lapfusion/skinning.hpp"

#include "lapfusion/error.hpp"
#include "lapfusion/io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lapfusion {

namespace {

constexpr double kWeightTolerance = 1e-6;

Mat4 rigid(const Mat3& r, const Vec3& t)
{
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return m;
}

class Fnv1a {
public:
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ = (h_ ^ p[i]) * 1099511628211ULL;
        }
    }
    template <typename T>
    void value(const T& v)
    {
        bytes(&v, sizeof(T));
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 14695981039346656037ULL;
};

} // namespace

void RiggedTemplate::validate() const
{
    const int J = joint_count();
    const int K = mesh.vertex_count();
    if (J == 0) {
        throw TopologyError("rig has no joints");
    }
    if (joints[0].parent != -1) {
        throw TopologyError("joint 0 must be the root (parent -1)");
    }
    for (int j = 1; j < J; ++j) {
        if (joints[j].parent < 0 || joints[j].parent >= j) {
            throw TopologyError("joint " + std::to_string(j) + " must have a parent among joints 0.." +
                                std::to_string(j - 1));
        }
    }
    if (skin_weights.rows() != K || skin_weights.cols() != J) {
        throw TopologyError("skin weights are " + std::to_string(skin_weights.rows()) + "x" +
                            std::to_string(skin_weights.cols()) + ", expected " + std::to_string(K) + "x" +
                            std::to_string(J));
    }
    for (int k = 0; k < K; ++k) {
        check_skin_weights(skin_weights.row(k).transpose(), k);
    }
    if (association.rows() != J || association.cols() != J) {
        throw TopologyError("joint association map must be " + std::to_string(J) + "x" + std::to_string(J));
    }
    if ((association.array() < 0.0).any() || (association.array() > 1.0).any() || !association.allFinite()) {
        throw NumericError("joint association entries must lie in [0, 1]");
    }
}

SurfaceSample RiggedTemplate::sample(int face, const Vec3& bary) const
{
    const Face& f = mesh.face(face);
    SurfaceSample s;
    s.face = face;
    s.bary = bary;
    s.skin_weights = bary[0] * skin_weights.row(f[0]).transpose() + bary[1] * skin_weights.row(f[1]).transpose() +
                     bary[2] * skin_weights.row(f[2]).transpose();
    s.skin_weights = s.skin_weights.cwiseMax(0.0);
    s.skin_weights /= s.skin_weights.sum();
    return s;
}

std::uint64_t RiggedTemplate::hash() const
{
    Fnv1a h;
    h.value(mesh.vertex_count());
    for (const Vec3& v : mesh.vertices()) {
        h.bytes(v.data(), 3 * sizeof(double));
    }
    for (const Face& f : mesh.faces()) {
        h.bytes(f.data(), 3 * sizeof(int));
    }
    for (const Joint& j : joints) {
        h.bytes(j.name.data(), j.name.size());
        h.value(j.parent);
        h.bytes(j.rest.data(), 3 * sizeof(double));
    }
    h.bytes(skin_weights.data(), static_cast<std::size_t>(skin_weights.size()) * sizeof(double));
    h.bytes(association.data(), static_cast<std::size_t>(association.size()) * sizeof(double));
    return h.digest();
}

Pose Pose::identity(int joint_count)
{
    Pose p;
    p.theta = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(joint_count, 3);
    return p;
}

void Pose::validate(int expected_joints) const
{
    if (joint_count() != expected_joints) {
        throw NumericError("pose has " + std::to_string(joint_count()) + " joints, the rig has " +
                           std::to_string(expected_joints));
    }
    if (!theta.allFinite() || !translation.allFinite()) {
        throw NumericError("pose contains non-finite values");
    }
    for (int j = 0; j < joint_count(); ++j) {
        if (theta.row(j).norm() >= 2.0 * std::numbers::pi) {
            throw NumericError("axis-angle magnitude of joint " + std::to_string(j) + " must be below 2 pi");
        }
    }
}

Mat3 axis_angle_matrix(const Vec3& axis_angle)
{
    const double angle = axis_angle.norm();
    if (angle == 0.0) {
        return Mat3::Identity();
    }
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

namespace {

std::vector<Mat4> global_transforms(const RiggedTemplate& rig, const Pose& pose)
{
    pose.validate(rig.joint_count());
    const int J = rig.joint_count();
    std::vector<Mat4> G(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        const Mat3 R = axis_angle_matrix(pose.theta.row(j).transpose());
        const int p = rig.joints[j].parent;
        if (p < 0) {
            G[j] = rigid(R, rig.joints[j].rest + pose.translation);
        } else {
            G[j] = G[p] * rigid(R, rig.joints[j].rest - rig.joints[p].rest);
        }
    }
    return G;
}

} // namespace

std::vector<Mat4> forward_kinematics(const RiggedTemplate& rig, const Pose& pose)
{
    std::vector<Mat4> T = global_transforms(rig, pose);
    for (int j = 0; j < rig.joint_count(); ++j) {
        T[j] = T[j] * rigid(Mat3::Identity(), -rig.joints[j].rest);
    }
    return T;
}

Points posed_joints(const RiggedTemplate& rig, const Pose& pose)
{
    const std::vector<Mat4> G = global_transforms(rig, pose);
    Points out;
    for (const Mat4& g : G) {
        out.push_back(g.topRightCorner<3, 1>());
    }
    return out;
}

void check_skin_weights(const Eigen::Ref<const Eigen::VectorXd>& w, std::ptrdiff_t row)
{
    const double sum = w.sum();
    if ((w.array() < 0.0).any() || !(std::abs(sum - 1.0) <= kWeightTolerance)) {
        throw NumericError("skin weights of row " + std::to_string(row) + " must be non-negative and sum to 1 (sum " +
                           format_double(sum) + ")");
    }
}

Mat4 blend_transforms(std::span<const Mat4> transforms, const Eigen::Ref<const Eigen::VectorXd>& w)
{
    if (static_cast<Eigen::Index>(transforms.size()) != w.size()) {
        throw NumericError("blend_transforms: " + std::to_string(w.size()) + " weights for " +
                           std::to_string(transforms.size()) + " joints");
    }
    check_skin_weights(w, -1);
    Mat4 m = Mat4::Zero();
    for (std::size_t j = 0; j < transforms.size(); ++j) {
        const double wj = w[static_cast<Eigen::Index>(j)];
        if (wj != 0.0) {
            m += wj * transforms[j];
        }
    }
    return m;
}

Points lbs_apply(std::span<const Mat4> transforms, std::span<const Vec3> vertices, const Eigen::MatrixXd& weights,
                 Exec exec)
{
    if (weights.rows() != static_cast<Eigen::Index>(vertices.size()) ||
        weights.cols() != static_cast<Eigen::Index>(transforms.size())) {
        throw NumericError("lbs_apply: weights are " + std::to_string(weights.rows()) + "x" +
                           std::to_string(weights.cols()) + " for " + std::to_string(vertices.size()) +
                           " vertices and " + std::to_string(transforms.size()) + " joints");
    }
    for (Eigen::Index k = 0; k < weights.rows(); ++k) {
        check_skin_weights(weights.row(k).transpose(), k);
    }
    Points out(vertices.size());
    parallel_for(static_cast<std::ptrdiff_t>(vertices.size()), exec, [&](std::ptrdiff_t k) {
        Mat4 m = Mat4::Zero();
        for (std::size_t j = 0; j < transforms.size(); ++j) {
            const double wj = weights(k, static_cast<Eigen::Index>(j));
            if (wj != 0.0) {
                m += wj * transforms[j];
            }
        }
        out[static_cast<std::size_t>(k)] = m.topLeftCorner<3, 3>() * vertices[static_cast<std::size_t>(k)] +
                                           m.topRightCorner<3, 1>();
    });
    return out;
}

Points lbs_apply(const RiggedTemplate& rig, const Pose& pose, std::span<const Vec3> vertices,
                 const Eigen::MatrixXd& weights, Exec exec)
{
    return lbs_apply(forward_kinematics(rig, pose), vertices, weights, exec);
}

Points lbs_apply(const RiggedTemplate& rig, const Pose& pose, std::span<const Vec3> vertices, Exec exec)
{
    return lbs_apply(rig, pose, vertices, rig.skin_weights, exec);
}

Vec3 lbs_rotate(std::span<const Mat4> transforms, const Eigen::Ref<const Eigen::VectorXd>& w, const Vec3& v)
{
    return blend_transforms(transforms, w).topLeftCorner<3, 3>() * v;
}

Vec3 lbs_rotate(const RiggedTemplate& rig, const Pose& pose, const SurfaceSample& sample, const Vec3& v)
{
    return lbs_rotate(forward_kinematics(rig, pose), sample.skin_weights, v);
}

Eigen::VectorXd pose_mask(const RiggedTemplate& rig, const Eigen::Ref<const Eigen::VectorXd>& weights)
{
    if (weights.size() != rig.joint_count()) {
        throw NumericError("pose_feature: " + std::to_string(weights.size()) + " weights for " +
                           std::to_string(rig.joint_count()) + " joints");
    }
    const Eigen::VectorXd a = rig.association * weights;
    return (a.array() > 0.0).cast<double>();
}

Eigen::Matrix<double, Eigen::Dynamic, 3> pose_feature(const RiggedTemplate& rig,
                                                      const Eigen::Ref<const Eigen::VectorXd>& weights,
                                                      const Pose& pose)
{
    pose.validate(rig.joint_count());
    return pose_mask(rig, weights).asDiagonal() * pose.theta;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> pose_feature(const RiggedTemplate& rig, const SurfaceSample& sample,
                                                      const Pose& pose)
{
    return pose_feature(rig, sample.skin_weights, pose);
}

Pose interpolate(const Pose& a, const Pose& b, double t)
{
    if (a.joint_count() != b.joint_count()) {
        throw NumericError("interpolate: poses have different joint counts");
    }
    Pose p;
    p.theta = (1.0 - t) * a.theta + t * b.theta;
    p.translation = (1.0 - t) * a.translation + t * b.translation;
    return p;
}

RiggedTemplate read_rig(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "lapfusion-rig") {
            throw IoError(path.string() + ": not a rig file");
        }
        Points verts;
        for (const auto& v : j.at("vertices")) {
            verts.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
        }
        std::vector<Face> faces;
        for (const auto& f : j.at("faces")) {
            faces.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
        }
        RiggedTemplate rig;
        rig.mesh = TriangleMesh::build(std::move(verts), std::move(faces));
        for (const auto& jt : j.at("joints")) {
            Joint joint;
            joint.name = jt.at("name").get<std::string>();
            joint.parent = jt.at("parent").get<int>();
            const auto& r = jt.at("rest");
            joint.rest = Vec3(r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>());
            rig.joints.push_back(joint);
        }
        const int J = rig.joint_count();
        const int K = rig.mesh.vertex_count();
        const auto& rows = j.at("weights");
        if (static_cast<int>(rows.size()) != K) {
            throw IoError(path.string() + ": " + std::to_string(rows.size()) + " weight rows for " +
                          std::to_string(K) + " vertices");
        }
        rig.skin_weights = Eigen::MatrixXd::Zero(K, J);
        for (int k = 0; k < K; ++k) {
            for (const auto& entry : rows[static_cast<std::size_t>(k)]) {
                const int jj = entry.at(0).get<int>();
                if (jj < 0 || jj >= J) {
                    throw IoError(path.string() + ": weight row " + std::to_string(k) + " names joint " +
                                  std::to_string(jj));
                }
                rig.skin_weights(k, jj) = entry.at(1).get<double>();
            }
        }
        const auto& W = j.at("association");
        rig.association = Eigen::MatrixXd::Zero(J, J);
        if (static_cast<int>(W.size()) != J) {
            throw IoError(path.string() + ": association map must have " + std::to_string(J) + " rows");
        }
        for (int r = 0; r < J; ++r) {
            if (static_cast<int>(W[static_cast<std::size_t>(r)].size()) != J) {
                throw IoError(path.string() + ": association row " + std::to_string(r) + " must have " +
                              std::to_string(J) + " entries");
            }
            for (int c = 0; c < J; ++c) {
                rig.association(r, c) = W[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
            }
        }
        rig.validate();
        return rig;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_rig(const std::filesystem::path& path, const RiggedTemplate& rig)
{
    nlohmann::json j;
    j["format"] = "lapfusion-rig";
    j["version"] = 1;
    auto& verts = j["vertices"] = nlohmann::json::array();
    for (const Vec3& v : rig.mesh.vertices()) {
        verts.push_back({v.x(), v.y(), v.z()});
    }
    auto& faces = j["faces"] = nlohmann::json::array();
    for (const Face& f : rig.mesh.faces()) {
        faces.push_back({f[0], f[1], f[2]});
    }
    auto& joints = j["joints"] = nlohmann::json::array();
    for (const Joint& jt : rig.joints) {
        joints.push_back({{"name", jt.name}, {"parent", jt.parent}, {"rest", {jt.rest.x(), jt.rest.y(), jt.rest.z()}}});
    }
    auto& rows = j["weights"] = nlohmann::json::array();
    for (Eigen::Index k = 0; k < rig.skin_weights.rows(); ++k) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < rig.skin_weights.cols(); ++c) {
            if (rig.skin_weights(k, c) != 0.0) {
                row.push_back({c, rig.skin_weights(k, c)});
            }
        }
        rows.push_back(row);
    }
    auto& W = j["association"] = nlohmann::json::array();
    for (Eigen::Index r = 0; r < rig.association.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < rig.association.cols(); ++c) {
            row.push_back(rig.association(r, c));
        }
        W.push_back(row);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(1) << '\n';
    if (!out) {
        throw IoError("failed while writing " + path.string());
    }
}

std::vector<Pose> read_poses(const std::filesystem::path& path, int joint_count)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<Pose> poses;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        std::istringstream ls(line);
        std::vector<double> values;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(tok, &used));
                if (used != tok.size()) {
                    throw std::invalid_argument(tok);
                }
            } catch (const std::exception&) {
                throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
            }
        }
        const auto n = static_cast<int>(values.size());
        if (n != 3 * joint_count && n != 3 * joint_count + 3) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(3 * joint_count) + " or " + std::to_string(3 * joint_count + 3) +
                          " values, found " + std::to_string(n));
        }
        Pose p = Pose::identity(joint_count);
        for (int j = 0; j < joint_count; ++j) {
            p.theta.row(j) << values[3 * j], values[3 * j + 1], values[3 * j + 2];
        }
        if (n == 3 * joint_count + 3) {
            p.translation << values[n - 3], values[n - 2], values[n - 1];
        }
        p.validate(joint_count);
        poses.push_back(p);
    }
    return poses;
}

void write_poses(const std::filesystem::path& path, std::span<const Pose> poses)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const Pose& p : poses) {
        std::string line;
        for (int j = 0; j < p.joint_count(); ++j) {
            for (int c = 0; c < 3; ++c) {
                line += (line.empty() ? "" : " ") + format_double(p.theta(j, c));
            }
        }
        if (!p.translation.isZero(0.0)) {
            for (int c = 0; c < 3; ++c) {
                line += " " + format_double(p.translation[c]);
            }
        }
        out << line << '\n';
    }
    if (!out) {
        throw IoError("failed while writing " + path.string());
    }
}

} // namespace lapfusion
