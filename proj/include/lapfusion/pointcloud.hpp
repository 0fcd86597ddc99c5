#pragma once

#include "lapfusion/mesh.hpp"
#include "lapfusion/parallel.hpp"
#include "lapfusion/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace lapfusion {

/// One scan frame. depth is either empty or holds one non-negative camera
/// distance per point.
struct PointCloudFrame {
    Points points;
    std::vector<double> depth;
    int frame_index = 0;
    /// Camera center, when known (depth scans).
    std::optional<Vec3> viewpoint;

    bool has_depth() const { return !depth.empty(); }
    std::size_t size() const { return points.size(); }
    /// Throws NumericError on non-finite coordinates, IoError-free otherwise.
    void validate() const;
};

struct Neighbor {
    int index = -1;
    double squared_distance = 0.0;
};

/// Exact k-nearest-neighbor search over a fixed point set. Ties in distance are
/// broken by the smaller index, so results match an exhaustive scan exactly.
class KdTree {
public:
    KdTree() = default;
    /// Keeps its own copy of the points. Throws NumericError on an empty set.
    explicit KdTree(Points points);

    std::vector<Neighbor> knn(const Vec3& query, int k) const;
    Neighbor nearest(const Vec3& query) const;

    const Points& points() const { return points_; }
    int size() const { return static_cast<int>(points_.size()); }

private:
    struct Node {
        int begin = 0;
        int end = 0;
        int axis = -1;  ///< -1 for a leaf
        double split = 0.0;
        int left = -1;
        int right = -1;
    };

    int build(int begin, int end);

    Points points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

/// k nearest indices of `query` in `points`, ascending by distance.
std::vector<int> knn(std::span<const Vec3> points, const Vec3& query, int k);

/// Height field h(u, v) = a u^2 + b uv + c v^2 + d u + e v over the tangent
/// plane at `origin`. frame columns are (t1, t2, n).
struct LocalQuadric {
    Vec3 origin = Vec3::Zero();
    Mat3 frame = Mat3::Identity();
    Eigen::Matrix<double, 5, 1> coeffs = Eigen::Matrix<double, 5, 1>::Zero();
    /// Weighted RMS of the height residuals.
    double residual = 0.0;

    Vec3 normal() const { return frame.col(2); }
    /// Mean-curvature normal 2H n from the second-order terms. The sign does not
    /// depend on the orientation of frame: a sphere always yields an outward vector.
    Vec3 laplacian() const { return -2.0 * (coeffs[0] + coeffs[2]) * normal(); }
};

/// Weighted least-squares quadric over the k nearest neighbors of
/// points[center] (the center included). Gaussian weights exp(-d^2 / h^2) with h
/// the distance to the k-th neighbor. When `orient` is given the frame normal is
/// flipped to have a non-negative dot product with it; otherwise its largest
/// component is made positive. Throws NumericError for k < 6 or a rank-deficient
/// neighborhood.
LocalQuadric fit_local_quadric(const KdTree& tree, int center, int k,
                               const std::optional<Vec3>& orient = std::nullopt);
LocalQuadric fit_local_quadric(std::span<const Vec3> points, int center, int k);

struct PointLaplacian {
    Points delta;    ///< zero where flagged
    Points normals;  ///< fitted normals, oriented as requested
    std::vector<std::uint8_t> flagged;
    int flagged_count = 0;
};

struct ApproxLaplacianOptions {
    int k = 25;
    /// Per-point orientation hints (e.g. base-mesh normals); empty to skip.
    Points orient_normals;
    /// Orient normals toward this viewpoint when no per-point hints are given.
    std::optional<Vec3> viewpoint;
    Exec exec = Exec::Parallel;
};

/// Laplace-Beltrami of the coordinate functions at every point via local
/// quadric fits. Points whose fit fails are flagged, not thrown.
PointLaplacian approx_laplacian(const PointCloudFrame& frame, const ApproxLaplacianOptions& options);
PointLaplacian approx_laplacian(const KdTree& tree, const ApproxLaplacianOptions& options);

/// Mean over `a` of the squared distance to the nearest point of `b`.
double chamfer(std::span<const Vec3> a, const KdTree& b, Exec exec = Exec::Parallel);
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, Exec exec = Exec::Parallel);
/// Mean over `a` of the squared distance to the surface of `b`.
double chamfer(std::span<const Vec3> a, const SurfaceLocator& b, Exec exec = Exec::Parallel);
double chamfer(std::span<const Vec3> a, const TriangleMesh& b, Exec exec = Exec::Parallel);

constexpr double kDefaultDepthFalloff = 2.0;

/// exp(-c |z|); 1 when depth is absent.
double selective_weight(std::optional<double> depth, double c = kDefaultDepthFalloff);
std::vector<double> selective_weights(const PointCloudFrame& frame, double c = kDefaultDepthFalloff);

} // namespace lapfusion
