#include "lapfusion/pointcloud.hpp"

#include "lapfusion/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>

namespace lapfusion {

namespace {

constexpr int kLeafSize = 8;

bool closer(const Neighbor& a, const Neighbor& b)
{
    return a.squared_distance < b.squared_distance ||
           (a.squared_distance == b.squared_distance && a.index < b.index);
}

struct Farther {
    bool operator()(const Neighbor& a, const Neighbor& b) const { return closer(a, b); }
};

using NeighborHeap = std::priority_queue<Neighbor, std::vector<Neighbor>, Farther>;

} // namespace

void PointCloudFrame::validate() const
{
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!points[i].allFinite()) {
            throw NumericError("point " + std::to_string(i) + " of frame " + std::to_string(frame_index) +
                               " is not finite");
        }
    }
    if (!depth.empty()) {
        if (depth.size() != points.size()) {
            throw NumericError("frame " + std::to_string(frame_index) + " has " + std::to_string(depth.size()) +
                               " depth values for " + std::to_string(points.size()) + " points");
        }
        for (std::size_t i = 0; i < depth.size(); ++i) {
            if (!(depth[i] >= 0.0) || !std::isfinite(depth[i])) {
                throw NumericError("depth " + std::to_string(i) + " of frame " + std::to_string(frame_index) +
                                   " must be finite and non-negative");
            }
        }
    }
}

KdTree::KdTree(Points points)
    : points_(std::move(points))
{
    if (points_.empty()) {
        throw NumericError("KdTree: the point set is empty");
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<int>(points_.size()));
}

int KdTree::build(int begin, int end)
{
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end, -1, 0.0, -1, -1});
    if (end - begin <= kLeafSize) {
        return id;
    }
    Eigen::AlignedBox3d box;
    for (int i = begin; i < end; ++i) {
        box.extend(points_[order_[i]]);
    }
    int axis = 0;
    box.diagonal().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double pa = points_[a][axis];
        const double pb = points_[b][axis];
        return pa < pb || (pa == pb && a < b);
    });
    const double split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    Node& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, int k) const
{
    if (k <= 0) {
        return {};
    }
    if (k > size()) {
        throw NumericError("knn: k = " + std::to_string(k) + " exceeds the " + std::to_string(size()) + " points");
    }
    NeighborHeap heap;
    std::vector<int> stack{0};
    std::vector<double> gap{0.0};
    while (!stack.empty()) {
        const int id = stack.back();
        const double node_gap = gap.back();
        stack.pop_back();
        gap.pop_back();
        if (static_cast<int>(heap.size()) == k && node_gap > heap.top().squared_distance) {
            continue;
        }
        const Node& node = nodes_[id];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const Neighbor cand{order_[i], (points_[order_[i]] - query).squaredNorm()};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push(cand);
                } else if (closer(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const int near = diff < 0.0 ? node.left : node.right;
        const int far = diff < 0.0 ? node.right : node.left;
        // Far side first on the stack so the near side is searched first.
        stack.push_back(far);
        gap.push_back(std::max(node_gap, diff * diff));
        stack.push_back(near);
        gap.push_back(node_gap);
    }
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = heap.top();
        heap.pop();
    }
    return out;
}

Neighbor KdTree::nearest(const Vec3& query) const
{
    return knn(query, 1).front();
}

std::vector<int> knn(std::span<const Vec3> points, const Vec3& query, int k)
{
    const KdTree tree(Points(points.begin(), points.end()));
    std::vector<int> out;
    for (const Neighbor& n : tree.knn(query, k)) {
        out.push_back(n.index);
    }
    return out;
}

LocalQuadric fit_local_quadric(const KdTree& tree, int center, int k, const std::optional<Vec3>& orient)
{
    if (k < 6) {
        throw NumericError("fit_local_quadric: k = " + std::to_string(k) + " but at least 6 neighbors are needed");
    }
    if (center < 0 || center >= tree.size()) {
        throw NumericError("fit_local_quadric: center index " + std::to_string(center) + " out of range");
    }
    const Points& pts = tree.points();
    const Vec3 origin = pts[center];
    const std::vector<Neighbor> nbrs = tree.knn(origin, k);
    const double h2 = nbrs.back().squared_distance;
    if (!(h2 > 0.0)) {
        throw NumericError("fit_local_quadric: neighborhood of point " + std::to_string(center) +
                           " collapses to a single location");
    }
    const double h = std::sqrt(h2);

    Vec3 mean = Vec3::Zero();
    for (const Neighbor& n : nbrs) {
        mean += pts[n.index];
    }
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const Neighbor& n : nbrs) {
        const Vec3 d = pts[n.index] - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 normal = eig.eigenvectors().col(0).normalized();
    if (orient) {
        if (normal.dot(*orient) < 0.0) {
            normal = -normal;
        }
    } else {
        Eigen::Index dominant = 0;
        normal.cwiseAbs().maxCoeff(&dominant);
        if (normal[dominant] < 0.0) {
            normal = -normal;
        }
    }
    const Vec3 t1 = (eig.eigenvectors().col(2) - eig.eigenvectors().col(2).dot(normal) * normal).normalized();
    const Vec3 t2 = normal.cross(t1);

    Eigen::Matrix<double, Eigen::Dynamic, 5> A(static_cast<Eigen::Index>(nbrs.size()), 5);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(nbrs.size()));
    Eigen::VectorXd sw(static_cast<Eigen::Index>(nbrs.size()));
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
        const Vec3 d = (pts[nbrs[i].index] - origin) / h;
        const double u = d.dot(t1);
        const double v = d.dot(t2);
        const double s = std::exp(-nbrs[i].squared_distance / h2);
        const auto r = static_cast<Eigen::Index>(i);
        sw[r] = std::sqrt(s);
        A.row(r) << u * u, u * v, v * v, u, v;
        A.row(r) *= sw[r];
        rhs[r] = sw[r] * d.dot(normal);
    }
    Eigen::ColPivHouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 5>> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < 5) {
        throw NumericError("fit_local_quadric: degenerate neighborhood around point " + std::to_string(center));
    }
    const Eigen::Matrix<double, 5, 1> x = qr.solve(rhs);

    LocalQuadric q;
    q.origin = origin;
    q.frame.col(0) = t1;
    q.frame.col(1) = t2;
    q.frame.col(2) = normal;
    q.coeffs << x[0] / h, x[1] / h, x[2] / h, x[3], x[4];
    const Eigen::VectorXd res = (A * x - rhs) * h;
    q.residual = std::sqrt(res.squaredNorm() / sw.squaredNorm());
    return q;
}

LocalQuadric fit_local_quadric(std::span<const Vec3> points, int center, int k)
{
    return fit_local_quadric(KdTree(Points(points.begin(), points.end())), center, k);
}

PointLaplacian approx_laplacian(const KdTree& tree, const ApproxLaplacianOptions& options)
{
    const int n = tree.size();
    if (options.k < 6 || options.k > n) {
        throw NumericError("approx_laplacian: k = " + std::to_string(options.k) + " must lie in [6, " +
                           std::to_string(n) + "]");
    }
    if (!options.orient_normals.empty() && static_cast<int>(options.orient_normals.size()) != n) {
        throw NumericError("approx_laplacian: orientation hints do not match the point count");
    }
    PointLaplacian out;
    out.delta.assign(static_cast<std::size_t>(n), Vec3::Zero());
    out.normals.assign(static_cast<std::size_t>(n), Vec3::Zero());
    out.flagged.assign(static_cast<std::size_t>(n), 0);
    parallel_for_dynamic(n, options.exec, [&](std::ptrdiff_t i) {
        std::optional<Vec3> hint;
        if (!options.orient_normals.empty()) {
            hint = options.orient_normals[static_cast<std::size_t>(i)];
        } else if (options.viewpoint) {
            hint = *options.viewpoint - tree.points()[static_cast<std::size_t>(i)];
        }
        try {
            const LocalQuadric q = fit_local_quadric(tree, static_cast<int>(i), options.k, hint);
            const Vec3 d = q.laplacian();
            if (d.allFinite()) {
                out.delta[static_cast<std::size_t>(i)] = d;
                out.normals[static_cast<std::size_t>(i)] = q.normal();
                return;
            }
        } catch (const NumericError&) {
        }
        out.flagged[static_cast<std::size_t>(i)] = 1;
    });
    out.flagged_count = static_cast<int>(std::count(out.flagged.begin(), out.flagged.end(), 1));
    return out;
}

PointLaplacian approx_laplacian(const PointCloudFrame& frame, const ApproxLaplacianOptions& options)
{
    frame.validate();
    return approx_laplacian(KdTree(frame.points), options);
}

namespace {

template <typename Dist>
double mean_of(std::size_t n, Exec exec, Dist&& dist)
{
    if (n == 0) {
        throw NumericError("chamfer: the first point set is empty");
    }
    std::vector<double> d(n);
    parallel_for_dynamic(static_cast<std::ptrdiff_t>(n), exec,
                         [&](std::ptrdiff_t i) { d[static_cast<std::size_t>(i)] = dist(static_cast<std::size_t>(i)); });
    double sum = 0.0;
    for (double x : d) {
        sum += x;
    }
    return sum / static_cast<double>(n);
}

} // namespace

double chamfer(std::span<const Vec3> a, const KdTree& b, Exec exec)
{
    return mean_of(a.size(), exec, [&](std::size_t i) { return b.nearest(a[i]).squared_distance; });
}

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, Exec exec)
{
    if (b.empty()) {
        throw NumericError("chamfer: the second point set is empty");
    }
    return chamfer(a, KdTree(Points(b.begin(), b.end())), exec);
}

double chamfer(std::span<const Vec3> a, const SurfaceLocator& b, Exec exec)
{
    return mean_of(a.size(), exec, [&](std::size_t i) { return b.project(a[i]).squared_distance; });
}

double chamfer(std::span<const Vec3> a, const TriangleMesh& b, Exec exec)
{
    if (b.face_count() == 0) {
        throw NumericError("chamfer: the mesh has no faces");
    }
    return chamfer(a, SurfaceLocator(b), exec);
}

double selective_weight(std::optional<double> depth, double c)
{
    if (!depth) {
        return 1.0;
    }
    return std::exp(-c * std::abs(*depth));
}

std::vector<double> selective_weights(const PointCloudFrame& frame, double c)
{
    std::vector<double> mu(frame.size(), 1.0);
    if (frame.has_depth()) {
        for (std::size_t i = 0; i < mu.size(); ++i) {
            mu[i] = selective_weight(frame.depth[i], c);
        }
    }
    return mu;
}

} // namespace lapfusion
