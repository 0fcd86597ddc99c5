#pragma once

#include "lapfusion/parallel.hpp"
#include "lapfusion/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace lapfusion {

struct Edge {
    int v0 = -1; ///< smaller endpoint
    int v1 = -1;
    std::array<int, 2> faces{-1, -1}; ///< faces[1] == -1 on a boundary edge
    bool is_boundary() const { return faces[1] < 0; }
};

/// Indexed triangle surface. Positions are per-instance; the connectivity
/// (faces, one-ring lists, edge table) is immutable and shared between meshes
/// created through with_vertices(), so posing a mesh never rebuilds adjacency.
class TriangleMesh {
public:
    TriangleMesh() = default;

    /// Validates indices, rejects faces with repeated corners, zero-area faces and
    /// edges shared by more than two faces. Throws TopologyError.
    static TriangleMesh build(Points vertices, std::vector<Face> faces);

    /// Same connectivity, new positions. Throws TopologyError on a size mismatch.
    TriangleMesh with_vertices(Points vertices) const;

    int vertex_count() const { return static_cast<int>(vertices_.size()); }
    int face_count() const;
    bool empty() const { return vertices_.empty(); }

    const Points& vertices() const { return vertices_; }
    const Vec3& vertex(int k) const { return vertices_[static_cast<std::size_t>(k)]; }
    const std::vector<Face>& faces() const;
    const Face& face(int f) const { return faces()[static_cast<std::size_t>(f)]; }

    /// One-ring of vertex k in ascending index order.
    std::span<const int> neighbors(int k) const;
    int valence(int k) const { return static_cast<int>(neighbors(k).size()); }

    const std::vector<Edge>& edges() const;
    /// Index into edges() of {a, b}, or -1.
    int edge_index(int a, int b) const;
    bool is_boundary_vertex(int k) const;
    bool has_boundary() const;

    /// True when both meshes share vertex count and the identical face list.
    bool same_topology(const TriangleMesh& other) const;

    double face_area(int f) const;
    double total_area() const;
    Vec3 face_normal(int f) const;
    /// Area-weighted vertex normals (unit length).
    Points vertex_normals() const;
    Eigen::AlignedBox3d bounds() const;
    double bbox_diagonal() const { return bounds().diagonal().norm(); }

private:
    struct Topology;
    TriangleMesh(Points vertices, std::shared_ptr<const Topology> topology);

    Points vertices_;
    std::shared_ptr<const Topology> topology_;
};

/// Barycentric location on a triangle of a mesh. When produced on the canonical
/// template it also carries the interpolated skinning weights.
struct SurfaceSample {
    int face = -1;
    Vec3 bary = Vec3::Zero();
    Eigen::VectorXd skin_weights;

    Vec3 position(const TriangleMesh& mesh) const;
};

struct Projection {
    int face = -1;
    Vec3 bary = Vec3::Zero();
    Vec3 point = Vec3::Zero();
    double squared_distance = 0.0;
    double distance() const;
};

/// Closest point on triangle (a, b, c) to p, with barycentric weights.
Projection closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Axis-aligned bounding-volume hierarchy over the faces of one mesh for
/// closest-point queries. Holds a copy of the positions it was built from.
class SurfaceLocator {
public:
    explicit SurfaceLocator(const TriangleMesh& mesh);

    Projection project(const Vec3& p) const;
    std::vector<Projection> project_all(std::span<const Vec3> points, Exec exec) const;

private:
    struct Node {
        Eigen::AlignedBox3d box;
        int left = -1;  ///< child node, or -1 for a leaf
        int right = -1;
        int begin = 0;  ///< range into order_ for leaves
        int end = 0;
    };

    double box_distance2(const Eigen::AlignedBox3d& box, const Vec3& p) const;

    Points vertices_;
    std::vector<Face> faces_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

/// Closest point on the surface, as face + barycentric weights.
Projection project_point(const TriangleMesh& mesh, const Vec3& p);

/// Mixed Voronoi area per vertex: circumcentric Voronoi cells for non-obtuse
/// triangles, area/2 to the obtuse corner and area/4 to the others otherwise.
/// Throws TopologyError naming the first zero-area face.
std::vector<double> voronoi_areas(const TriangleMesh& mesh);

/// Per-face provenance on an ancestor mesh: the ancestor face index and the
/// barycentric coordinates of each corner inside it.
struct FaceAncestry {
    std::vector<int> face;
    std::vector<std::array<Vec3, 3>> corner_bary;

    static FaceAncestry identity(int face_count);
};

struct Subdivision {
    TriangleMesh mesh;
    Eigen::MatrixXd attributes;  ///< rows follow mesh vertices
    FaceAncestry ancestry;       ///< relative to the mesh passed to the first pass

    /// Location of every vertex on the ancestor mesh (first incident face wins).
    std::vector<SurfaceSample> vertex_samples() const;
};

/// One pass of 1-to-4 midpoint subdivision. Original vertices keep their indices;
/// edge midpoints follow in edges() order. Attributes are averaged along the
/// edge; with renormalize each new row is rescaled to sum to 1.
Subdivision midpoint_subdivide(const TriangleMesh& mesh,
                               const Eigen::MatrixXd& attributes = Eigen::MatrixXd(),
                               bool renormalize = false,
                               const FaceAncestry* ancestry = nullptr);

/// `levels` passes of midpoint_subdivide (levels == 0 returns the input).
Subdivision midpoint_subdivide(const TriangleMesh& mesh, int levels,
                               const Eigen::MatrixXd& attributes, bool renormalize);

/// Start vertex used by sample_anchors for a seed.
int anchor_start_vertex(const TriangleMesh& mesh, std::uint64_t seed);

/// Greedy farthest-point sampling of n distinct vertices (Euclidean distance),
/// starting from anchor_start_vertex(mesh, seed).
std::vector<int> sample_anchors(const TriangleMesh& mesh, int n, std::uint64_t seed);

} // namespace lapfusion
