#include "lapfusion/mesh.hpp"

#include "lapfusion/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace lapfusion {

struct TriangleMesh::Topology {
    std::vector<Face> faces;
    std::vector<int> ring_offsets; // size K + 1
    std::vector<int> ring;         // sorted neighbor ids
    std::vector<int> ring_edge;    // edge id per ring slot
    std::vector<Edge> edges;
};

namespace {

std::string edge_name(int a, int b)
{
    std::ostringstream os;
    os << "(" << std::min(a, b) << ", " << std::max(a, b) << ")";
    return os.str();
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c)
{
    return 0.5 * (b - a).cross(c - a).norm();
}

} // namespace

TriangleMesh::TriangleMesh(Points vertices, std::shared_ptr<const Topology> topology)
    : vertices_(std::move(vertices))
    , topology_(std::move(topology))
{
}

TriangleMesh TriangleMesh::build(Points vertices, std::vector<Face> faces)
{
    const int K = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Face& t = faces[f];
        for (int c : t) {
            if (c < 0 || c >= K) {
                std::ostringstream os;
                os << "face " << f << " references vertex " << c << " but the mesh has " << K
                   << " vertices";
                throw TopologyError(os.str());
            }
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw TopologyError("face " + std::to_string(f) + " repeats a corner index");
        }
        for (int i = 0; i < 3; ++i) {
            if (!std::isfinite(vertices[static_cast<std::size_t>(t[i])].squaredNorm())) {
                throw TopologyError("face " + std::to_string(f) + " uses a non-finite vertex");
            }
        }
        const double area = triangle_area(vertices[static_cast<std::size_t>(t[0])],
                                          vertices[static_cast<std::size_t>(t[1])],
                                          vertices[static_cast<std::size_t>(t[2])]);
        if (!(area > 0.0)) {
            throw TopologyError("face " + std::to_string(f) + " has zero area");
        }
    }

    // Half-edge records (min, max, face) sorted to group identical edges.
    struct Record {
        int a, b, face;
    };
    std::vector<Record> records;
    records.reserve(faces.size() * 3);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (int i = 0; i < 3; ++i) {
            const int u = faces[f][static_cast<std::size_t>(i)];
            const int v = faces[f][static_cast<std::size_t>((i + 1) % 3)];
            records.push_back({std::min(u, v), std::max(u, v), static_cast<int>(f)});
        }
    }
    std::sort(records.begin(), records.end(), [](const Record& x, const Record& y) {
        return std::tie(x.a, x.b, x.face) < std::tie(y.a, y.b, y.face);
    });

    auto topo = std::make_shared<Topology>();
    for (std::size_t i = 0; i < records.size();) {
        std::size_t j = i;
        while (j < records.size() && records[j].a == records[i].a && records[j].b == records[i].b) {
            ++j;
        }
        if (j - i > 2) {
            throw TopologyError("non-manifold edge " + edge_name(records[i].a, records[i].b) +
                                " is shared by " + std::to_string(j - i) + " faces");
        }
        Edge e;
        e.v0 = records[i].a;
        e.v1 = records[i].b;
        e.faces[0] = records[i].face;
        if (j - i == 2) {
            e.faces[1] = records[i + 1].face;
        }
        topo->edges.push_back(e);
        i = j;
    }

    std::vector<int> degree(static_cast<std::size_t>(K), 0);
    for (const Edge& e : topo->edges) {
        ++degree[static_cast<std::size_t>(e.v0)];
        ++degree[static_cast<std::size_t>(e.v1)];
    }
    topo->ring_offsets.assign(static_cast<std::size_t>(K) + 1, 0);
    for (int k = 0; k < K; ++k) {
        topo->ring_offsets[static_cast<std::size_t>(k) + 1] =
            topo->ring_offsets[static_cast<std::size_t>(k)] + degree[static_cast<std::size_t>(k)];
    }
    topo->ring.resize(static_cast<std::size_t>(topo->ring_offsets.back()));
    topo->ring_edge.resize(topo->ring.size());
    std::vector<int> fill(topo->ring_offsets.begin(), topo->ring_offsets.end() - 1);
    for (std::size_t ei = 0; ei < topo->edges.size(); ++ei) {
        const Edge& e = topo->edges[ei];
        auto& s0 = fill[static_cast<std::size_t>(e.v0)];
        topo->ring[static_cast<std::size_t>(s0)] = e.v1;
        topo->ring_edge[static_cast<std::size_t>(s0)] = static_cast<int>(ei);
        ++s0;
        auto& s1 = fill[static_cast<std::size_t>(e.v1)];
        topo->ring[static_cast<std::size_t>(s1)] = e.v0;
        topo->ring_edge[static_cast<std::size_t>(s1)] = static_cast<int>(ei);
        ++s1;
    }
    // Rings sorted ascending; reductions over neighbors iterate in this order.
    for (int k = 0; k < K; ++k) {
        const auto b = static_cast<std::size_t>(topo->ring_offsets[static_cast<std::size_t>(k)]);
        const auto n = static_cast<std::size_t>(degree[static_cast<std::size_t>(k)]);
        std::vector<std::pair<int, int>> slot(n);
        for (std::size_t i = 0; i < n; ++i) {
            slot[i] = {topo->ring[b + i], topo->ring_edge[b + i]};
        }
        std::sort(slot.begin(), slot.end());
        for (std::size_t i = 0; i < n; ++i) {
            topo->ring[b + i] = slot[i].first;
            topo->ring_edge[b + i] = slot[i].second;
        }
    }
    topo->faces = std::move(faces);
    return TriangleMesh(std::move(vertices), std::move(topo));
}

TriangleMesh TriangleMesh::with_vertices(Points vertices) const
{
    if (vertices.size() != vertices_.size()) {
        throw TopologyError("with_vertices: expected " + std::to_string(vertices_.size()) +
                            " positions, got " + std::to_string(vertices.size()));
    }
    return TriangleMesh(std::move(vertices), topology_);
}

int TriangleMesh::face_count() const
{
    return topology_ ? static_cast<int>(topology_->faces.size()) : 0;
}

const std::vector<Face>& TriangleMesh::faces() const
{
    static const std::vector<Face> none;
    return topology_ ? topology_->faces : none;
}

std::span<const int> TriangleMesh::neighbors(int k) const
{
    const auto b = static_cast<std::size_t>(topology_->ring_offsets[static_cast<std::size_t>(k)]);
    const auto e = static_cast<std::size_t>(topology_->ring_offsets[static_cast<std::size_t>(k) + 1]);
    return {topology_->ring.data() + b, e - b};
}

const std::vector<Edge>& TriangleMesh::edges() const
{
    static const std::vector<Edge> none;
    return topology_ ? topology_->edges : none;
}

int TriangleMesh::edge_index(int a, int b) const
{
    if (a < 0 || b < 0 || a >= vertex_count() || b >= vertex_count()) {
        return -1;
    }
    const auto ring = neighbors(a);
    const auto it = std::lower_bound(ring.begin(), ring.end(), b);
    if (it == ring.end() || *it != b) {
        return -1;
    }
    const auto slot = static_cast<std::size_t>(topology_->ring_offsets[static_cast<std::size_t>(a)]) +
                      static_cast<std::size_t>(it - ring.begin());
    return topology_->ring_edge[slot];
}

bool TriangleMesh::is_boundary_vertex(int k) const
{
    const auto b = static_cast<std::size_t>(topology_->ring_offsets[static_cast<std::size_t>(k)]);
    const auto e = static_cast<std::size_t>(topology_->ring_offsets[static_cast<std::size_t>(k) + 1]);
    for (std::size_t s = b; s < e; ++s) {
        if (topology_->edges[static_cast<std::size_t>(topology_->ring_edge[s])].is_boundary()) {
            return true;
        }
    }
    return false;
}

bool TriangleMesh::has_boundary() const
{
    return std::any_of(edges().begin(), edges().end(), [](const Edge& e) { return e.is_boundary(); });
}

bool TriangleMesh::same_topology(const TriangleMesh& other) const
{
    if (vertex_count() != other.vertex_count()) {
        return false;
    }
    if (topology_ == other.topology_) {
        return true;
    }
    return faces() == other.faces();
}

double TriangleMesh::face_area(int f) const
{
    const Face& t = face(f);
    return triangle_area(vertex(t[0]), vertex(t[1]), vertex(t[2]));
}

double TriangleMesh::total_area() const
{
    double total = 0.0;
    for (int f = 0; f < face_count(); ++f) {
        total += face_area(f);
    }
    return total;
}

Vec3 TriangleMesh::face_normal(int f) const
{
    const Face& t = face(f);
    return (vertex(t[1]) - vertex(t[0])).cross(vertex(t[2]) - vertex(t[0])).normalized();
}

Points TriangleMesh::vertex_normals() const
{
    Points normals(vertices_.size(), Vec3::Zero());
    for (const Face& t : faces()) {
        // Unnormalized cross product is area weighted.
        const Vec3 n = (vertex(t[1]) - vertex(t[0])).cross(vertex(t[2]) - vertex(t[0]));
        for (int c : t) {
            normals[static_cast<std::size_t>(c)] += n;
        }
    }
    for (Vec3& n : normals) {
        const double len = n.norm();
        if (len > 0.0) {
            n /= len;
        }
    }
    return normals;
}

Eigen::AlignedBox3d TriangleMesh::bounds() const
{
    Eigen::AlignedBox3d box;
    for (const Vec3& v : vertices_) {
        box.extend(v);
    }
    return box;
}

Vec3 SurfaceSample::position(const TriangleMesh& mesh) const
{
    const Face& t = mesh.face(face);
    return bary[0] * mesh.vertex(t[0]) + bary[1] * mesh.vertex(t[1]) + bary[2] * mesh.vertex(t[2]);
}

double Projection::distance() const
{
    return std::sqrt(squared_distance);
}

Projection closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    // Voronoi-region walk over the triangle's vertices, edges and interior.
    Projection r;
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        r.bary = Vec3(1, 0, 0);
    } else {
        const Vec3 bp = p - b;
        const double d3 = ab.dot(bp);
        const double d4 = ac.dot(bp);
        const Vec3 cp = p - c;
        const double d5 = ab.dot(cp);
        const double d6 = ac.dot(cp);
        const double vc = d1 * d4 - d3 * d2;
        const double vb = d5 * d2 - d1 * d6;
        const double va = d3 * d6 - d5 * d4;
        if (d3 >= 0.0 && d4 <= d3) {
            r.bary = Vec3(0, 1, 0);
        } else if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
            const double v = d1 / (d1 - d3);
            r.bary = Vec3(1 - v, v, 0);
        } else if (d6 >= 0.0 && d5 <= d6) {
            r.bary = Vec3(0, 0, 1);
        } else if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
            const double w = d2 / (d2 - d6);
            r.bary = Vec3(1 - w, 0, w);
        } else if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
            const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            r.bary = Vec3(0, 1 - w, w);
        } else {
            const double denom = 1.0 / (va + vb + vc);
            const double v = vb * denom;
            const double w = vc * denom;
            r.bary = Vec3(1 - v - w, v, w);
        }
    }
    r.point = r.bary[0] * a + r.bary[1] * b + r.bary[2] * c;
    r.squared_distance = (p - r.point).squaredNorm();
    return r;
}

SurfaceLocator::SurfaceLocator(const TriangleMesh& mesh)
    : vertices_(mesh.vertices())
    , faces_(mesh.faces())
{
    const int F = static_cast<int>(faces_.size());
    order_.resize(static_cast<std::size_t>(F));
    std::iota(order_.begin(), order_.end(), 0);
    if (F == 0) {
        return;
    }
    std::vector<Vec3> centroid(static_cast<std::size_t>(F));
    std::vector<Eigen::AlignedBox3d> fbox(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) {
        const Face& t = faces_[static_cast<std::size_t>(f)];
        Eigen::AlignedBox3d box;
        for (int c : t) {
            box.extend(vertices_[static_cast<std::size_t>(c)]);
        }
        fbox[static_cast<std::size_t>(f)] = box;
        centroid[static_cast<std::size_t>(f)] = box.center();
    }

    constexpr int kLeafSize = 4;
    nodes_.reserve(static_cast<std::size_t>(2 * F / kLeafSize + 2));
    // Iterative median split on the longest centroid axis.
    struct Task {
        int node, begin, end;
    };
    std::vector<Task> stack;
    nodes_.push_back(Node{});
    stack.push_back({0, 0, F});
    while (!stack.empty()) {
        const Task task = stack.back();
        stack.pop_back();
        Eigen::AlignedBox3d box;
        Eigen::AlignedBox3d cbox;
        for (int i = task.begin; i < task.end; ++i) {
            const int f = order_[static_cast<std::size_t>(i)];
            box.extend(fbox[static_cast<std::size_t>(f)]);
            cbox.extend(centroid[static_cast<std::size_t>(f)]);
        }
        nodes_[static_cast<std::size_t>(task.node)].box = box;
        if (task.end - task.begin <= kLeafSize) {
            nodes_[static_cast<std::size_t>(task.node)].begin = task.begin;
            nodes_[static_cast<std::size_t>(task.node)].end = task.end;
            continue;
        }
        int axis = 0;
        cbox.diagonal().maxCoeff(&axis);
        const int mid = (task.begin + task.end) / 2;
        std::nth_element(order_.begin() + task.begin, order_.begin() + mid, order_.begin() + task.end,
                         [&](int x, int y) {
                             const double cx = centroid[static_cast<std::size_t>(x)][axis];
                             const double cy = centroid[static_cast<std::size_t>(y)][axis];
                             return cx < cy || (cx == cy && x < y);
                         });
        const int left = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{});
        const int right = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{});
        nodes_[static_cast<std::size_t>(task.node)].left = left;
        nodes_[static_cast<std::size_t>(task.node)].right = right;
        stack.push_back({right, mid, task.end});
        stack.push_back({left, task.begin, mid});
    }
}

double SurfaceLocator::box_distance2(const Eigen::AlignedBox3d& box, const Vec3& p) const
{
    const Vec3 d = (box.min() - p).cwiseMax(p - box.max()).cwiseMax(0.0);
    return d.squaredNorm();
}

Projection SurfaceLocator::project(const Vec3& p) const
{
    Projection best;
    best.squared_distance = std::numeric_limits<double>::infinity();
    if (nodes_.empty()) {
        return best;
    }
    // Depth-first, nearer child first; ties on distance resolve to the lower face id
    // so the result matches an exhaustive scan exactly.
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
        if (box_distance2(node.box, p) > best.squared_distance) {
            continue;
        }
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int f = order_[static_cast<std::size_t>(i)];
                const Face& t = faces_[static_cast<std::size_t>(f)];
                Projection r = closest_point_on_triangle(p, vertices_[static_cast<std::size_t>(t[0])],
                                                         vertices_[static_cast<std::size_t>(t[1])],
                                                         vertices_[static_cast<std::size_t>(t[2])]);
                if (r.squared_distance < best.squared_distance ||
                    (r.squared_distance == best.squared_distance && f < best.face)) {
                    r.face = f;
                    best = r;
                }
            }
            continue;
        }
        const Node& l = nodes_[static_cast<std::size_t>(node.left)];
        const Node& r = nodes_[static_cast<std::size_t>(node.right)];
        const double dl = box_distance2(l.box, p);
        const double dr = box_distance2(r.box, p);
        if (dl <= dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    return best;
}

std::vector<Projection> SurfaceLocator::project_all(std::span<const Vec3> points, Exec exec) const
{
    std::vector<Projection> out(points.size());
    parallel_for_dynamic(static_cast<std::ptrdiff_t>(points.size()), exec,
                         [&](std::ptrdiff_t i) { out[static_cast<std::size_t>(i)] = project(points[static_cast<std::size_t>(i)]); });
    return out;
}

Projection project_point(const TriangleMesh& mesh, const Vec3& p)
{
    return SurfaceLocator(mesh).project(p);
}

std::vector<double> voronoi_areas(const TriangleMesh& mesh)
{
    std::vector<double> area(static_cast<std::size_t>(mesh.vertex_count()), 0.0);
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& t = mesh.face(f);
        const Vec3& p0 = mesh.vertex(t[0]);
        const Vec3& p1 = mesh.vertex(t[1]);
        const Vec3& p2 = mesh.vertex(t[2]);
        const double A = triangle_area(p0, p1, p2);
        if (!(A > 0.0)) {
            throw TopologyError("voronoi_areas: face " + std::to_string(f) + " has zero area");
        }
        const Vec3 e0 = p2 - p1; // opposite corner 0
        const Vec3 e1 = p0 - p2; // opposite corner 1
        const Vec3 e2 = p1 - p0; // opposite corner 2
        // Corner dot products: negative means an obtuse angle at that corner.
        const double d0 = (p1 - p0).dot(p2 - p0);
        const double d1 = (p2 - p1).dot(p0 - p1);
        const double d2 = (p0 - p2).dot(p1 - p2);
        std::array<double, 3> share{};
        if (d0 < 0.0) {
            share = {A / 2, A / 4, A / 4};
        } else if (d1 < 0.0) {
            share = {A / 4, A / 2, A / 4};
        } else if (d2 < 0.0) {
            share = {A / 4, A / 4, A / 2};
        } else {
            // cot(angle at corner i) = d_i / (2A)
            const double c0 = d0 / (2 * A);
            const double c1 = d1 / (2 * A);
            const double c2 = d2 / (2 * A);
            share[0] = (e2.squaredNorm() * c2 + e1.squaredNorm() * c1) / 8;
            share[1] = (e0.squaredNorm() * c0 + e2.squaredNorm() * c2) / 8;
            share[2] = (e1.squaredNorm() * c1 + e0.squaredNorm() * c0) / 8;
        }
        for (int i = 0; i < 3; ++i) {
            area[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])] += share[static_cast<std::size_t>(i)];
        }
    }
    return area;
}

FaceAncestry FaceAncestry::identity(int face_count)
{
    FaceAncestry a;
    a.face.resize(static_cast<std::size_t>(face_count));
    std::iota(a.face.begin(), a.face.end(), 0);
    a.corner_bary.assign(static_cast<std::size_t>(face_count),
                         {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)});
    return a;
}

std::vector<SurfaceSample> Subdivision::vertex_samples() const
{
    std::vector<SurfaceSample> out(static_cast<std::size_t>(mesh.vertex_count()));
    std::vector<char> seen(out.size(), 0);
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& t = mesh.face(f);
        for (int c = 0; c < 3; ++c) {
            const auto v = static_cast<std::size_t>(t[static_cast<std::size_t>(c)]);
            if (seen[v]) {
                continue;
            }
            seen[v] = 1;
            out[v].face = ancestry.face[static_cast<std::size_t>(f)];
            out[v].bary = ancestry.corner_bary[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)];
        }
    }
    return out;
}

Subdivision midpoint_subdivide(const TriangleMesh& mesh, const Eigen::MatrixXd& attributes,
                               bool renormalize, const FaceAncestry* ancestry)
{
    const int K = mesh.vertex_count();
    const auto& edges = mesh.edges();
    const int E = static_cast<int>(edges.size());
    if (attributes.size() > 0 && attributes.rows() != K) {
        throw TopologyError("midpoint_subdivide: attribute rows (" + std::to_string(attributes.rows()) +
                            ") do not match vertex count (" + std::to_string(K) + ")");
    }
    const FaceAncestry base = ancestry ? *ancestry : FaceAncestry::identity(mesh.face_count());

    Points verts = mesh.vertices();
    verts.reserve(static_cast<std::size_t>(K + E));
    Eigen::MatrixXd attr;
    if (attributes.size() > 0) {
        attr.resize(K + E, attributes.cols());
        attr.topRows(K) = attributes;
    }
    for (int e = 0; e < E; ++e) {
        const Edge& ed = edges[static_cast<std::size_t>(e)];
        verts.push_back(0.5 * (mesh.vertex(ed.v0) + mesh.vertex(ed.v1)));
        if (attr.size() > 0) {
            attr.row(K + e) = 0.5 * (attributes.row(ed.v0) + attributes.row(ed.v1));
            if (renormalize) {
                const double s = attr.row(K + e).sum();
                if (s > 0.0) {
                    attr.row(K + e) /= s;
                }
            }
        }
    }

    std::vector<Face> faces;
    faces.reserve(static_cast<std::size_t>(mesh.face_count()) * 4);
    FaceAncestry anc;
    anc.face.reserve(faces.capacity());
    anc.corner_bary.reserve(faces.capacity());
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& t = mesh.face(f);
        const int a = t[0], b = t[1], c = t[2];
        const int ab = K + mesh.edge_index(a, b);
        const int bc = K + mesh.edge_index(b, c);
        const int ca = K + mesh.edge_index(c, a);
        const auto& cb = base.corner_bary[static_cast<std::size_t>(f)];
        const Vec3 Bab = 0.5 * (cb[0] + cb[1]);
        const Vec3 Bbc = 0.5 * (cb[1] + cb[2]);
        const Vec3 Bca = 0.5 * (cb[2] + cb[0]);
        const int parent = base.face[static_cast<std::size_t>(f)];
        faces.push_back({a, ab, ca});
        anc.corner_bary.push_back({cb[0], Bab, Bca});
        faces.push_back({b, bc, ab});
        anc.corner_bary.push_back({cb[1], Bbc, Bab});
        faces.push_back({c, ca, bc});
        anc.corner_bary.push_back({cb[2], Bca, Bbc});
        faces.push_back({ab, bc, ca});
        anc.corner_bary.push_back({Bab, Bbc, Bca});
        for (int i = 0; i < 4; ++i) {
            anc.face.push_back(parent);
        }
    }

    Subdivision out;
    out.mesh = TriangleMesh::build(std::move(verts), std::move(faces));
    out.attributes = std::move(attr);
    out.ancestry = std::move(anc);
    return out;
}

Subdivision midpoint_subdivide(const TriangleMesh& mesh, int levels, const Eigen::MatrixXd& attributes,
                               bool renormalize)
{
    Subdivision cur;
    cur.mesh = mesh;
    cur.attributes = attributes;
    cur.ancestry = FaceAncestry::identity(mesh.face_count());
    for (int l = 0; l < levels; ++l) {
        cur = midpoint_subdivide(cur.mesh, cur.attributes, renormalize, &cur.ancestry);
    }
    return cur;
}

int anchor_start_vertex(const TriangleMesh& mesh, std::uint64_t seed)
{
    if (mesh.vertex_count() == 0) {
        throw TopologyError("anchor_start_vertex: empty mesh");
    }
    std::mt19937_64 rng(seed);
    return static_cast<int>(rng() % static_cast<std::uint64_t>(mesh.vertex_count()));
}

std::vector<int> sample_anchors(const TriangleMesh& mesh, int n, std::uint64_t seed)
{
    const int K = mesh.vertex_count();
    if (n < 0 || n > K) {
        throw TopologyError("sample_anchors: requested " + std::to_string(n) + " anchors from " +
                            std::to_string(K) + " vertices");
    }
    std::vector<int> out;
    if (n == 0) {
        return out;
    }
    out.reserve(static_cast<std::size_t>(n));
    std::vector<double> dist(static_cast<std::size_t>(K), std::numeric_limits<double>::infinity());
    std::vector<char> taken(static_cast<std::size_t>(K), 0);
    int next = anchor_start_vertex(mesh, seed);
    for (int i = 0; i < n; ++i) {
        out.push_back(next);
        taken[static_cast<std::size_t>(next)] = 1;
        const Vec3 p = mesh.vertex(next);
        int far = -1;
        double far_d = -1.0;
        for (int k = 0; k < K; ++k) {
            auto& d = dist[static_cast<std::size_t>(k)];
            d = std::min(d, (mesh.vertex(k) - p).squaredNorm());
            if (!taken[static_cast<std::size_t>(k)] && d > far_d) {
                far_d = d;
                far = k;
            }
        }
        next = far;
    }
    return out;
}

} // namespace lapfusion
