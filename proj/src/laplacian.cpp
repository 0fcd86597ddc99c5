#include "lapfusion/laplacian.hpp"

#include "lapfusion/error.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>

namespace lapfusion {

namespace {

using Triplet = Eigen::Triplet<double>;
using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

constexpr double kCotClamp = 1e4;

RowSparse from_triplets(int n, std::vector<Triplet>& triplets)
{
    RowSparse m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return m;
}

double cot_at(const Vec3& corner, const Vec3& a, const Vec3& b)
{
    const Vec3 u = a - corner;
    const Vec3 v = b - corner;
    return u.dot(v) / u.cross(v).norm();
}

Eigen::MatrixX3d to_matrix(std::span<const Vec3> pts)
{
    Eigen::MatrixX3d m(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    }
    return m;
}

Points to_points(const Eigen::MatrixX3d& m)
{
    Points out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = m.row(i).transpose();
    }
    return out;
}

} // namespace

const char* to_string(LaplacianKind kind)
{
    switch (kind) {
    case LaplacianKind::Uniform: return "uniform";
    case LaplacianKind::Cotangent: return "cotangent";
    case LaplacianKind::UniformAngle: return "uniform-angle";
    }
    return "?";
}

LaplacianField LaplacianMatrix::apply(std::span<const Vec3> positions) const
{
    if (static_cast<Eigen::Index>(positions.size()) != matrix.cols()) {
        throw TopologyError("LaplacianMatrix::apply: expected " + std::to_string(matrix.cols()) +
                            " positions, got " + std::to_string(positions.size()));
    }
    const Eigen::MatrixX3d x = to_matrix(positions);
    const Eigen::MatrixX3d d = matrix * x;
    return to_points(d);
}

LaplacianMatrix uniform_laplacian(const TriangleMesh& mesh)
{
    const int K = mesh.vertex_count();
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(K) * 7);
    for (int k = 0; k < K; ++k) {
        const auto ring = mesh.neighbors(k);
        if (ring.empty()) {
            throw TopologyError("uniform_laplacian: vertex " + std::to_string(k) + " is isolated");
        }
        const double w = 1.0 / static_cast<double>(ring.size());
        t.emplace_back(k, k, 1.0);
        for (int j : ring) {
            t.emplace_back(k, j, -w);
        }
    }
    return {from_triplets(K, t), LaplacianKind::Uniform, 0};
}

LaplacianMatrix cotangent_laplacian(const TriangleMesh& mesh)
{
    const int K = mesh.vertex_count();
    const std::vector<double> area = voronoi_areas(mesh);
    std::vector<double> edge_weight(mesh.edges().size(), 0.0);
    for (int f = 0; f < mesh.face_count(); ++f) {
        const Face& tri = mesh.face(f);
        for (int i = 0; i < 3; ++i) {
            const int c = tri[i];
            const int a = tri[(i + 1) % 3];
            const int b = tri[(i + 2) % 3];
            const double cot = cot_at(mesh.vertex(c), mesh.vertex(a), mesh.vertex(b));
            edge_weight[mesh.edge_index(a, b)] += 0.5 * cot;
        }
    }
    int clamped = 0;
    for (double& w : edge_weight) {
        if (!std::isfinite(w) || w > kCotClamp || w < -kCotClamp) {
            w = std::isnan(w) ? 0.0 : std::clamp(w, -kCotClamp, kCotClamp);
            ++clamped;
        }
    }
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(K) * 7);
    for (int k = 0; k < K; ++k) {
        const auto ring = mesh.neighbors(k);
        if (ring.empty()) {
            throw TopologyError("cotangent_laplacian: vertex " + std::to_string(k) + " is isolated");
        }
        const double inv_a = 1.0 / area[k];
        double diag = 0.0;
        for (int j : ring) {
            const double w = edge_weight[mesh.edge_index(k, j)];
            diag += w;
            t.emplace_back(k, j, -w * inv_a);
        }
        t.emplace_back(k, k, diag * inv_a);
    }
    return {from_triplets(K, t), LaplacianKind::Cotangent, clamped};
}

LaplacianMatrix uniform_angle_laplacian(const TriangleMesh& mesh)
{
    const int K = mesh.vertex_count();
    const std::vector<double> area = voronoi_areas(mesh);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(K) * 7);
    for (int k = 0; k < K; ++k) {
        const auto ring = mesh.neighbors(k);
        const int n = static_cast<int>(ring.size());
        if (n <= 2) {
            throw TopologyError("uniform_angle_laplacian: vertex " + std::to_string(k) + " has " +
                                std::to_string(n) + " neighbors; at least 3 are required");
        }
        // cot(pi/2 - pi/n) == tan(pi/n)
        const double c = std::tan(std::numbers::pi / n) / area[k];
        t.emplace_back(k, k, n * c);
        for (int j : ring) {
            t.emplace_back(k, j, -c);
        }
    }
    return {from_triplets(K, t), LaplacianKind::UniformAngle, 0};
}

LaplacianField scale_field(const LaplacianField& field, double s)
{
    LaplacianField out(field.size());
    std::transform(field.begin(), field.end(), out.begin(), [s](const Vec3& d) { return Vec3(s * d); });
    return out;
}

LaplacianSolver::LaplacianSolver(const LaplacianMatrix& op, std::vector<int> anchors, double anchor_weight)
    : op_(op.matrix)
    , anchors_(std::move(anchors))
    , anchor_weight_(anchor_weight)
{
    if (anchors_.empty()) {
        throw NumericError("reconstruct: at least one anchor is required (the system is singular otherwise)");
    }
    if (!(anchor_weight_ > 0.0) || !std::isfinite(anchor_weight_)) {
        throw NumericError("reconstruct: anchor weight must be positive and finite");
    }
    for (int a : anchors_) {
        if (a < 0 || a >= op_.rows()) {
            throw TopologyError("reconstruct: anchor index " + std::to_string(a) + " out of range");
        }
    }
    factorize(true);
}

void LaplacianSolver::update_operator(const LaplacianMatrix& op)
{
    const bool same_pattern = op.matrix.rows() == op_.rows() && op.matrix.nonZeros() == op_.nonZeros() &&
                              std::equal(op.matrix.outerIndexPtr(), op.matrix.outerIndexPtr() + op_.rows() + 1,
                                         op_.outerIndexPtr()) &&
                              std::equal(op.matrix.innerIndexPtr(), op.matrix.innerIndexPtr() + op_.nonZeros(),
                                         op_.innerIndexPtr());
    op_ = op.matrix;
    factorize(!same_pattern || !ldlt_);
}

void LaplacianSolver::factorize(bool analyze)
{
    const Eigen::SparseMatrix<double> Lc(op_);
    const Eigen::SparseMatrix<double> LtL = Lc.transpose() * Lc;
    std::vector<Triplet> p;
    p.reserve(anchors_.size());
    for (int a : anchors_) {
        p.emplace_back(a, a, anchor_weight_);
    }
    Eigen::SparseMatrix<double> P(op_.rows(), op_.rows());
    P.setFromTriplets(p.begin(), p.end());
    normal_ = LtL + P;
    normal_.makeCompressed();

    const double pin = std::max(LtL.diagonal().mean(), anchor_weight_);
    stiffened_ = normal_;
    stiffened_.coeffRef(anchors_.front(), anchors_.front()) += pin;
    stiffened_.makeCompressed();

    if (analyze || !ldlt_) {
        ldlt_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
        ldlt_->analyzePattern(stiffened_);
    }
    ldlt_->factorize(stiffened_);
    ldlt_ok_ = ldlt_->info() == Eigen::Success && (ldlt_->vectorD().array() > 0.0).all();
    if (ldlt_ok_) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(op_.rows());
        e[anchors_.front()] = pin;
        pin_response_ = ldlt_->solve(e);
        pin_response_sum_ = 0.0;
        for (int a : anchors_) {
            pin_response_sum_ += pin_response_[a];
        }
        ldlt_ok_ = std::isfinite(pin_response_sum_) && pin_response_sum_ > 0.0;
    }
}

Eigen::MatrixX3d LaplacianSolver::apply_inverse(const Eigen::MatrixX3d& r) const
{
    // A x = r  <=>  N x = r + g e x_e, so x = N^-1 r + x_e h with h = N^-1 (g e).
    // Summing A x = r over all rows leaves w sum_a x_a = sum(r), which fixes x_e.
    Eigen::MatrixX3d x = ldlt_->solve(r);
    for (int c = 0; c < 3; ++c) {
        double anchor_sum = 0.0;
        for (int a : anchors_) {
            anchor_sum += x(a, c);
        }
        const double s = (r.col(c).sum() / anchor_weight_ - anchor_sum) / pin_response_sum_;
        x.col(c) += s * pin_response_;
    }
    return x;
}

ReconstructionResult LaplacianSolver::solve(const LaplacianField& target,
                                            std::span<const Vec3> anchor_positions) const
{
    const Eigen::Index K = op_.rows();
    if (static_cast<Eigen::Index>(target.size()) != K) {
        throw TopologyError("reconstruct: target has " + std::to_string(target.size()) + " entries for " +
                            std::to_string(K) + " vertices");
    }
    if (anchor_positions.size() != anchors_.size()) {
        throw TopologyError("reconstruct: " + std::to_string(anchor_positions.size()) +
                            " anchor positions for " + std::to_string(anchors_.size()) + " anchors");
    }
    const Eigen::MatrixX3d delta = to_matrix(target);
    if (!delta.allFinite()) {
        throw NumericError("reconstruct: target Laplacian field has non-finite entries");
    }
    Eigen::MatrixX3d anchor_rhs = Eigen::MatrixX3d::Zero(K, 3);
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
        anchor_rhs.row(anchors_[i]) += anchor_weight_ * anchor_positions[i].transpose();
    }
    const Eigen::MatrixX3d rhs = op_.transpose() * delta + anchor_rhs;
    const double rhs_norm = std::max(rhs.norm(), 1e-300);

    // Normal-equation residual through the original terms,
    // L^T (delta - L x) + w P (c - x).
    auto residual = [&](const Eigen::MatrixX3d& x) -> Eigen::MatrixX3d {
        Eigen::MatrixX3d r = op_.transpose() * (delta - op_ * x) + anchor_rhs;
        for (int a : anchors_) {
            r.row(a) -= anchor_weight_ * x.row(a);
        }
        return r;
    };

    ReconstructionResult result;
    Eigen::MatrixX3d x;
    double rel = std::numeric_limits<double>::infinity();
    if (ldlt_ok_) {
        x = apply_inverse(rhs);
        Eigen::MatrixX3d r = residual(x);
        rel = r.norm() / rhs_norm;
        // Refinement keeps going while the correction shrinks: the forward error
        // in low-frequency modes barely shows in the residual.
        constexpr int kMaxRefinement = 20;
        double last_step = std::numeric_limits<double>::infinity();
        for (int it = 0; it < kMaxRefinement; ++it) {
            const Eigen::MatrixX3d dx = apply_inverse(r);
            const double step = dx.norm();
            if (!(step < last_step)) {
                break;
            }
            x += dx;
            r = residual(x);
            rel = r.norm() / rhs_norm;
            ++result.refinement_steps;
            last_step = step;
            if (step <= 1e-15 * x.norm()) {
                break;
            }
        }
    }
    constexpr double kAcceptable = 1e-8;
    if (!ldlt_ok_ || !(rel <= kAcceptable)) {
        Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
        cg.setTolerance(1e-12);
        cg.setMaxIterations(static_cast<int>(std::max<Eigen::Index>(1000, 10 * K)));
        cg.compute(normal_);
        Eigen::MatrixX3d xc = ldlt_ok_ ? x : Eigen::MatrixX3d::Zero(K, 3);
        for (int c = 0; c < 3; ++c) {
            xc.col(c) = cg.solveWithGuess(rhs.col(c), xc.col(c));
        }
        const double rel_cg = residual(xc).norm() / rhs_norm;
        result.used_iterative_fallback = true;
        if (rel_cg < rel) {
            x = xc;
            rel = rel_cg;
        }
        if (!(rel <= kAcceptable)) {
            throw NumericError("reconstruct: solver did not converge, relative residual " + std::to_string(rel));
        }
    }
    result.residual = rel;
    result.positions = to_points(x);
    const Eigen::MatrixX3d lap_err = op_ * x - delta;
    double obj = lap_err.squaredNorm();
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
        obj += anchor_weight_ * (x.row(anchors_[i]).transpose() - anchor_positions[i]).squaredNorm();
    }
    result.objective = obj;
    return result;
}

ReconstructionResult reconstruct(const TriangleMesh& base, const LaplacianField& target,
                                 std::span<const int> anchors, double anchor_weight)
{
    const LaplacianSolver solver(uniform_angle_laplacian(base), std::vector<int>(anchors.begin(), anchors.end()),
                                 anchor_weight);
    Points anchor_pos;
    anchor_pos.reserve(anchors.size());
    for (int a : anchors) {
        anchor_pos.push_back(base.vertex(a));
    }
    return solver.solve(target, anchor_pos);
}

void write_matrix_market(const std::filesystem::path& path, const Eigen::SparseMatrix<double>& m)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
    out << std::setprecision(17);
    for (Eigen::Index c = 0; c < m.outerSize(); ++c) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, c); it; ++it) {
            out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
        }
    }
    if (!out) {
        throw IoError("failed while writing " + path.string());
    }
}

} // namespace lapfusion
