#pragma once

#include "lapfusion/mesh.hpp"
#include "lapfusion/types.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace lapfusion {

enum class LaplacianKind { Uniform, Cotangent, UniformAngle };

const char* to_string(LaplacianKind kind);

/// Per-vertex Laplacian coordinates, one 3-vector per vertex.
using LaplacianField = Points;

/// Sparse K x K operator mapping vertex positions to Laplacian coordinates.
/// Rows sum to zero; the sparsity pattern is the mesh adjacency plus the diagonal.
struct LaplacianMatrix {
    Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
    LaplacianKind kind = LaplacianKind::Uniform;
    /// Cotangent kind only: edge weights clamped to the +-1e4 band.
    int clamped_weights = 0;

    int size() const { return static_cast<int>(matrix.rows()); }
    LaplacianField apply(std::span<const Vec3> positions) const;
};

/// delta_k = v_k - mean of the one-ring. Throws TopologyError for an isolated vertex.
LaplacianMatrix uniform_laplacian(const TriangleMesh& mesh);

/// Discrete Laplace-Beltrami: (1 / a_k) sum_j (cot a + cot b) / 2 (v_k - v_j) with
/// mixed Voronoi areas. Boundary edges use their single opposite angle.
LaplacianMatrix cotangent_laplacian(const TriangleMesh& mesh);

/// Cotangent operator with both opposite angles replaced by pi/2 - pi/|N(k)|:
/// (cot(alpha) / a_k) (|N(k)| u_k - sum_j u_j). Throws TopologyError when a vertex
/// has fewer than three neighbors.
LaplacianMatrix uniform_angle_laplacian(const TriangleMesh& mesh);

LaplacianField scale_field(const LaplacianField& field, double s);

struct ReconstructionResult {
    Points positions;
    /// ||A x - b|| / ||b|| of the normal equations after refinement.
    double residual = 0.0;
    /// Value of sum ||L x - delta||^2 + w sum ||x_a - c_a||^2 at the solution.
    double objective = 0.0;
    int refinement_steps = 0;
    bool used_iterative_fallback = false;
};

/// Soft-anchored least-squares integration of Laplacian coordinates:
///
///     min_x  sum_k ||(L x)_k - delta_k||^2 + w sum_{a in anchors} ||x_a - c_a||^2
///
/// The normal matrix A = L^T L + w P is singular up to the soft anchor term along
/// the translation mode, so A itself is never factorized. Instead
/// N = A + g e e^T (e = first anchor, g = mean diagonal of L^T L) is factorized
/// once and A^-1 r is recovered exactly from N^-1 through the identity
/// w * sum_a x_a = 1^T r, which holds because constants are in the null space of L.
/// Iterative refinement against the unfactorized terms follows. x, y and z are
/// three right-hand sides against the same factorization. solve() is const and
/// may be called concurrently.
class LaplacianSolver {
public:
    LaplacianSolver(const LaplacianMatrix& op, std::vector<int> anchors, double anchor_weight = 1.0);

    /// Swap in an operator with the same sparsity pattern (e.g. the same topology
    /// at a new pose). Symbolic analysis is reused; only the numeric factorization
    /// is redone.
    void update_operator(const LaplacianMatrix& op);

    ReconstructionResult solve(const LaplacianField& target, std::span<const Vec3> anchor_positions) const;

    const std::vector<int>& anchors() const { return anchors_; }
    double anchor_weight() const { return anchor_weight_; }
    const Eigen::SparseMatrix<double>& normal_matrix() const { return normal_; }
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& op() const { return op_; }

private:
    void factorize(bool analyze);
    Eigen::MatrixX3d apply_inverse(const Eigen::MatrixX3d& r) const;

    Eigen::SparseMatrix<double, Eigen::RowMajor> op_;
    std::vector<int> anchors_;
    double anchor_weight_ = 1.0;
    Eigen::SparseMatrix<double> normal_;
    Eigen::SparseMatrix<double> stiffened_;
    std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt_;
    Eigen::VectorXd pin_response_; ///< N^-1 (g e)
    double pin_response_sum_ = 0.0; ///< sum over anchors of pin_response_
    bool ldlt_ok_ = false;
};

/// Integrates `target` over the topology of `base` with the uniform-angle operator
/// of `base`, anchoring each listed vertex softly to its position in `base`.
ReconstructionResult reconstruct(const TriangleMesh& base, const LaplacianField& target,
                                 std::span<const int> anchors, double anchor_weight = 1.0);

/// Writes a sparse matrix in Matrix Market coordinate format (general, real).
void write_matrix_market(const std::filesystem::path& path, const Eigen::SparseMatrix<double>& m);

} // namespace lapfusion
