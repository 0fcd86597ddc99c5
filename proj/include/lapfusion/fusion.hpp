#pragma once

#include "lapfusion/laplacian.hpp"
#include "lapfusion/mesh.hpp"
#include "lapfusion/neural.hpp"
#include "lapfusion/pointcloud.hpp"
#include "lapfusion/skinning.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace lapfusion {

/// What the detail network regresses: Laplacian coordinates (the method) or raw
/// offsets from the base surface to the scan (the displacement-map ablation).
enum class DetailTarget { Laplacian, Displacement };

const char* to_string(DetailTarget target);

struct FusionConfig {
    // Base deformation network f_d.
    int base_layers = 5;
    int base_width = 600;
    int base_epochs = 300;
    int base_batch_frames = 10;
    /// Scan points drawn per frame for each E_d evaluation; 0 uses every point.
    int base_points_per_frame = 0;
    double lambda_r = 1.0;
    double lambda_a = 2.0;
    double depth_falloff = 2.0;
    /// Output of f_d is multiplied by this (meters) before it displaces the template.
    double displacement_scale = 0.01;
    /// Anchors closer than this to the scan (and facing the camera) count as
    /// visible for depth input.
    double visibility_tolerance = 0.02;

    // Detail network f_l.
    int detail_layers = 3;
    int detail_width = 800;
    int detail_epochs = 100;
    int detail_batch_points = 5000;
    DetailTarget target = DetailTarget::Laplacian;

    double learning_rate = 1e-3;
    int frequencies = 10;
    bool include_input = true;
    int k_neighbors = 25;
    int subdivision = 2;
    int anchors = 800;
    double anchor_weight = 1.0;
    std::uint64_t seed = 1;
    Exec exec = Exec::Parallel;

    /// Throws ConfigError for non-positive sizes, rates or weights.
    void validate() const;
};

/// Precomputed network inputs for a fixed set of template locations.
struct QueryInputs {
    Eigen::MatrixXd encoded;  ///< encoded canonical position, one column per location
    Eigen::MatrixXd masks;    ///< J x N pose-feature masks ceil(W w)
    Eigen::MatrixXd weights;  ///< J x N skin weights

    /// `weights` is N x J, one row per location.
    static QueryInputs build(const RiggedTemplate& rig, std::span<const Vec3> positions,
                             const Eigen::MatrixXd& weights, const PositionalEncoding& encoding);
    static QueryInputs build(const RiggedTemplate& rig, std::span<const SurfaceSample> samples,
                             const PositionalEncoding& encoding);
    int size() const { return static_cast<int>(encoded.cols()); }
    /// [encoded; masked theta] for columns [begin, begin + count).
    Eigen::MatrixXd assemble(const Pose& pose, Eigen::Index begin, Eigen::Index count) const;
    Eigen::MatrixXd assemble(const Pose& pose) const { return assemble(pose, 0, encoded.cols()); }
};

/// Canonical position Q(sample) on the template.
Vec3 query_point(const RiggedTemplate& rig, const SurfaceSample& sample);

struct BaseMeshModel {
    RiggedTemplate rig;
    Mlp f_d;
    PositionalEncoding encoding;
    FusionConfig config;
    /// Anchor vertex indices on the subdivided template.
    std::vector<int> anchors;

    /// Subdivided canonical template: topology and per-vertex template samples.
    Subdivision canonical_subdivision() const;
    int input_dim() const;
    /// Validates the pose against the rig and returns it.
    const Pose& pose_checked(const Pose& pose) const;
};

struct DetailModel {
    BaseMeshModel base;
    Mlp f_l;
    /// f_l output is multiplied by this (1/m for Laplacians, m for displacements).
    double field_scale = 1.0;
};

struct TrainingReport {
    std::vector<double> loss;     ///< per-epoch mean of the full objective
    std::vector<double> data;     ///< per-epoch data term (E_d or E_l)
    std::vector<double> regular;  ///< E_r (base stage only)
    std::vector<double> anchor;   ///< E_a (base stage only)
};

/// Template with f_d initialised (zero output layer) and anchors sampled.
BaseMeshModel make_base_model(const RiggedTemplate& rig, const FusionConfig& config);

/// v' = LBS(v + f_d(Q(v), theta_bar(v))) on the template topology.
TriangleMesh build_base_mesh(const BaseMeshModel& model, const Pose& pose);
/// Template skinned without f_d.
TriangleMesh build_lbs_mesh(const RiggedTemplate& rig, const Pose& pose);

/// Minimises sum mu d_CD(p, B_t) + lambda_r E_r + lambda_a E_a (sums over points,
/// vertices and anchors of each frame) with Adam over
/// random frame batches. Throws NumericError (naming the epoch) on divergence.
BaseMeshModel train_base(const RiggedTemplate& rig, std::span<const PointCloudFrame> frames,
                         std::span<const Pose> poses, const FusionConfig& config, TrainingReport* report = nullptr);
/// Continues training an existing model for config.base_epochs.
void train_base(BaseMeshModel& model, std::span<const PointCloudFrame> frames, std::span<const Pose> poses,
                TrainingReport* report = nullptr);

struct TrainingPair {
    SurfaceSample sample;    ///< on the canonical template (face + bary + weights)
    Vec3 gt_laplacian;       ///< posed-space approximate Laplacian at the scan point
    Vec3 displacement;       ///< scan point minus its projection on the base mesh
    double weight = 1.0;     ///< mu
    int frame = 0;
};

struct TrainingSet {
    std::vector<TrainingPair> pairs;
    std::vector<Pose> poses;  ///< indexed by TrainingPair::frame
    int flagged = 0;          ///< scan points skipped because their fit failed
};

TrainingSet build_training_pairs(const BaseMeshModel& model, std::span<const PointCloudFrame> frames,
                                 std::span<const Pose> poses, int k);

/// Minimises mean mu |lbs_rotate(f_l) - target|^2 over random point batches.
DetailModel train_detail(const BaseMeshModel& model, const TrainingSet& set, TrainingReport* report = nullptr);

/// f_l output in canonical space (field units), one column per location.
Eigen::MatrixXd predict_canonical(const DetailModel& detail, const QueryInputs& inputs, const Pose& pose,
                                  Exec exec = Exec::Parallel);
/// Predicted posed-space field (Laplacians or displacements) at the locations of
/// `inputs`, rotated with their skinning weights.
Points predict_field(const DetailModel& detail, const QueryInputs& inputs, const Pose& pose,
                     Exec exec = Exec::Parallel);

struct ReconstructedFrame {
    TriangleMesh mesh;         ///< detailed result S
    TriangleMesh base;         ///< subdivided pose-dependent base mesh B
    LaplacianField field;      ///< predicted field used for the solve
    ReconstructionResult solve;
};

/// Reconstruction over many poses with one rig: the subdivided topology, query
/// inputs and the solver's symbolic analysis are set up once.
class Reconstructor {
public:
    /// Uses `base` for the base mesh and anchors when given (detail transfer),
    /// otherwise detail.base.
    explicit Reconstructor(const DetailModel& detail, const BaseMeshModel* base = nullptr);

    /// Scales the predicted field by `scale` before integrating it.
    ReconstructedFrame run(const Pose& pose, double scale = 1.0);

    /// Solver of the most recent run(), null before the first.
    const LaplacianSolver* solver() const { return solver_ ? &*solver_ : nullptr; }

private:
    const DetailModel& detail_;
    const BaseMeshModel& base_;
    Subdivision subdivision_;
    std::vector<SurfaceSample> samples_;
    QueryInputs inputs_;
    Eigen::MatrixXd rotation_weights_;  ///< J x N, target rig
    std::optional<LaplacianSolver> solver_;
};

TriangleMesh reconstruct_frame(const DetailModel& detail, const Pose& pose, double scale = 1.0);

/// Detail of `detail` applied on the base mesh and anchors of `base`. Throws
/// TopologyError when joint counts or template topologies differ.
TriangleMesh transfer_details(const DetailModel& detail, const BaseMeshModel& base, const Pose& pose);

std::vector<TriangleMesh> animate(const DetailModel& detail, std::span<const Pose> poses);

/// RMS over vertices of (detailed - base) . n_base; both meshes share topology.
double wrinkle_amplitude(const TriangleMesh& detailed, const TriangleMesh& base);
/// Mean |n_a . n_b| between vertex normals and the normal of the closest face on
/// the other mesh, averaged over both directions.
double normal_consistency(const TriangleMesh& a, const TriangleMesh& b, Exec exec = Exec::Parallel);
/// Largest ratio of longest to shortest incident edge over all vertices.
double max_edge_ratio(const TriangleMesh& mesh);
/// RMS distance from the vertices of `from` to the surface of `to`.
double rms_surface_distance(const TriangleMesh& from, const TriangleMesh& to, Exec exec = Exec::Parallel);

/// Checkpoint: "LFMODEL1", uint32 version, uint64 rig hash, uint64-length JSON
/// hyperparameters, uint32 anchor count + int32 anchors, then the f_d and f_l
/// network blocks (see Mlp::save). Networks are stored without Adam state.
void save_checkpoint(const std::filesystem::path& path, const DetailModel& detail);
/// Throws IoError when the file is malformed or was trained on another rig.
DetailModel load_checkpoint(const std::filesystem::path& path, const RiggedTemplate& rig);

} // namespace lapfusion
