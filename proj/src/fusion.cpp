#include "lapfusion/fusion.hpp"

#include "lapfusion/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace lapfusion {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void require_positive(double v, const char* name)
{
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("fusion config: ") + name + " must be positive, got " + std::to_string(v));
    }
}

void require_non_negative(double v, const char* name)
{
    if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("fusion config: ") + name + " must be non-negative, got " + std::to_string(v));
    }
}

std::vector<int> mlp_widths(int input, int layers, int width)
{
    std::vector<int> w{input};
    for (int l = 0; l + 1 < layers; ++l) {
        w.push_back(width);
    }
    w.push_back(3);
    return w;
}

Mat3 blended_linear(std::span<const Mat4> transforms, const Eigen::Ref<const Eigen::VectorXd>& w)
{
    return blend_transforms(transforms, w).topLeftCorner<3, 3>();
}

/// Point on the surface given by `sample` (face + bary) for positions `v` on the
/// face list `faces`.
Vec3 interpolate(const std::vector<Face>& faces, std::span<const Vec3> v, int face, const Vec3& bary)
{
    const Face& f = faces[static_cast<std::size_t>(face)];
    return bary[0] * v[static_cast<std::size_t>(f[0])] + bary[1] * v[static_cast<std::size_t>(f[1])] +
           bary[2] * v[static_cast<std::size_t>(f[2])];
}

struct SubdividedTemplate {
    Subdivision subdivision;
    std::vector<SurfaceSample> samples;  ///< with the rig's interpolated weights
};

SubdividedTemplate subdivided_template(const BaseMeshModel& model)
{
    SubdividedTemplate out;
    out.subdivision = model.canonical_subdivision();
    out.samples = out.subdivision.vertex_samples();
    for (SurfaceSample& s : out.samples) {
        s = model.rig.sample(s.face, s.bary);
    }
    return out;
}

Points subdivided_positions(const TriangleMesh& coarse, std::span<const SurfaceSample> samples)
{
    Points out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out[i] = interpolate(coarse.faces(), coarse.vertices(), samples[i].face, samples[i].bary);
    }
    return out;
}

QueryInputs template_inputs(const BaseMeshModel& model)
{
    return QueryInputs::build(model.rig, model.rig.mesh.vertices(), model.rig.skin_weights, model.encoding);
}

/// Canonical-space offsets f_d * displacement_scale, 3 x K.
Eigen::MatrixXd base_offsets(const BaseMeshModel& model, const QueryInputs& inputs, const Pose& pose, Exec exec)
{
    return model.f_d.forward(inputs.assemble(pose), exec) * model.config.displacement_scale;
}

TriangleMesh pose_base(const BaseMeshModel& model, const Eigen::MatrixXd& offsets, const Pose& pose, Exec exec)
{
    const Points& v = model.rig.mesh.vertices();
    Points canon(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        canon[k] = v[k] + offsets.col(static_cast<Eigen::Index>(k));
    }
    return model.rig.mesh.with_vertices(lbs_apply(model.rig, model.pose_checked(pose), canon, exec));
}

nlohmann::json config_json(const FusionConfig& c)
{
    return {
        {"base_layers", c.base_layers},
        {"base_width", c.base_width},
        {"base_epochs", c.base_epochs},
        {"base_batch_frames", c.base_batch_frames},
        {"base_points_per_frame", c.base_points_per_frame},
        {"lambda_r", c.lambda_r},
        {"lambda_a", c.lambda_a},
        {"depth_falloff", c.depth_falloff},
        {"displacement_scale", c.displacement_scale},
        {"visibility_tolerance", c.visibility_tolerance},
        {"detail_layers", c.detail_layers},
        {"detail_width", c.detail_width},
        {"detail_epochs", c.detail_epochs},
        {"detail_batch_points", c.detail_batch_points},
        {"target", to_string(c.target)},
        {"learning_rate", c.learning_rate},
        {"frequencies", c.frequencies},
        {"include_input", c.include_input},
        {"k_neighbors", c.k_neighbors},
        {"subdivision", c.subdivision},
        {"anchors", c.anchors},
        {"anchor_weight", c.anchor_weight},
        {"seed", c.seed},
    };
}

FusionConfig config_from_json(const nlohmann::json& j)
{
    FusionConfig c;
    c.base_layers = j.at("base_layers").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.base_epochs = j.at("base_epochs").get<int>();
    c.base_batch_frames = j.at("base_batch_frames").get<int>();
    c.base_points_per_frame = j.at("base_points_per_frame").get<int>();
    c.lambda_r = j.at("lambda_r").get<double>();
    c.lambda_a = j.at("lambda_a").get<double>();
    c.depth_falloff = j.at("depth_falloff").get<double>();
    c.displacement_scale = j.at("displacement_scale").get<double>();
    c.visibility_tolerance = j.at("visibility_tolerance").get<double>();
    c.detail_layers = j.at("detail_layers").get<int>();
    c.detail_width = j.at("detail_width").get<int>();
    c.detail_epochs = j.at("detail_epochs").get<int>();
    c.detail_batch_points = j.at("detail_batch_points").get<int>();
    const std::string target = j.at("target").get<std::string>();
    if (target == "laplacian") {
        c.target = DetailTarget::Laplacian;
    } else if (target == "displacement") {
        c.target = DetailTarget::Displacement;
    } else {
        throw IoError("checkpoint: unknown detail target '" + target + "'");
    }
    c.learning_rate = j.at("learning_rate").get<double>();
    c.frequencies = j.at("frequencies").get<int>();
    c.include_input = j.at("include_input").get<bool>();
    c.k_neighbors = j.at("k_neighbors").get<int>();
    c.subdivision = j.at("subdivision").get<int>();
    c.anchors = j.at("anchors").get<int>();
    c.anchor_weight = j.at("anchor_weight").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

template <typename T>
void write_raw(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& what)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw IoError("checkpoint: truncated while reading " + what);
    }
    return v;
}

constexpr char kCheckpointMagic[8] = {'L', 'F', 'M', 'O', 'D', 'E', 'L', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace

const char* to_string(DetailTarget target)
{
    return target == DetailTarget::Laplacian ? "laplacian" : "displacement";
}

void FusionConfig::validate() const
{
    require_positive(base_layers, "base_layers");
    require_positive(base_width, "base_width");
    require_non_negative(base_epochs, "base_epochs");
    require_positive(base_batch_frames, "base_batch_frames");
    require_non_negative(base_points_per_frame, "base_points_per_frame");
    require_non_negative(lambda_r, "lambda_r");
    require_non_negative(lambda_a, "lambda_a");
    require_non_negative(depth_falloff, "depth_falloff");
    require_positive(displacement_scale, "displacement_scale");
    require_positive(visibility_tolerance, "visibility_tolerance");
    require_positive(detail_layers, "detail_layers");
    require_positive(detail_width, "detail_width");
    require_non_negative(detail_epochs, "detail_epochs");
    require_positive(detail_batch_points, "detail_batch_points");
    require_positive(learning_rate, "learning_rate");
    require_non_negative(frequencies, "frequencies");
    if (k_neighbors < 6) {
        throw ConfigError("fusion config: k_neighbors must be at least 6, got " + std::to_string(k_neighbors));
    }
    require_non_negative(subdivision, "subdivision");
    require_positive(anchors, "anchors");
    require_positive(anchor_weight, "anchor_weight");
}

// ---------------------------------------------------------------------------
// Query inputs

QueryInputs QueryInputs::build(const RiggedTemplate& rig, std::span<const Vec3> positions,
                               const Eigen::MatrixXd& weights, const PositionalEncoding& encoding)
{
    const auto n = static_cast<Eigen::Index>(positions.size());
    if (weights.rows() != n || weights.cols() != rig.joint_count()) {
        throw TopologyError("query inputs: weight matrix is " + std::to_string(weights.rows()) + " x " +
                            std::to_string(weights.cols()) + " for " + std::to_string(n) + " locations");
    }
    QueryInputs out;
    out.encoded.resize(encoding.output_dim(3), n);
    out.masks.resize(rig.joint_count(), n);
    out.weights = weights.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        encoding.encode(positions[static_cast<std::size_t>(i)], out.encoded.col(i));
        out.masks.col(i) = pose_mask(rig, weights.row(i).transpose());
    }
    return out;
}

QueryInputs QueryInputs::build(const RiggedTemplate& rig, std::span<const SurfaceSample> samples,
                               const PositionalEncoding& encoding)
{
    Points positions(samples.size());
    Eigen::MatrixXd weights(static_cast<Eigen::Index>(samples.size()), rig.joint_count());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        positions[i] = query_point(rig, samples[i]);
        const SurfaceSample s = samples[i].skin_weights.size() == rig.joint_count()
                                    ? samples[i]
                                    : rig.sample(samples[i].face, samples[i].bary);
        weights.row(static_cast<Eigen::Index>(i)) = s.skin_weights.transpose();
    }
    return build(rig, positions, weights, encoding);
}

Eigen::MatrixXd QueryInputs::assemble(const Pose& pose, Eigen::Index begin, Eigen::Index count) const
{
    const Eigen::Index e = encoded.rows();
    const Eigen::Index J = masks.rows();
    if (pose.theta.rows() != J) {
        throw NumericError("query inputs: pose has " + std::to_string(pose.theta.rows()) + " joints, expected " +
                           std::to_string(J));
    }
    Eigen::MatrixXd x(e + 3 * J, count);
    x.topRows(e) = encoded.middleCols(begin, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < J; ++j) {
            x.block<3, 1>(e + 3 * j, i) = masks(j, begin + i) * pose.theta.row(j).transpose();
        }
    }
    return x;
}

Vec3 query_point(const RiggedTemplate& rig, const SurfaceSample& sample)
{
    return sample.position(rig.mesh);
}

// ---------------------------------------------------------------------------
// Base mesh

Subdivision BaseMeshModel::canonical_subdivision() const
{
    return midpoint_subdivide(rig.mesh, config.subdivision, rig.skin_weights, true);
}

int BaseMeshModel::input_dim() const
{
    return encoding.output_dim(3) + 3 * rig.joint_count();
}

const Pose& BaseMeshModel::pose_checked(const Pose& pose) const
{
    pose.validate(rig.joint_count());
    return pose;
}

BaseMeshModel make_base_model(const RiggedTemplate& rig, const FusionConfig& config)
{
    config.validate();
    rig.validate();
    BaseMeshModel model;
    model.rig = rig;
    model.config = config;
    model.encoding = PositionalEncoding{config.frequencies, config.include_input};
    model.f_d = Mlp(mlp_widths(model.input_dim(), config.base_layers, config.base_width), mix_seed(config.seed, 1));
    model.f_d.zero_output_layer();
    const Subdivision sub = model.canonical_subdivision();
    if (config.anchors > sub.mesh.vertex_count()) {
        throw ConfigError("fusion config: " + std::to_string(config.anchors) + " anchors requested but the subdivided " +
                          "template has " + std::to_string(sub.mesh.vertex_count()) + " vertices");
    }
    model.anchors = sample_anchors(sub.mesh, config.anchors, config.seed);
    return model;
}

TriangleMesh build_base_mesh(const BaseMeshModel& model, const Pose& pose)
{
    const Exec exec = model.config.exec;
    return pose_base(model, base_offsets(model, template_inputs(model), pose, exec), pose, exec);
}

TriangleMesh build_lbs_mesh(const RiggedTemplate& rig, const Pose& pose)
{
    pose.validate(rig.joint_count());
    return rig.mesh.with_vertices(lbs_apply(rig, pose, rig.mesh.vertices()));
}

namespace {

struct BaseFrameData {
    Eigen::MatrixXd inputs;     ///< assembled f_d inputs for the frame's pose
    std::vector<Mat4> blended;  ///< per template vertex sum_j w_j T_j
    KdTree scan_tree;
    std::vector<double> mu;
};

struct BaseStepResult {
    MlpGradients grads;
    double data = 0.0;
    double regular = 0.0;
    double anchor = 0.0;
};

} // namespace

void train_base(BaseMeshModel& model, std::span<const PointCloudFrame> frames, std::span<const Pose> poses,
                TrainingReport* report)
{
    const FusionConfig& cfg = model.config;
    cfg.validate();
    if (frames.empty()) {
        throw ConfigError("train_base: no frames");
    }
    if (frames.size() != poses.size()) {
        throw ConfigError("train_base: " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(poses.size()) + " poses");
    }
    const RiggedTemplate& rig = model.rig;
    const int K = rig.mesh.vertex_count();
    const QueryInputs inputs = template_inputs(model);
    const LaplacianMatrix uniform = uniform_laplacian(rig.mesh);
    const Eigen::SparseMatrix<double> uniform_t = uniform.matrix.transpose();
    const SubdividedTemplate sub = subdivided_template(model);

    std::vector<SurfaceSample> anchor_samples;
    for (int a : model.anchors) {
        anchor_samples.push_back(sub.samples[static_cast<std::size_t>(a)]);
    }

    std::vector<BaseFrameData> data(frames.size());
    parallel_for_dynamic(static_cast<std::ptrdiff_t>(frames.size()), cfg.exec, [&](std::ptrdiff_t t) {
        const PointCloudFrame& frame = frames[static_cast<std::size_t>(t)];
        const Pose& pose = poses[static_cast<std::size_t>(t)];
        frame.validate();
        pose.validate(rig.joint_count());
        if (frame.size() == 0) {
            throw ConfigError("train_base: frame " + std::to_string(t) + " is empty");
        }
        BaseFrameData& d = data[static_cast<std::size_t>(t)];
        d.inputs = inputs.assemble(pose);
        const std::vector<Mat4> T = forward_kinematics(rig, pose);
        d.blended.resize(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            d.blended[static_cast<std::size_t>(k)] = blend_transforms(T, rig.skin_weights.row(k).transpose());
        }
        d.scan_tree = KdTree(frame.points);
        d.mu = selective_weights(frame, cfg.depth_falloff);
    });

    const double s = cfg.displacement_scale;
    const AdamConfig adam{cfg.learning_rate};
    std::mt19937_64 rng(mix_seed(cfg.seed, 3));
    std::vector<int> order(frames.size());
    std::iota(order.begin(), order.end(), 0);

    // One frame's terms of the batch objective and its f_d gradient. E_d is a sum
    // over the frame's points, estimated from `subset` when points are subsampled.
    auto frame_step = [&](int t, const std::vector<int>& subset) {
        const BaseFrameData& d = data[static_cast<std::size_t>(t)];
        const PointCloudFrame& frame = frames[static_cast<std::size_t>(t)];
        Mlp::Cache cache;
        const Eigen::MatrixXd y = model.f_d.forward(d.inputs, cache);

        Points posed(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            const Vec3 c = rig.mesh.vertex(k) + s * y.col(k);
            const Mat4& M = d.blended[static_cast<std::size_t>(k)];
            posed[static_cast<std::size_t>(k)] = M.topLeftCorner<3, 3>() * c + M.topRightCorner<3, 1>();
        }
        const TriangleMesh base = rig.mesh.with_vertices(posed);
        Eigen::MatrixX3d grad = Eigen::MatrixX3d::Zero(K, 3);
        BaseStepResult r;

        // E_d: selectively weighted point-to-surface distance.
        const SurfaceLocator locator(base);
        const double scale_m = static_cast<double>(frame.size()) / static_cast<double>(subset.size());
        for (int i : subset) {
            const Vec3& p = frame.points[static_cast<std::size_t>(i)];
            const Projection proj = locator.project(p);
            const double mu = d.mu[static_cast<std::size_t>(i)];
            const Vec3 diff = p - proj.point;
            r.data += mu * diff.squaredNorm() * scale_m;
            const Face& f = rig.mesh.face(proj.face);
            for (int c = 0; c < 3; ++c) {
                grad.row(f[static_cast<std::size_t>(c)]) -= (2.0 * mu * scale_m * proj.bary[c]) * diff.transpose();
            }
        }

        // E_r: uniform Laplacian of the posed base.
        if (cfg.lambda_r > 0.0) {
            Eigen::MatrixX3d V(K, 3);
            for (int k = 0; k < K; ++k) {
                V.row(k) = posed[static_cast<std::size_t>(k)].transpose();
            }
            const Eigen::MatrixX3d delta = uniform.matrix * V;
            r.regular = cfg.lambda_r * delta.squaredNorm();
            grad += (2.0 * cfg.lambda_r) * (uniform_t * delta);
        }

        // E_a: anchors pulled toward the scan.
        if (cfg.lambda_a > 0.0 && !anchor_samples.empty()) {
            std::vector<std::pair<std::size_t, Vec3>> active;
            for (std::size_t a = 0; a < anchor_samples.size(); ++a) {
                const SurfaceSample& as = anchor_samples[a];
                const Vec3 x = interpolate(rig.mesh.faces(), posed, as.face, as.bary);
                const Neighbor nn = d.scan_tree.nearest(x);
                const Vec3 diff = x - frame.points[static_cast<std::size_t>(nn.index)];
                if (frame.has_depth()) {
                    if (frame.viewpoint && base.face_normal(as.face).dot(*frame.viewpoint - x) <= 0.0) {
                        continue;
                    }
                    if (diff.norm() > cfg.visibility_tolerance) {
                        continue;
                    }
                }
                active.emplace_back(a, diff);
            }
            for (const auto& [a, diff] : active) {
                const SurfaceSample& as = anchor_samples[a];
                r.anchor += cfg.lambda_a * diff.squaredNorm();
                const Face& f = rig.mesh.face(as.face);
                for (int c = 0; c < 3; ++c) {
                    grad.row(f[static_cast<std::size_t>(c)]) += (2.0 * cfg.lambda_a * as.bary[c]) * diff.transpose();
                }
            }
        }

        Eigen::MatrixXd dy(3, K);
        for (int k = 0; k < K; ++k) {
            dy.col(k) = s * d.blended[static_cast<std::size_t>(k)].topLeftCorner<3, 3>().transpose() *
                        grad.row(k).transpose();
        }
        r.grads = model.f_d.backward(cache, dy);
        return r;
    };

    const int batch = std::min<int>(cfg.base_batch_frames, static_cast<int>(frames.size()));
    for (int epoch = 0; epoch < cfg.base_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double e_data = 0.0, e_reg = 0.0, e_anchor = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            const auto n = static_cast<std::ptrdiff_t>(end - start);
            std::vector<std::vector<int>> subsets(static_cast<std::size_t>(n));
            for (std::ptrdiff_t b = 0; b < n; ++b) {
                const int t = order[start + static_cast<std::size_t>(b)];
                const int count = static_cast<int>(frames[static_cast<std::size_t>(t)].size());
                auto& sub_idx = subsets[static_cast<std::size_t>(b)];
                if (cfg.base_points_per_frame <= 0 || cfg.base_points_per_frame >= count) {
                    sub_idx.resize(static_cast<std::size_t>(count));
                    std::iota(sub_idx.begin(), sub_idx.end(), 0);
                } else {
                    std::uniform_int_distribution<int> pick(0, count - 1);
                    sub_idx.resize(static_cast<std::size_t>(cfg.base_points_per_frame));
                    for (int& i : sub_idx) {
                        i = pick(rng);
                    }
                }
            }
            std::vector<BaseStepResult> results(static_cast<std::size_t>(n));
            parallel_for_dynamic(n, cfg.exec, [&](std::ptrdiff_t b) {
                results[static_cast<std::size_t>(b)] =
                    frame_step(order[start + static_cast<std::size_t>(b)], subsets[static_cast<std::size_t>(b)]);
            });
            MlpGradients total = std::move(results.front().grads);
            double l_data = results.front().data, l_reg = results.front().regular, l_anchor = results.front().anchor;
            for (std::size_t b = 1; b < results.size(); ++b) {
                total.add(results[b].grads);
                l_data += results[b].data;
                l_reg += results[b].regular;
                l_anchor += results[b].anchor;
            }
            const double loss = l_data + l_reg + l_anchor;
            if (!std::isfinite(loss) || !std::isfinite(total.squared_norm())) {
                throw NumericError("train_base: loss diverged at epoch " + std::to_string(epoch));
            }
            adam_step(model.f_d, total, adam);
            if (!model.f_d.all_finite()) {
                throw NumericError("train_base: parameters diverged at epoch " + std::to_string(epoch));
            }
            e_data += l_data;
            e_reg += l_reg;
            e_anchor += l_anchor;
        }
        if (report) {
            const double nf = static_cast<double>(frames.size());
            report->data.push_back(e_data / nf);
            report->regular.push_back(e_reg / nf);
            report->anchor.push_back(e_anchor / nf);
            report->loss.push_back((e_data + e_reg + e_anchor) / nf);
        }
    }
}

BaseMeshModel train_base(const RiggedTemplate& rig, std::span<const PointCloudFrame> frames,
                         std::span<const Pose> poses, const FusionConfig& config, TrainingReport* report)
{
    BaseMeshModel model = make_base_model(rig, config);
    train_base(model, frames, poses, report);
    return model;
}

// ---------------------------------------------------------------------------
// Training pairs and the detail network

TrainingSet build_training_pairs(const BaseMeshModel& model, std::span<const PointCloudFrame> frames,
                                 std::span<const Pose> poses, int k)
{
    if (frames.size() != poses.size()) {
        throw ConfigError("build_training_pairs: " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(poses.size()) + " poses");
    }
    const Exec exec = model.config.exec;
    TrainingSet set;
    set.poses.assign(poses.begin(), poses.end());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const PointCloudFrame& frame = frames[t];
        frame.validate();
        const TriangleMesh base = build_base_mesh(model, poses[t]);
        const SurfaceLocator locator(base);
        const std::vector<Projection> proj = locator.project_all(frame.points, exec);

        ApproxLaplacianOptions options;
        options.k = k;
        options.exec = exec;
        options.orient_normals.resize(frame.size());
        for (std::size_t i = 0; i < frame.size(); ++i) {
            options.orient_normals[i] = base.face_normal(proj[i].face);
        }
        const PointLaplacian lap = approx_laplacian(frame, options);
        const std::vector<double> mu = selective_weights(frame, model.config.depth_falloff);
        set.flagged += lap.flagged_count;
        for (std::size_t i = 0; i < frame.size(); ++i) {
            if (lap.flagged[i]) {
                continue;
            }
            TrainingPair pair;
            pair.sample = model.rig.sample(proj[i].face, proj[i].bary);
            pair.gt_laplacian = lap.delta[i];
            pair.displacement = frame.points[i] - proj[i].point;
            pair.weight = mu[i];
            pair.frame = static_cast<int>(t);
            set.pairs.push_back(std::move(pair));
        }
    }
    return set;
}

DetailModel train_detail(const BaseMeshModel& model, const TrainingSet& set, TrainingReport* report)
{
    const FusionConfig& cfg = model.config;
    cfg.validate();
    if (set.pairs.empty()) {
        throw ConfigError("train_detail: no training pairs");
    }
    const RiggedTemplate& rig = model.rig;
    const auto n = static_cast<Eigen::Index>(set.pairs.size());
    const int J = rig.joint_count();

    std::vector<std::vector<Mat4>> transforms;
    for (const Pose& pose : set.poses) {
        pose.validate(J);
        transforms.push_back(forward_kinematics(rig, pose));
    }

    // Per-pair canonical position, mask, blended rotation and target.
    Eigen::MatrixXd positions(3, n), masks(J, n), targets(3, n);
    std::vector<Mat3> rotations(static_cast<std::size_t>(n));
    Eigen::VectorXd mu(n);
    parallel_for(n, cfg.exec, [&](std::ptrdiff_t i) {
        const TrainingPair& p = set.pairs[static_cast<std::size_t>(i)];
        if (p.frame < 0 || p.frame >= static_cast<int>(set.poses.size())) {
            throw ConfigError("train_detail: pair references frame " + std::to_string(p.frame));
        }
        positions.col(i) = query_point(rig, p.sample);
        masks.col(i) = pose_mask(rig, p.sample.skin_weights);
        rotations[static_cast<std::size_t>(i)] =
            blended_linear(transforms[static_cast<std::size_t>(p.frame)], p.sample.skin_weights);
        targets.col(i) = cfg.target == DetailTarget::Laplacian ? p.gt_laplacian : p.displacement;
        mu[i] = p.weight;
    });
    if (!targets.allFinite()) {
        throw NumericError("train_detail: non-finite training target");
    }

    DetailModel detail;
    detail.base = model;
    const double rms = std::sqrt(targets.squaredNorm() / static_cast<double>(n));
    detail.field_scale = rms > 0.0 ? rms : 1.0;
    const double inv_scale = 1.0 / detail.field_scale;
    detail.f_l = Mlp(mlp_widths(model.input_dim(), cfg.detail_layers, cfg.detail_width), mix_seed(cfg.seed, 2));
    detail.f_l.zero_output_layer();

    const AdamConfig adam{cfg.learning_rate};
    std::mt19937_64 rng(mix_seed(cfg.seed, 4));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const Eigen::Index enc_dim = model.encoding.output_dim(3);
    const Eigen::Index batch = std::min<Eigen::Index>(cfg.detail_batch_points, n);

    for (int epoch = 0; epoch < cfg.detail_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double e_loss = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index b = std::min(batch, n - start);
            Eigen::MatrixXd x(model.input_dim(), b);
            parallel_for(b, cfg.exec, [&](std::ptrdiff_t c) {
                const Eigen::Index i = order[static_cast<std::size_t>(start + c)];
                model.encoding.encode(positions.col(i), x.col(c).head(enc_dim));
                const Pose& pose = set.poses[static_cast<std::size_t>(set.pairs[static_cast<std::size_t>(i)].frame)];
                for (int j = 0; j < J; ++j) {
                    x.block<3, 1>(enc_dim + 3 * j, c) = masks(j, i) * pose.theta.row(j).transpose();
                }
            });
            const Eigen::Index blocks = (b + Mlp::kBlock - 1) / Mlp::kBlock;
            std::vector<double> block_loss(static_cast<std::size_t>(blocks), 0.0);
            const double inv_b = 1.0 / static_cast<double>(b);
            const MlpGradients grads = detail.f_l.gradients(
                x,
                [&](const Eigen::MatrixXd& y, Eigen::Index begin) {
                    Eigen::MatrixXd dy(3, y.cols());
                    double loss = 0.0;
                    for (Eigen::Index c = 0; c < y.cols(); ++c) {
                        const Eigen::Index i = order[static_cast<std::size_t>(start + begin + c)];
                        const Mat3& R = rotations[static_cast<std::size_t>(i)];
                        const Vec3 r = R * y.col(c) - targets.col(i) * inv_scale;
                        loss += mu[i] * r.squaredNorm();
                        dy.col(c) = (2.0 * mu[i] * inv_b) * (R.transpose() * r);
                    }
                    block_loss[static_cast<std::size_t>(begin / Mlp::kBlock)] = loss;
                    return dy;
                },
                cfg.exec);
            double loss = 0.0;
            for (double l : block_loss) {
                loss += l;
            }
            loss *= inv_b * detail.field_scale * detail.field_scale;
            if (!std::isfinite(loss) || !std::isfinite(grads.squared_norm())) {
                throw NumericError("train_detail: loss diverged at epoch " + std::to_string(epoch));
            }
            adam_step(detail.f_l, grads, adam);
            if (!detail.f_l.all_finite()) {
                throw NumericError("train_detail: parameters diverged at epoch " + std::to_string(epoch));
            }
            e_loss += loss;
            ++batches;
        }
        if (report) {
            report->data.push_back(e_loss / batches);
            report->loss.push_back(e_loss / batches);
        }
    }
    return detail;
}

Eigen::MatrixXd predict_canonical(const DetailModel& detail, const QueryInputs& inputs, const Pose& pose, Exec exec)
{
    return detail.f_l.forward(inputs.assemble(pose), exec) * detail.field_scale;
}

namespace {

Points rotate_field(const Eigen::MatrixXd& canonical, std::span<const Mat4> transforms,
                    const Eigen::MatrixXd& weights, Exec exec)
{
    Points out(static_cast<std::size_t>(canonical.cols()));
    parallel_for(canonical.cols(), exec, [&](std::ptrdiff_t i) {
        out[static_cast<std::size_t>(i)] = lbs_rotate(transforms, weights.col(i), canonical.col(i));
    });
    return out;
}

} // namespace

Points predict_field(const DetailModel& detail, const QueryInputs& inputs, const Pose& pose, Exec exec)
{
    const std::vector<Mat4> T = forward_kinematics(detail.base.rig, detail.base.pose_checked(pose));
    return rotate_field(predict_canonical(detail, inputs, pose, exec), T, inputs.weights, exec);
}

// ---------------------------------------------------------------------------
// Reconstruction and applications

Reconstructor::Reconstructor(const DetailModel& detail, const BaseMeshModel* base)
    : detail_(detail), base_(base ? *base : detail.base)
{
    const BaseMeshModel& own = detail_.base;
    if (base_.rig.joint_count() != own.rig.joint_count()) {
        throw TopologyError("detail transfer: source rig has " + std::to_string(own.rig.joint_count()) +
                            " joints, target has " + std::to_string(base_.rig.joint_count()));
    }
    if (!base_.rig.mesh.same_topology(own.rig.mesh) || base_.config.subdivision != own.config.subdivision) {
        throw TopologyError("detail transfer: source and target templates differ in topology");
    }
    const SubdividedTemplate sub = subdivided_template(base_);
    subdivision_ = sub.subdivision;
    samples_ = sub.samples;
    // Query points and pose features come from the template f_l was trained on;
    // the rotation into posed space uses the target's skinning weights.
    std::vector<SurfaceSample> own_samples(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        own_samples[i] = own.rig.sample(samples_[i].face, samples_[i].bary);
    }
    inputs_ = QueryInputs::build(own.rig, own_samples, own.encoding);
    rotation_weights_.resize(base_.rig.joint_count(), static_cast<Eigen::Index>(samples_.size()));
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        rotation_weights_.col(static_cast<Eigen::Index>(i)) = samples_[i].skin_weights;
    }
}

ReconstructedFrame Reconstructor::run(const Pose& pose, double scale)
{
    const Exec exec = base_.config.exec;
    const TriangleMesh coarse = build_base_mesh(base_, pose);
    ReconstructedFrame out;
    out.base = subdivision_.mesh.with_vertices(subdivided_positions(coarse, samples_));

    const std::vector<Mat4> T = forward_kinematics(base_.rig, pose);
    out.field = rotate_field(predict_canonical(detail_, inputs_, pose, exec), T, rotation_weights_, exec);
    if (scale != 1.0) {
        out.field = scale_field(out.field, scale);
    }

    if (detail_.base.config.target == DetailTarget::Displacement) {
        Points positions = out.base.vertices();
        for (std::size_t i = 0; i < positions.size(); ++i) {
            positions[i] += out.field[i];
        }
        out.solve.positions = positions;
        out.mesh = out.base.with_vertices(std::move(positions));
        return out;
    }

    const LaplacianMatrix op = uniform_angle_laplacian(out.base);
    if (!solver_) {
        solver_.emplace(op, base_.anchors, base_.config.anchor_weight);
    } else {
        solver_->update_operator(op);
    }
    Points anchor_positions;
    anchor_positions.reserve(base_.anchors.size());
    for (int a : base_.anchors) {
        anchor_positions.push_back(out.base.vertex(a));
    }
    out.solve = solver_->solve(out.field, anchor_positions);
    out.mesh = out.base.with_vertices(out.solve.positions);
    return out;
}

TriangleMesh reconstruct_frame(const DetailModel& detail, const Pose& pose, double scale)
{
    Reconstructor r(detail);
    return r.run(pose, scale).mesh;
}

TriangleMesh transfer_details(const DetailModel& detail, const BaseMeshModel& base, const Pose& pose)
{
    Reconstructor r(detail, &base);
    return r.run(pose).mesh;
}

std::vector<TriangleMesh> animate(const DetailModel& detail, std::span<const Pose> poses)
{
    Reconstructor r(detail);
    std::vector<TriangleMesh> out;
    out.reserve(poses.size());
    for (const Pose& pose : poses) {
        out.push_back(r.run(pose).mesh);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const DetailModel& detail)
{
    std::ostringstream out(std::ios::out | std::ios::binary);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_raw(out, kCheckpointVersion);
    write_raw(out, detail.base.rig.hash());
    nlohmann::json meta = {
        {"config", config_json(detail.base.config)},
        {"field_scale", detail.field_scale},
    };
    const std::string text = meta.dump();
    write_raw(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_raw(out, static_cast<std::uint32_t>(detail.base.anchors.size()));
    for (int a : detail.base.anchors) {
        write_raw(out, static_cast<std::int32_t>(a));
    }
    detail.base.f_d.save(out, false);
    detail.f_l.save(out, false);

    std::ofstream file(path, std::ios::out | std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    const std::string bytes = out.str();
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) {
        throw IoError("failed while writing " + path.string());
    }
}

DetailModel load_checkpoint(const std::filesystem::path& path, const RiggedTemplate& rig)
{
    std::ifstream in(path, std::ios::in | std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw IoError(path.string() + ": not a model checkpoint");
    }
    const auto version = read_raw<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto hash = read_raw<std::uint64_t>(in, "rig hash");
    if (hash != rig.hash()) {
        throw IoError(path.string() + ": checkpoint was trained on a different rig");
    }
    const auto length = read_raw<std::uint64_t>(in, "metadata length");
    if (length > (std::uint64_t{1} << 24)) {
        throw IoError(path.string() + ": implausible metadata length");
    }
    std::string text(static_cast<std::size_t>(length), '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
        throw IoError(path.string() + ": truncated metadata");
    }
    DetailModel detail;
    try {
        const nlohmann::json meta = nlohmann::json::parse(text);
        detail.base.config = config_from_json(meta.at("config"));
        detail.field_scale = meta.at("field_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad checkpoint metadata: " + e.what());
    }
    detail.base.rig = rig;
    detail.base.encoding = PositionalEncoding{detail.base.config.frequencies, detail.base.config.include_input};
    const auto count = read_raw<std::uint32_t>(in, "anchor count");
    detail.base.anchors.resize(count);
    for (int& a : detail.base.anchors) {
        a = read_raw<std::int32_t>(in, "anchors");
    }
    try {
        detail.base.f_d = Mlp::load(in);
        detail.f_l = Mlp::load(in);
    } catch (const Error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    const int expected = detail.base.input_dim();
    if (detail.base.f_d.input_dim() != expected || detail.f_l.input_dim() != expected ||
        detail.base.f_d.output_dim() != 3 || detail.f_l.output_dim() != 3) {
        throw IoError(path.string() + ": network widths do not match the rig and encoding");
    }
    const int sub_count = detail.base.canonical_subdivision().mesh.vertex_count();
    for (int a : detail.base.anchors) {
        if (a < 0 || a >= sub_count) {
            throw IoError(path.string() + ": anchor index " + std::to_string(a) + " out of range");
        }
    }
    return detail;
}

// ---------------------------------------------------------------------------
// Metrics

double wrinkle_amplitude(const TriangleMesh& detailed, const TriangleMesh& base)
{
    if (detailed.vertex_count() != base.vertex_count()) {
        throw TopologyError("wrinkle_amplitude: vertex counts differ");
    }
    const Points normals = base.vertex_normals();
    double ss = 0.0;
    for (int k = 0; k < base.vertex_count(); ++k) {
        const double h = (detailed.vertex(k) - base.vertex(k)).dot(normals[static_cast<std::size_t>(k)]);
        ss += h * h;
    }
    return std::sqrt(ss / std::max(1, base.vertex_count()));
}

namespace {

double one_sided_consistency(const TriangleMesh& a, const TriangleMesh& b, Exec exec)
{
    const Points normals = a.vertex_normals();
    const SurfaceLocator locator(b);
    const std::vector<Projection> proj = locator.project_all(a.vertices(), exec);
    double sum = 0.0;
    for (std::size_t i = 0; i < proj.size(); ++i) {
        sum += std::abs(normals[i].dot(b.face_normal(proj[i].face)));
    }
    return sum / static_cast<double>(proj.size());
}

} // namespace

double normal_consistency(const TriangleMesh& a, const TriangleMesh& b, Exec exec)
{
    return 0.5 * (one_sided_consistency(a, b, exec) + one_sided_consistency(b, a, exec));
}

double max_edge_ratio(const TriangleMesh& mesh)
{
    double worst = 1.0;
    for (int k = 0; k < mesh.vertex_count(); ++k) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int j : mesh.neighbors(k)) {
            const double l = (mesh.vertex(j) - mesh.vertex(k)).norm();
            lo = std::min(lo, l);
            hi = std::max(hi, l);
        }
        if (hi > 0.0) {
            worst = std::max(worst, lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
        }
    }
    return worst;
}

double rms_surface_distance(const TriangleMesh& from, const TriangleMesh& to, Exec exec)
{
    return std::sqrt(chamfer(from.vertices(), to, exec));
}

} // namespace lapfusion
