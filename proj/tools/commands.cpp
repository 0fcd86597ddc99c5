#include "commands.hpp"

#include "lapfusion/error.hpp"
#include "lapfusion/io.hpp"
#include "lapfusion/oracles.hpp"
#include "lapfusion/parallel.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

namespace fs = std::filesystem;

namespace lapfusion::cli {
namespace {

std::string numbered(const std::string& prefix, std::size_t i, const char* ext)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04zu", i);
    return prefix + buf + ext;
}

fs::path output_dir(const RunConfig& config)
{
    if (config.output.empty())
        throw ConfigError("no output directory given (paths.output or --output)");
    std::error_code ec;
    fs::create_directories(config.output, ec);
    if (ec)
        throw IoError("cannot create " + config.output.string() + ": " + ec.message());
    return config.output;
}

fs::path checkpoint_path(const RunConfig& config)
{
    if (!config.checkpoint.empty())
        return config.checkpoint;
    return output_dir(config) / "model.lfm";
}

struct Seconds {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double operator()() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::vector<Pose> load_poses(const RunConfig& config, const RiggedTemplate& rig)
{
    require_exists(config.poses, "pose file");
    std::vector<Pose> poses = read_poses(config.poses, rig.joint_count());
    if (poses.empty())
        throw IoError(config.poses.string() + ": no poses");
    return poses;
}

RiggedTemplate load_rig(const fs::path& path, const char* what)
{
    require_exists(path, what);
    return read_rig(path);
}

DetailModel load_model(const RunConfig& config, const RiggedTemplate& rig)
{
    const fs::path path = config.checkpoint.empty() ? config.output / "model.lfm" : config.checkpoint;
    require_exists(path, "checkpoint");
    DetailModel model = load_checkpoint(path, rig);
    model.base.config.exec = config.fusion.exec;
    return model;
}

void write_sequence(const std::vector<Pose>& poses, const fs::path& dir, const std::string& prefix,
                    std::ostream& log, const std::function<TriangleMesh(std::size_t)>& frame)
{
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const fs::path path = dir / numbered(prefix, i, ".obj");
        write_obj(path, frame(i));
        log << "  " << path.filename().string() << "\n";
    }
}

} // namespace

std::vector<fs::path> list_scans(const fs::path& dir)
{
    require_exists(dir, "scan directory");
    if (!fs::is_directory(dir))
        throw IoError(dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("frame_") && entry.path().extension() == ".ply")
            out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty())
        throw IoError(dir.string() + ": no frame_*.ply scans");
    return out;
}

void cmd_synth(const RunConfig& config, std::ostream& log)
{
    const fs::path dir = output_dir(config);
    const RiggedTemplate rig = make_synthetic_rig(config.rig_spec);
    // Poses and scans draw from separate streams of the one synth seed.
    const std::vector<Pose> poses =
        make_synthetic_poses(rig.joint_count(), config.frames, config.max_bend, config.scan.seed * 2 + 1);
    WrinkleSpec wrinkles = config.wrinkles;
    wrinkles.subdivision = config.fusion.subdivision;
    const SyntheticScans scans = make_synthetic_scans(rig, poses, wrinkles, config.scan);

    write_rig(dir / "rig.json", rig);
    write_poses(dir / "poses.txt", poses);
    fs::create_directories(dir / "scans");
    fs::create_directories(dir / "ground_truth");
    std::ofstream rms(dir / "ground_truth" / "wrinkle_rms.csv");
    if (!rms)
        throw IoError("cannot write " + (dir / "ground_truth" / "wrinkle_rms.csv").string());
    rms << "frame,wrinkle_rms\n";
    for (std::size_t i = 0; i < poses.size(); ++i) {
        write_ply(dir / "scans" / numbered("frame", i, ".ply"), scans.frames[i]);
        write_obj(dir / "ground_truth" / numbered("gt", i, ".obj"), scans.ground_truth[i]);
        rms << i << "," << format_double(scans.wrinkle_rms[i]) << "\n";
    }
    log << "synth: " << poses.size() << " frames, " << config.scan.points << " points each, rig with "
        << rig.mesh.vertex_count() << " vertices -> " << dir.string() << "\n";
}

void cmd_fit(const RunConfig& config, std::ostream& log)
{
    const RiggedTemplate rig = load_rig(config.rig, "rig");
    const std::vector<Pose> poses = load_poses(config, rig);
    const std::vector<fs::path> files = list_scans(config.scans);
    if (files.size() != poses.size())
        throw IoError(std::to_string(files.size()) + " scans in " + config.scans.string() + " but " +
                      std::to_string(poses.size()) + " poses in " + config.poses.string());
    std::vector<PointCloudFrame> frames;
    for (std::size_t i = 0; i < files.size(); ++i) {
        frames.push_back(read_ply(files[i]));
        frames.back().frame_index = static_cast<int>(i);
    }
    const fs::path ckpt = checkpoint_path(config);
    const fs::path dir = output_dir(config);

    Seconds clock;
    TrainingReport base_report;
    const BaseMeshModel base = train_base(rig, frames, poses, config.fusion, &base_report);
    log << "fit: base network trained in " << std::fixed << std::setprecision(1) << clock() << " s, loss "
        << std::defaultfloat << std::setprecision(6) << base_report.loss.front() << " -> " << base_report.loss.back()
        << "\n";
    const TrainingSet set = build_training_pairs(base, frames, poses, config.fusion.k_neighbors);
    log << "fit: " << set.pairs.size() << " training pairs (" << set.flagged << " scan points flagged)\n";
    TrainingReport detail_report;
    const DetailModel detail = train_detail(base, set, &detail_report);
    log << "fit: detail network trained, loss " << detail_report.loss.front() << " -> " << detail_report.loss.back()
        << ", total " << std::fixed << std::setprecision(1) << clock() << " s\n"
        << std::defaultfloat << std::setprecision(6);

    save_checkpoint(ckpt, detail);
    std::ofstream csv(dir / "loss.csv");
    if (!csv)
        throw IoError("cannot write " + (dir / "loss.csv").string());
    csv << "stage,epoch,loss,data,regular,anchor\n";
    for (std::size_t e = 0; e < base_report.loss.size(); ++e)
        csv << "base," << e << "," << format_double(base_report.loss[e]) << ","
            << format_double(base_report.data[e]) << "," << format_double(base_report.regular[e]) << ","
            << format_double(base_report.anchor[e]) << "\n";
    for (std::size_t e = 0; e < detail_report.loss.size(); ++e)
        csv << "detail," << e << "," << format_double(detail_report.loss[e]) << ","
            << format_double(detail_report.data[e]) << ",,\n";
    log << "fit: wrote " << ckpt.string() << " and " << (dir / "loss.csv").string() << "\n";
}

void cmd_reconstruct(const RunConfig& config, std::ostream& log, const fs::path& dump_matrix,
                     const std::string& prefix)
{
    const RiggedTemplate rig = load_rig(config.rig, "rig");
    const std::vector<Pose> poses = load_poses(config, rig);
    const DetailModel model = load_model(config, rig);
    const fs::path dir = output_dir(config);
    Reconstructor rec(model);
    log << prefix << ": " << poses.size() << " poses, scale " << config.scale << "\n";
    write_sequence(poses, dir, prefix, log, [&](std::size_t i) {
        TriangleMesh mesh = rec.run(poses[i], config.scale).mesh;
        if (i == 0 && !dump_matrix.empty()) {
            write_matrix_market(dump_matrix, rec.solver()->normal_matrix());
            log << "  normal matrix -> " << dump_matrix.string() << "\n";
        }
        return mesh;
    });
}

void cmd_scale(const RunConfig& config, std::ostream& log)
{
    cmd_reconstruct(config, log, {}, "scale");
}

void cmd_transfer(const RunConfig& config, std::ostream& log)
{
    const RiggedTemplate source_rig = load_rig(config.rig, "rig");
    const RiggedTemplate target_rig = load_rig(config.target_rig, "target rig");
    const DetailModel model = load_model(config, source_rig);
    BaseMeshModel target;
    if (config.target_checkpoint.empty()) {
        target = make_base_model(target_rig, model.base.config);
        log << "transfer: no target checkpoint, detail goes onto the skinned target template\n";
    } else {
        require_exists(config.target_checkpoint, "target checkpoint");
        target = load_checkpoint(config.target_checkpoint, target_rig).base;
    }
    target.config.exec = config.fusion.exec;
    const std::vector<Pose> poses = load_poses(config, target_rig);
    const fs::path dir = output_dir(config);
    Reconstructor rec(model, &target);
    log << "transfer: " << poses.size() << " poses\n";
    write_sequence(poses, dir, "transfer", log, [&](std::size_t i) { return rec.run(poses[i]).mesh; });
}

void cmd_animate(const RunConfig& config, std::ostream& log, int inbetween)
{
    if (inbetween < 0)
        throw ConfigError("--inbetween must be non-negative");
    const RiggedTemplate rig = load_rig(config.rig, "rig");
    const std::vector<Pose> keys = load_poses(config, rig);
    std::vector<Pose> poses;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        poses.push_back(keys[i]);
        if (i + 1 == keys.size())
            break;
        for (int s = 1; s <= inbetween; ++s)
            poses.push_back(interpolate(keys[i], keys[i + 1], static_cast<double>(s) / (inbetween + 1)));
    }
    const DetailModel model = load_model(config, rig);
    const fs::path dir = output_dir(config);
    Reconstructor rec(model);
    log << "animate: " << keys.size() << " key poses, " << poses.size() << " frames\n";
    write_sequence(poses, dir, "anim", log, [&](std::size_t i) { return rec.run(poses[i], config.scale).mesh; });
}

bool cmd_validate(const RunConfig& config, std::ostream& log)
{
    Seconds clock;
    const std::vector<OracleResult> rows = run_operator_oracles(config.fusion.seed, config.fusion.exec);
    std::size_t width = 0;
    for (const OracleResult& r : rows)
        width = std::max(width, r.name.size());
    bool ok = true;
    for (const OracleResult& r : rows) {
        ok = ok && r.passed;
        log << std::left << std::setw(static_cast<int>(width) + 2) << r.name << (r.passed ? "PASS  " : "FAIL  ")
            << std::setprecision(4) << r.value << (r.at_least ? " > " : " < ") << r.threshold << "   " << r.detail
            << "\n";
    }
    log << std::setprecision(6) << (ok ? "all oracles passed" : "ORACLE FAILURE") << " (" << std::fixed
        << std::setprecision(2) << clock() << " s)\n"
        << std::defaultfloat << std::setprecision(6);
    return ok;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Pose-dependent surface detail from point-cloud sequences via neural Laplacian fields"};
    app.require_subcommand(1, 1);

    fs::path config_path;
    std::optional<fs::path> rig, poses, scans, output, checkpoint, target_rig, target_checkpoint;
    std::optional<int> threads, anchors, base_epochs, detail_epochs, base_width, detail_width, frames, points;
    std::optional<double> anchor_weight, lambda_r, lambda_a, amplitude, noise;
    std::optional<std::uint64_t> seed;
    std::optional<DetailTarget> target;
    bool deterministic = false;

    app.add_option("-c,--config", config_path, "TOML configuration file")->check(CLI::ExistingFile);
    app.add_option("--rig", rig, "Rig file (JSON)");
    app.add_option("--poses", poses, "Pose sequence file");
    app.add_option("--scans", scans, "Directory of frame_*.ply scans");
    app.add_option("-o,--output", output, "Output directory");
    app.add_option("--checkpoint", checkpoint, "Model checkpoint (default <output>/model.lfm)");
    app.add_option("--target-rig", target_rig, "Transfer target rig");
    app.add_option("--target-checkpoint", target_checkpoint, "Transfer target base model");
    app.add_option("--threads", threads, "Worker threads (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", deterministic, "Single thread, serial kernels: bit-reproducible output");
    app.add_option("--seed", seed, "Root random seed");
    app.add_option("--anchors", anchors, "Anchor count n");
    app.add_option("--anchor-weight", anchor_weight, "Soft anchor weight");
    app.add_option("--lambda-r", lambda_r, "Base regularizer weight");
    app.add_option("--lambda-a", lambda_a, "Anchor depth term weight");
    app.add_option("--base-epochs", base_epochs, "f_d epochs");
    app.add_option("--detail-epochs", detail_epochs, "f_l epochs");
    app.add_option("--base-width", base_width, "f_d hidden width");
    app.add_option("--detail-width", detail_width, "f_l hidden width");
    app.add_option("--target", target, "f_l target")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, DetailTarget>{{"laplacian", DetailTarget::Laplacian},
                                                {"displacement", DetailTarget::Displacement}},
            CLI::ignore_case));
    app.add_option("--frames", frames, "Synthetic frame count");
    app.add_option("--points", points, "Synthetic points per scan");
    app.add_option("--amplitude", amplitude, "Synthetic wrinkle amplitude (m)");
    app.add_option("--noise", noise, "Synthetic scan noise sigma (m)");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic rig, poses, scans and ground truth");
    auto* fit = app.add_subcommand("fit", "Train the base and detail networks");
    auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct detailed meshes for a pose sequence");
    auto* transfer = app.add_subcommand("transfer", "Apply learned detail to another rig");
    auto* scale = app.add_subcommand("scale", "Reconstruct with the detail field scaled by --scale");
    auto* animate = app.add_subcommand("animate", "Reconstruct key poses and interpolated in-betweens");
    auto* validate = app.add_subcommand("validate", "Run the operator oracle suite");
    for (auto* sub : {synth, fit, reconstruct, transfer, scale, animate, validate})
        sub->fallthrough();
    fs::path dump_matrix;
    reconstruct->add_option("--dump-matrix", dump_matrix, "Write the first solve's normal matrix (Matrix Market)");
    std::optional<double> scale_factor;
    scale->add_option("-s,--scale", scale_factor, "Detail scale s")->required();
    animate->add_option("--scale", scale_factor, "Detail scale s");
    int inbetween = 0;
    animate->add_option("--inbetween", inbetween, "Interpolated poses between consecutive key poses")
        ->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        auto set = [](auto& field, const auto& flag) {
            if (flag)
                field = *flag;
        };
        set(config.rig, rig);
        set(config.poses, poses);
        set(config.scans, scans);
        set(config.output, output);
        set(config.checkpoint, checkpoint);
        set(config.target_rig, target_rig);
        set(config.target_checkpoint, target_checkpoint);
        set(config.threads, threads);
        set(config.fusion.seed, seed);
        set(config.fusion.anchors, anchors);
        set(config.fusion.anchor_weight, anchor_weight);
        set(config.fusion.lambda_r, lambda_r);
        set(config.fusion.lambda_a, lambda_a);
        set(config.fusion.base_epochs, base_epochs);
        set(config.fusion.detail_epochs, detail_epochs);
        set(config.fusion.base_width, base_width);
        set(config.fusion.detail_width, detail_width);
        set(config.fusion.target, target);
        set(config.frames, frames);
        set(config.scan.points, points);
        set(config.wrinkles.amplitude, amplitude);
        set(config.scan.noise, noise);
        set(config.scale, scale_factor);
        config.deterministic = config.deterministic || deterministic;
        config.validate();

        if (config.deterministic) {
            set_thread_count(1);
            set_default_exec(Exec::Serial);
            config.fusion.exec = Exec::Serial;
        } else if (config.threads > 0) {
            set_thread_count(config.threads);
        }

        if (*synth) {
            cmd_synth(config, out);
        } else if (*fit) {
            cmd_fit(config, out);
        } else if (*reconstruct) {
            cmd_reconstruct(config, out, dump_matrix);
        } else if (*transfer) {
            cmd_transfer(config, out);
        } else if (*scale) {
            cmd_scale(config, out);
        } else if (*animate) {
            cmd_animate(config, out, inbetween);
        } else if (*validate) {
            return cmd_validate(config, out) ? kOk : kNumericError;
        }
        return kOk;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIoError;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const TopologyError& e) {
        err << "topology error: " << e.what() << "\n";
        return kTopologyError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

} // namespace lapfusion::cli
