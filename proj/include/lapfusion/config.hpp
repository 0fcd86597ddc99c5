#pragma once

#include "lapfusion/fusion.hpp"
#include "lapfusion/synthetic.hpp"

#include <filesystem>
#include <string>

namespace lapfusion {

/// Everything one CLI command needs. Loaded from a TOML file; command-line flags
/// are applied on top by the caller.
///
///   [paths]           rig, poses, scans, output, checkpoint, target_rig, target_checkpoint
///   [run]             threads, deterministic
///   [base]            layers, width, epochs, batch_frames, points_per_frame, lambda_r,
///                     lambda_a, depth_falloff, displacement_scale, visibility_tolerance
///   [detail]          layers, width, epochs, batch_points, target ("laplacian" | "displacement")
///   [training]        learning_rate, frequencies, include_input, k_neighbors, seed
///   [reconstruction]  subdivision, anchors, anchor_weight, scale
///   [synth]           joints, radius, length, edge, blend, frames, max_bend, amplitude,
///                     wavelength, rest_fraction, offset, bulge, bulge_width, round,
///                     points, noise, camera = [x, y, z]
struct RunConfig {
    std::filesystem::path rig;
    std::filesystem::path poses;
    std::filesystem::path scans;   ///< directory of frame_*.ply
    std::filesystem::path output;  ///< directory, created on demand
    std::filesystem::path checkpoint;
    std::filesystem::path target_rig;         ///< detail transfer target
    std::filesystem::path target_checkpoint;  ///< its trained base model

    int threads = 0;  ///< 0 keeps the OpenMP default
    bool deterministic = false;

    FusionConfig fusion;
    double scale = 1.0;

    RigSpec rig_spec;
    WrinkleSpec wrinkles;
    ScanSpec scan;
    int frames = 20;
    double max_bend = 0.8;

    /// Throws ConfigError for out-of-range values.
    void validate() const;
};

/// Unknown sections or keys, wrong value types and TOML syntax errors raise
/// ConfigError; a missing file raises IoError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& toml_text, const std::string& source = "<string>");

/// Throws IoError naming the first listed path that does not exist.
void require_exists(const std::filesystem::path& path, const char* what);

} // namespace lapfusion
