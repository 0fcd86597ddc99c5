#pragma once

#include "lapfusion/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lapfusion::cli {

/// Process exit codes, one per error class.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kIoError = 3,
    kNumericError = 4,
    kTopologyError = 5,
};

/// Writes rig.json, poses.txt, scans/frame_NNNN.ply and ground_truth/gt_NNNN.obj
/// (plus ground_truth/wrinkle_rms.csv) under config.output.
void cmd_synth(const RunConfig& config, std::ostream& log);

/// Trains f_d then f_l on the scans; writes the checkpoint and output/loss.csv.
void cmd_fit(const RunConfig& config, std::ostream& log);

/// One OBJ per pose, named <prefix>_NNNN.obj. `dump_matrix`, when set, receives
/// the normal matrix of the first pose's solve in Matrix Market form.
void cmd_reconstruct(const RunConfig& config, std::ostream& log, const std::filesystem::path& dump_matrix = {},
                     const std::string& prefix = "recon");
/// cmd_reconstruct with the predicted field scaled by config.scale.
void cmd_scale(const RunConfig& config, std::ostream& log);
/// Detail of config.checkpoint on the base mesh of config.target_rig, driven by
/// config.target_checkpoint when given and plain skinning otherwise.
void cmd_transfer(const RunConfig& config, std::ostream& log);
/// Reconstructs the pose sequence with `inbetween` interpolated poses inserted
/// between consecutive key poses.
void cmd_animate(const RunConfig& config, std::ostream& log, int inbetween = 0);

/// Prints the oracle table; true when every row passes.
bool cmd_validate(const RunConfig& config, std::ostream& log);

/// Scan files of a directory (frame_*.ply), sorted by name.
std::vector<std::filesystem::path> list_scans(const std::filesystem::path& dir);

/// Parses the command line, applies TOML then flags, runs the subcommand and maps
/// exceptions to exit codes. Messages go to `out` and `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace lapfusion::cli
