#pragma once

// Command-line front end. Exit codes: 0 ok, 1 unexpected failure, 2 config
// or usage error, 3 data error, 4 numerical divergence.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "factormap/config.hpp"
#include "factormap/metrics.hpp"

namespace factormap {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

int exit_code_for(const std::exception& e);

struct RunSummary {
  std::filesystem::path run_dir;
  int updates = 0;
  int snapshots = 0;
};

// Resolves the dataset, runs the pipeline and writes config.json,
// metrics.csv, timing.csv, uncertainty.csv, map.ckpt and snapshots under
// output.dir/output.run_id. Throws factormap::Error subclasses.
RunSummary cmd_run(const RunConfig& cfg, std::ostream& log);
// Writes a synthetic dataset in the simple directory layout (with depth/).
void cmd_synth(const SyntheticSceneSpec& spec, std::uint64_t seed, const std::filesystem::path& out);
ReconReport cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& gt, double threshold);
void cmd_render(const std::filesystem::path& checkpoint, const Pose& pose,
                const CameraIntrinsics* intr, const std::filesystem::path& out_png,
                const std::filesystem::path& out_depth);
void cmd_report(const std::filesystem::path& checkpoint, std::ostream& out);

// Full argument parsing and dispatch; returns the process exit code.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace factormap
