#pragma once

// The train and analyze commands as library calls. run_* functions throw;
// cmd_* wrappers map exceptions onto the stable exit codes.

#include "ldr/checkpoint.hpp"
#include "ldr/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace ldr {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kCheckpoint = 4;
inline constexpr int kNumerical = 5;
inline constexpr int kCollapse = 6;  // only with --strict
}  // namespace exit_code

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool strict = false;
  std::optional<std::filesystem::path> resume;
};

inline constexpr const char* kMetricsHeader =
    "iteration,delta_r_z,delta_r_zhat,pairwise_sum,total,lr,off_block_mean,on_block_mean,nsc_train,nsc_heldout";
inline constexpr const char* kMetricsVersion = "# ldr-metrics v1";

std::string metrics_row(const TrainRecord& r);

// Applies command-line overrides on top of a loaded config.
ExperimentConfig with_overrides(ExperimentConfig config, const RunOptions& opts);

Dataset build_dataset(const ExperimentConfig& config);
Model build_model(const ExperimentConfig& config, const Dataset& data);

struct TrainOutcome {
  Model model;
  TrainLog log;
  Dataset data;
  std::filesystem::path out_dir;
};

// Trains and writes the run directory: resolved config echo, manifest,
// metrics.csv, rolling and final checkpoints, heatmap.pgm, summary.txt.
TrainOutcome run_train(const ExperimentConfig& config, std::ostream& log,
                       const std::optional<std::filesystem::path>& resume = {});

enum class AnalyzeTask { Heatmap, Sample, Interpolate, Classify, Components };

AnalyzeTask parse_task(const std::string& name);

// Writes the task's artifacts into `out_dir` and returns it.
std::filesystem::path run_analyze(const std::filesystem::path& checkpoint, const ExperimentConfig& config,
                                  AnalyzeTask task, const std::filesystem::path& out_dir, std::ostream& log);

int cmd_train(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& log,
              std::ostream& err);
int cmd_analyze(const std::filesystem::path& checkpoint, const std::filesystem::path& config_path,
                const std::string& task, const RunOptions& opts, std::ostream& log, std::ostream& err);

// Reads LDR_THREADS and pins the linear algebra thread count. Throws
// ConfigError for a malformed value.
int configure_threads();

}  // namespace ldr
