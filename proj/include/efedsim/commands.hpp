#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "efedsim/config.hpp"
#include "efedsim/svdkit.hpp"

namespace efedsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerdict = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments or inputs; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OutputFile {
  std::string name;
  std::string content;
};

/// What a subcommand produced. `stdout_text` is the primary CSV; `files` are
/// written only when an output directory is configured.
struct CommandResult {
  int exit_code = kExitOk;
  std::string stdout_text;
  std::vector<OutputFile> files;
  std::vector<std::string> notes;  // one line each, for stderr
};

CommandResult cost_table(const std::vector<std::uint64_t>& dims);

struct SvdAnalyzeOptions {
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  svd::SpectrumFamily family = svd::SpectrumFamily::geometric;
  std::optional<std::filesystem::path> matrix_file;
  double keep_frac = 0.4;
};

/// Rank kept for a keep fraction of r singular values: floor, at least 1.
std::size_t keep_rank(double keep_frac, std::size_t r);

CommandResult svd_analyze(const SvdAnalyzeOptions& options);

struct BandwidthOptions {
  std::uint64_t m = 3072;
  std::uint64_t n = 768;
  std::uint64_t t = 30;
  std::uint64_t batch = 10;
  std::vector<double> ratios;  // empty: 0.2, 0.3, ..., 0.8
};

std::vector<double> default_ratio_grid();

CommandResult bandwidth(const BandwidthOptions& options);

/// Seeded model, federation and input for a config; shared with tests.
struct Experiment {
  ModelParams params;
  std::vector<std::uint32_t> tokens;
  fed::Topology topology;
};
Experiment build_experiment(const ExperimentConfig& config);

/// Writes trust_log.csv, events.csv, ledger.csv and summary.csv.
CommandResult pipeline_run(const ExperimentConfig& config);

struct VerifyDemoOptions {
  std::size_t rows = 64;
  std::size_t cols = 16;
  std::size_t head_dim = 8;
  double tamper = 0.0;
};

CommandResult verify_demo(const ExperimentConfig& config, const VerifyDemoOptions& options);

/// "768x2304" -> {768, 2304}.
std::pair<std::size_t, std::size_t> parse_shape(const std::string& text);

/// EFEDSIM_OUT_DIR when set, otherwise the --out value.
std::optional<std::filesystem::path> resolve_out_dir(const std::optional<std::string>& flag);

void write_files(const CommandResult& result, const std::filesystem::path& dir);

}  // namespace efedsim::cli
