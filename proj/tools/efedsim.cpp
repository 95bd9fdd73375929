// efedsim: command-line front end for the cost model, SVD analysis,
// federated pipeline and softmax verification.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "efedsim/commands.hpp"
#include "efedsim/config.hpp"

namespace {

using namespace efedsim;

int emit(const cli::CommandResult& result, const std::optional<std::string>& out_flag) {
  std::cout << result.stdout_text;
  for (const auto& note : result.notes) std::cerr << note << '\n';
  if (const auto dir = cli::resolve_out_dir(out_flag)) cli::write_files(result, *dir);
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efedsim - federated transformer inference simulator"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string format = "csv";
  bool dump = false;
  app.add_option("--config", config_path, "Experiment config file (section.key = value)");
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Directory for CSV outputs (EFEDSIM_OUT_DIR takes precedence)");
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv"}));
  app.add_flag("--dump-config", dump, "Print the canonical config and exit");

  std::vector<std::uint64_t> dims{5, 10, 100, 10000};
  auto* cost = app.add_subcommand("cost-table", "Global-memory reads, centralized vs federated");
  cost->add_option("--dims", dims, "Square dimensions, comma separated")->delimiter(',');

  std::string shape;
  std::string spectrum = "geometric";
  std::string matrix_file;
  double keep_frac = 0.4;
  auto* svd_cmd = app.add_subcommand("svd-analyze", "Compression ratio and energy ratio over k");
  svd_cmd->add_option("--shape", shape, "Weight shape MxN (default 768x2304)");
  svd_cmd->add_option("--spectrum", spectrum, "Synthetic spectrum family")
      ->check(CLI::IsMember({"geometric", "power"}));
  svd_cmd->add_option("--matrix", matrix_file, "Binary matrix file (u32 rows, u32 cols, f64 LE data)");
  svd_cmd->add_option("--keep-frac", keep_frac, "Fraction of singular values kept for the selected row");

  cli::BandwidthOptions bw;
  auto* bw_cmd = app.add_subcommand("bandwidth", "Bandwidth reduce rate over compression ratios");
  bw_cmd->add_option("--m", bw.m, "Weight rows");
  bw_cmd->add_option("--n", bw.n, "Weight columns");
  bw_cmd->add_option("--t", bw.t, "Sequence length");
  bw_cmd->add_option("--batch", bw.batch, "Batch size");
  bw_cmd->add_option("--ratios", bw.ratios, "Compression ratios, comma separated")->delimiter(',');

  auto* run_cmd = app.add_subcommand("pipeline-run", "Verification and inference rounds over the federation");

  cli::VerifyDemoOptions vd;
  std::optional<std::size_t> workers;
  auto* vd_cmd = app.add_subcommand("verify-demo", "Table-based softmax verification on random scores");
  vd_cmd->add_option("--rows", vd.rows, "Query rows");
  vd_cmd->add_option("--cols", vd.cols, "Key rows (softmax width)");
  vd_cmd->add_option("--head-dim", vd.head_dim, "Query/key width");
  vd_cmd->add_option("--workers", workers, "Worker count (overrides verify.n_workers)");
  vd_cmd->add_option("--tamper", vd.tamper, "Offset added to one claimed probability per row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : parse_config(config_path);
    if (seed) config.seed = *seed;
    if (workers) config.verify_workers = *workers;
    config.validate();

    if (dump) {
      std::cout << dump_config(config);
      return cli::kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return cli::kExitUsage;
    }

    if (cost->parsed()) return emit(cli::cost_table(dims), out_dir);
    if (svd_cmd->parsed()) {
      cli::SvdAnalyzeOptions opts;
      if (!shape.empty()) opts.shape = cli::parse_shape(shape);
      opts.family = spectrum == "power" ? svd::SpectrumFamily::power_law : svd::SpectrumFamily::geometric;
      if (!matrix_file.empty()) opts.matrix_file = matrix_file;
      opts.keep_frac = keep_frac;
      return emit(cli::svd_analyze(opts), out_dir);
    }
    if (bw_cmd->parsed()) return emit(cli::bandwidth(bw), out_dir);
    if (run_cmd->parsed()) {
      std::cerr << "config_digest " << config_digest(config) << '\n';
      return emit(cli::pipeline_run(config), out_dir);
    }
    if (vd_cmd->parsed()) {
      std::cerr << "config_digest " << config_digest(config) << '\n';
      return emit(cli::verify_demo(config, vd), out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const cli::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitVerdict;
  }
  return cli::kExitUsage;
}
