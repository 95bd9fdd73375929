#include "efedsim/commands.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <tuple>

#include "efedsim/codec.hpp"
#include "efedsim/costmodel.hpp"
#include "efedsim/softmax_verify.hpp"

namespace efedsim::cli {

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
  return buf;
}

std::string u64(std::uint64_t v) { return std::to_string(v); }

std::string output_digest(const Matrix& m) {
  std::uint64_t h = fnv1a64({});
  for (double v : m.data()) {
    std::uint8_t bytes[8];
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i, bits >>= 8) bytes[i] = static_cast<std::uint8_t>(bits & 0xFF);
    h = fnv1a64(bytes, h);
  }
  return hex64(h);
}

std::string status_name(wire::ServerStatus s) {
  return s == wire::ServerStatus::active ? "active" : "deactivated";
}

}  // namespace

CommandResult cost_table(const std::vector<std::uint64_t>& dims) {
  if (dims.empty()) throw UsageError("cost-table: --dims needs at least one value");
  for (auto d : dims) {
    if (d == 0) throw UsageError("cost-table: dimensions must be >= 1");
  }
  CommandResult out;
  out.stdout_text = "dim,centralized,federated,reduction\n";
  for (const auto& row : cost::read_count_table(dims)) {
    out.stdout_text += u64(row.dim) + "," + u64(row.report.centralized_reads) + "," +
                       u64(row.report.federated_reads) + "," + percent(row.report.reduction) + "\n";
  }
  out.files.push_back({"cost_table.csv", out.stdout_text});
  return out;
}

std::size_t keep_rank(double keep_frac, std::size_t r) {
  if (!(keep_frac > 0.0 && keep_frac <= 1.0)) throw UsageError("--keep-frac must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(keep_frac * static_cast<double>(r)));
  return std::clamp<std::size_t>(k, 1, r);
}

CommandResult svd_analyze(const SvdAnalyzeOptions& options) {
  std::size_t m = 768;
  std::size_t n = 2304;
  if (options.shape) std::tie(m, n) = *options.shape;
  if (m == 0 || n == 0) throw UsageError("svd-analyze: shape dimensions must be >= 1");

  std::vector<double> spectrum;
  if (options.matrix_file) {
    Matrix w;
    try {
      w = wire::load_matrix_file(*options.matrix_file);
    } catch (const std::exception& e) {
      throw UsageError(std::string("svd-analyze: ") + e.what());
    }
    if (options.shape && (w.rows() != m || w.cols() != n)) {
      throw UsageError("svd-analyze: matrix file header says " + w.shape_string() + " but --shape is " +
                       std::to_string(m) + "x" + std::to_string(n));
    }
    if (w.size() == 0) throw UsageError("svd-analyze: matrix file holds an empty matrix");
    m = w.rows();
    n = w.cols();
    spectrum = svd::svd(w).full_sigma();
  } else {
    spectrum = svd::synthetic_spectrum(options.family, std::min(m, n));
  }

  const std::size_t r = spectrum.size();
  const std::size_t selected = keep_rank(options.keep_frac, r);
  CommandResult out;
  out.stdout_text = "k,compression_ratio,energy_ratio,selected\n";
  for (std::size_t k = 1; k <= r; ++k) {
    out.stdout_text += std::to_string(k) + "," + format_number(svd::compression_ratio(m, n, k)) + "," +
                       format_number(svd::energy_ratio(spectrum, k)) + "," + (k == selected ? "1" : "0") + "\n";
  }
  out.files.push_back({"svd_analyze.csv", out.stdout_text});
  return out;
}

std::vector<double> default_ratio_grid() {
  std::vector<double> grid;
  for (int i = 2; i <= 8; ++i) grid.push_back(i / 10.0);
  return grid;
}

CommandResult bandwidth(const BandwidthOptions& options) {
  const auto ratios = options.ratios.empty() ? default_ratio_grid() : options.ratios;
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("bandwidth: ratios must be in (0, 1], got " + format_number(r));
  }
  if (options.m == 0 || options.n == 0 || options.t == 0 || options.batch == 0) {
    throw UsageError("bandwidth: m, n, t and batch must be >= 1");
  }
  const std::uint64_t m = options.m, n = options.n, t = options.t, batch = options.batch;

  CommandResult out;
  out.stdout_text =
      "ratio,k_hat,policy,original,optimized,reduce_rate,"
      "reads_original,reads_compressed,reads_original_hierarchy,reads_compressed_hierarchy\n";
  std::optional<double> at_07[2];
  for (double ratio : ratios) {
    for (auto policy : {cost::AccountingPolicy::transfer_bytes, cost::AccountingPolicy::multiplication_reads}) {
      const auto rep = cost::bandwidth_reduce_rate(m, n, t, batch, ratio, policy);
      out.stdout_text += format_number(ratio) + "," + u64(rep.k_hat) + "," + std::string(cost::to_string(policy)) +
                         "," + u64(rep.original_access) + "," + u64(rep.optimized_access) + "," +
                         format_number(rep.reduce_rate) + "," +
                         u64(cost::compressed_access(m, n, t, rep.k_hat, false, false)) + "," +
                         u64(cost::compressed_access(m, n, t, rep.k_hat, false, true)) + "," +
                         u64(cost::compressed_access(m, n, t, rep.k_hat, true, false)) + "," +
                         u64(cost::compressed_access(m, n, t, rep.k_hat, true, true)) + "\n";
      if (ratio == 0.7) at_07[static_cast<int>(policy)] = rep.reduce_rate;
    }
  }
  if (at_07[0] && at_07[1]) {
    out.notes.push_back("note: reduce_rate at ratio 0.7 is " + percent(*at_07[0]) + " (transfer-bytes) and " +
                        percent(*at_07[1]) +
                        " (multiplication-reads); the often-quoted 60% is not reached under either policy");
  }
  out.files.push_back({"bandwidth.csv", out.stdout_text});
  return out;
}

Experiment build_experiment(const ExperimentConfig& config) {
  config.validate();
  Experiment ex;
  ex.params = init_params(config.model, derive_seed(config.seed, 1));
  Rng rng(derive_seed(config.seed, 2));
  for (std::size_t i = 0; i < config.run.input_len; ++i) {
    ex.tokens.push_back(static_cast<std::uint32_t>(rng.below(config.model.vocab_size)));
  }
  const auto split = config.resolved_split();
  ex.topology.plan = PartitionPlan::from_counts(split);
  for (const auto& b : config.resolved_behaviors()) ex.topology.servers.push_back(fed::ServerSlot{b, true});
  return ex;
}

CommandResult pipeline_run(const ExperimentConfig& config) {
  Experiment ex = build_experiment(config);
  const Matrix baseline = model_forward(ex.tokens, ex.params);

  CommandResult out;
  if (trust::honest_servers_fail_gate(ex.topology.plan, config.trust)) {
    out.notes.push_back("warning: trust.theta exceeds min(l)/max(l)*w; honest servers with fewer layers will be "
                        "deactivated");
  }
  if (config.compression.mode != fed::CompressionSpec::Mode::none) {
    out.notes.push_back("warning: verifiers compare against full-precision layers; compressed shards pass only if "
                        "trust.tau exceeds the compression error");
  }

  fed::Simulation sim(ex.params, ex.topology, {config.compression, config.seed, nullptr});
  sim.distribute_model();

  std::string trust_log = "round,server,acc,layers,score,status\n";
  std::string events = "round,event,server,detail\n";
  std::optional<Matrix> output;
  std::string failure;
  for (std::size_t round = 1; round <= config.run.rounds && failure.empty(); ++round) {
    const auto probes = trust::make_probes(config.trust.probe_count, config.trust.probe_len, config.model.d_model,
                                           derive_seed(config.seed, 1000 + round));
    const auto records = trust::verification_round(sim, ex.params, probes, config.trust);
    for (const auto& r : records) {
      trust_log += std::to_string(round) + "," + std::to_string(r.server.index) + "," + format_number(r.acc) + "," +
                   std::to_string(r.layers) + "," + format_number(r.score) + "," + status_name(r.status) + "\n";
    }
    const std::size_t trace_mark = sim.trace().size();
    try {
      for (auto s : trust::enforce(sim, records)) {
        events += std::to_string(round) + ",deactivated," + std::to_string(s) + ",\n";
      }
    } catch (const fed::NoActiveServer& e) {
      failure = e.what();
      events += std::to_string(round) + ",stalled,," + std::string(e.what()) + "\n";
      break;
    }
    for (std::size_t i = trace_mark; i < sim.trace().size(); ++i) {
      const auto& msg = sim.trace()[i];
      if (msg.kind != wire::MessageKind::reassignment) continue;
      const auto& p = std::get<wire::ReassignmentPayload>(msg.payload);
      events += std::to_string(round) + ",reassigned," + std::to_string(p.failed.index) + ",layers " +
                std::to_string(p.first_layer) + "-" + std::to_string(p.last_layer - 1) + " to server " +
                std::to_string(p.replacement.index) + "\n";
    }
    try {
      output = sim.run_pipeline(ex.tokens).output;
    } catch (const fed::PipelineStalled& e) {
      failure = e.what();
      events += std::to_string(round) + ",stalled,," + std::string(e.what()) + "\n";
    }
  }
  if (config.run.rounds == 0) output = sim.run_pipeline(ex.tokens).output;

  std::string ledger = "from,to,kind,messages,frame_bytes,payload_bytes\n";
  for (const auto& [edge, kinds] : sim.ledger().edges()) {
    for (const auto& [kind, stats] : kinds) {
      ledger += edge.first.str() + "," + edge.second.str() + "," + std::string(wire::to_string(kind)) + "," +
                u64(stats.messages) + "," + u64(stats.frame_bytes) + "," + u64(stats.payload_bytes) + "\n";
    }
  }

  const bool have_output = output.has_value() && failure.empty();
  const double diff = have_output ? max_abs_diff(*output, baseline) : std::nan("");
  const bool match = have_output && diff <= config.run.tolerance;
  std::size_t active = 0;
  for (const auto& s : sim.topology().servers) active += s.active ? 1 : 0;

  std::string summary = "key,value\n";
  summary += "config_digest," + config_digest(config) + "\n";
  summary += "rounds," + std::to_string(config.run.rounds) + "\n";
  summary += "active_servers," + std::to_string(active) + "\n";
  summary += "output_digest," + (have_output ? output_digest(*output) : std::string("none")) + "\n";
  summary += "monolith_digest," + output_digest(baseline) + "\n";
  summary += "max_abs_diff," + (have_output ? format_number(diff) : std::string("nan")) + "\n";
  summary += "tolerance," + format_number(config.run.tolerance) + "\n";
  summary += std::string("matches_monolith,") + (match ? "true" : "false") + "\n";

  out.stdout_text = summary;
  out.files = {{"trust_log.csv", trust_log}, {"events.csv", events}, {"ledger.csv", ledger},
               {"summary.csv", summary}};
  if (!failure.empty()) out.notes.push_back("error: " + failure);
  out.exit_code = match ? kExitOk : kExitVerdict;
  return out;
}

CommandResult verify_demo(const ExperimentConfig& config, const VerifyDemoOptions& options) {
  config.validate();
  if (options.rows == 0 || options.cols == 0 || options.head_dim == 0) {
    throw UsageError("verify-demo: --rows, --cols and --head-dim must be >= 1");
  }
  if (!std::isfinite(options.tamper)) throw UsageError("verify-demo: --tamper must be finite");

  Rng rng(derive_seed(config.seed, 3));
  const Matrix q = rng.normal_matrix(options.rows, options.head_dim, 1.0);
  const Matrix k = rng.normal_matrix(options.cols, options.head_dim, 1.0);
  Matrix claimed = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(options.head_dim))));
  if (options.tamper != 0.0) {
    for (std::size_t r = 0; r < claimed.rows(); ++r) claimed(r, r % claimed.cols()) += options.tamper;
  }

  verify::AttentionCheck check;
  try {
    check = verify::verify_attention_scores(q, k, claimed, config.verify, config.verify_workers);
  } catch (const verify::CoverageError& e) {
    throw UsageError(std::string("verify-demo: ") + e.what());
  }

  const std::string prefix = "," + std::to_string(config.verify.frac_bits) + "," + std::to_string(config.verify.base) +
                             "," + std::to_string(config.verify.digits) + ",";
  CommandResult out;
  out.stdout_text = "row,f,b,K,max_error,bound,pass\n";
  for (std::size_t r = 0; r < check.rows.size(); ++r) {
    const auto& v = check.rows[r];
    out.stdout_text += std::to_string(r) + prefix + format_number(v.max_abs_error) + "," + format_number(v.bound) +
                       "," + (v.pass ? "true" : "false") + "\n";
  }
  out.files.push_back({"verify_demo.csv", out.stdout_text});
  out.exit_code = check.overall.pass ? kExitOk : kExitVerdict;
  return out;
}

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text) {
  const auto x = text.find('x');
  const auto parse = [&](const std::string& part) -> std::size_t {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("shape must look like 768x2304, got '" + text + "'");
    }
    return static_cast<std::size_t>(std::stoull(part));
  };
  if (x == std::string::npos) throw UsageError("shape must look like 768x2304, got '" + text + "'");
  return {parse(text.substr(0, x)), parse(text.substr(x + 1))};
}

std::optional<std::filesystem::path> resolve_out_dir(const std::optional<std::string>& flag) {
  if (const char* env = std::getenv("EFEDSIM_OUT_DIR"); env && *env) return std::filesystem::path(env);
  if (flag && !flag->empty()) return std::filesystem::path(*flag);
  return std::nullopt;
}

void write_files(const CommandResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& f : result.files) {
    std::ofstream os(dir / f.name, std::ios::binary | std::ios::trunc);
    os << f.content;
    if (!os) throw std::runtime_error("cannot write " + (dir / f.name).string());
  }
}

}  // namespace efedsim::cli
