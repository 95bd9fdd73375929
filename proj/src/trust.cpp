#include "efedsim/trust.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace efedsim::trust {

void VerifierConfig::validate() const {
  if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("trust.theta must be in [0, 1]");
  if (probe_count == 0) throw std::invalid_argument("trust.probe_count must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("trust.tau must be positive");
  if (!(weight > 0.0 && weight <= 1.0)) throw std::invalid_argument("trust.w must be in (0, 1]");
  if (n_verifiers == 0) throw std::invalid_argument("trust.n_verifiers must be >= 1");
  if (probe_len == 0) throw std::invalid_argument("trust.probe_len must be >= 1");
}

std::size_t count_within_tolerance(std::span<const Matrix> server_outputs,
                                   std::span<const Matrix> reference_outputs, double tau) {
  if (server_outputs.size() != reference_outputs.size()) {
    throw DimensionError("probe output count " + std::to_string(server_outputs.size()) +
                         " does not match reference count " + std::to_string(reference_outputs.size()));
  }
  std::size_t within = 0;
  for (std::size_t i = 0; i < server_outputs.size(); ++i) {
    // max_abs_diff rejects shape mismatches; NaN deviations count as failures
    const double dev = max_abs_diff(server_outputs[i], reference_outputs[i]);
    if (dev <= tau) ++within;
  }
  return within;
}

double estimate_accuracy(std::span<const Matrix> server_outputs,
                         std::span<const Matrix> reference_outputs, double tau) {
  if (server_outputs.empty()) throw std::invalid_argument("estimate_accuracy: empty probe set");
  const std::size_t within = count_within_tolerance(server_outputs, reference_outputs, tau);
  return static_cast<double>(within) / static_cast<double>(server_outputs.size());
}

double trust_score(double acc, std::size_t layers, std::size_t max_layers, double weight) {
  if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("trust_score: acc must be in [0, 1]");
  if (!(weight >= 0.0 && weight <= 1.0)) throw std::invalid_argument("trust_score: weight must be in [0, 1]");
  if (layers < 1 || layers > max_layers) {
    throw std::invalid_argument("trust_score: need 1 <= layers <= max_layers");
  }
  return acc * static_cast<double>(layers) / static_cast<double>(max_layers) * weight;
}

ServerStatus apply_threshold(const TrustRecord& record, double theta) {
  return record.score >= theta ? ServerStatus::active : ServerStatus::deactivated;
}

TrustRecord make_record(NodeId server, double acc, std::size_t layers, std::size_t max_layers,
                        double weight, double theta) {
  TrustRecord r{server, acc, layers, max_layers, weight, trust_score(acc, layers, max_layers, weight),
                ServerStatus::active};
  r.status = apply_threshold(r, theta);
  return r;
}

std::vector<Matrix> make_probes(std::size_t count, std::size_t probe_len, std::size_t d_model,
                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Matrix> probes;
  probes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) probes.push_back(rng.normal_matrix(probe_len, d_model, 1.0));
  return probes;
}

std::vector<TrustRecord> verification_round(fed::Simulation& sim, const ModelParams& reference,
                                            std::span<const Matrix> probes,
                                            const VerifierConfig& config) {
  config.validate();
  if (probes.empty()) throw std::invalid_argument("verification_round: empty probe set");
  const PartitionPlan plan = sim.topology().plan;
  const std::size_t max_layers = plan.max_layers();

  std::vector<TrustRecord> records;
  for (const auto& entry : plan.entries()) {
    if (!sim.topology().servers.at(entry.server).active) continue;
    const std::span<const LayerParams> trusted(reference.layers.data() + entry.range.first,
                                               entry.range.size());
    std::vector<std::size_t> partial(config.n_verifiers, 0);
    for (std::size_t v = 0; v < config.n_verifiers; ++v) {
      std::vector<Matrix> observed, expected;
      for (std::size_t i = v; i < probes.size(); i += config.n_verifiers) {
        observed.push_back(sim.probe_server(wire::verifier_node(static_cast<std::uint32_t>(v)),
                                            entry.server, static_cast<std::uint32_t>(i), probes[i]));
        expected.push_back(run_layers(probes[i], trusted));
      }
      partial[v] = count_within_tolerance(observed, expected, config.tau);
    }
    std::size_t within = 0;
    for (auto c : partial) within += c;
    const double acc = static_cast<double>(within) / static_cast<double>(probes.size());
    records.push_back(make_record(wire::server_node(entry.server), acc, entry.range.size(), max_layers,
                                  config.weight, config.theta));
  }
  return records;
}

std::vector<std::uint32_t> enforce(fed::Simulation& sim, const std::vector<TrustRecord>& records) {
  std::vector<std::uint32_t> failed;
  for (const auto& r : records) {
    sim.send(wire::MessageKind::trust_report, wire::verifier_node(0), wire::client_node(),
             wire::TrustReportPayload{r.server, r.acc, static_cast<double>(r.layers), r.score, r.status});
    if (r.status == ServerStatus::deactivated) failed.push_back(r.server.index);
  }
  // Deactivate all first so reassignment never hands layers to another failed server.
  for (auto s : failed) sim.deactivate(s, wire::verifier_node(0));
  for (auto s : failed) sim.reassign_server(s);
  return failed;
}

bool honest_servers_fail_gate(const PartitionPlan& plan, const VerifierConfig& config) {
  if (plan.size() == 0) return false;
  std::size_t min_layers = plan.entries().front().range.size();
  for (const auto& e : plan.entries()) min_layers = std::min(min_layers, e.range.size());
  return trust_score(1.0, min_layers, plan.max_layers(), config.weight) < config.theta;
}

}  // namespace efedsim::trust
