#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "efedsim/federation.hpp"

namespace efedsim::trust {

using wire::NodeId;
using wire::ServerStatus;

struct VerifierConfig {
  double theta = 0.5;
  std::size_t probe_count = 8;
  double tau = 1e-6;
  double weight = 1.0;        // w_i, the same for every server
  std::size_t n_verifiers = 1;
  std::size_t probe_len = 8;  // rows per probe activation

  void validate() const;
};

struct TrustRecord {
  NodeId server;
  double acc = 0.0;
  std::size_t layers = 0;
  std::size_t max_layers = 0;
  double weight = 1.0;
  double score = 0.0;
  ServerStatus status = ServerStatus::active;
};

/// Fraction of probes whose max-abs deviation from the reference is <= tau.
double estimate_accuracy(std::span<const Matrix> server_outputs,
                         std::span<const Matrix> reference_outputs, double tau);

/// Probes within tolerance; the additive piece verifiers combine.
std::size_t count_within_tolerance(std::span<const Matrix> server_outputs,
                                   std::span<const Matrix> reference_outputs, double tau);

/// acc * layers / max_layers * weight.
double trust_score(double acc, std::size_t layers, std::size_t max_layers, double weight);

/// Active iff score >= theta.
ServerStatus apply_threshold(const TrustRecord& record, double theta);

TrustRecord make_record(NodeId server, double acc, std::size_t layers, std::size_t max_layers,
                        double weight, double theta);

/// Gaussian probe activations of shape probe_len x d_model.
std::vector<Matrix> make_probes(std::size_t count, std::size_t probe_len, std::size_t d_model,
                                std::uint64_t seed);

/// Runs every probe through each active server (via the simulation's message
/// bus) and through the verifier's reference copy of the same layers.
/// Probe i is handled by verifier i mod n_verifiers; per-verifier counts are
/// summed before dividing.
std::vector<TrustRecord> verification_round(fed::Simulation& sim, const ModelParams& reference,
                                            std::span<const Matrix> probes,
                                            const VerifierConfig& config);

/// Publishes each record as a TrustReport to the client, then deactivates and
/// reassigns every server whose status is deactivated. Returns the servers
/// that were deactivated, in plan order.
std::vector<std::uint32_t> enforce(fed::Simulation& sim, const std::vector<TrustRecord>& records);

/// True when an honest server (acc = 1) would still score below theta, i.e.
/// theta > min(l_i) / max(l) * w.
bool honest_servers_fail_gate(const PartitionPlan& plan, const VerifierConfig& config);

}  // namespace efedsim::trust
