#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "efedsim/codec.hpp"
#include "efedsim/transformer.hpp"

namespace efedsim::fed {

using wire::Message;
using wire::MessageKind;
using wire::NodeId;

/// A deactivated stage has no eligible replacement.
class PipelineStalled : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reassignment found no active server to take over a range.
class NoActiveServer : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BehaviorMode { honest, noisy, zeroing, sign_flip, stale };

/// How a server corrupts the activation it forwards.
struct ServerBehavior {
  BehaviorMode mode = BehaviorMode::honest;
  double noise_sigma = 0.0;  // noisy only

  /// "honest", "noisy:0.1", "zeroing", "sign_flip", "stale".
  static ServerBehavior parse(const std::string& text);
  std::string str() const;

  friend bool operator==(const ServerBehavior&, const ServerBehavior&) = default;
};

struct CompressionSpec {
  enum class Mode { none, energy, ratio };
  Mode mode = Mode::none;
  double value = 1.0;

  static CompressionSpec none() { return {}; }
  static CompressionSpec energy(double e) { return {Mode::energy, e}; }
  static CompressionSpec ratio(double r) { return {Mode::ratio, r}; }
  void validate() const;

  friend bool operator==(const CompressionSpec&, const CompressionSpec&) = default;
};

std::string to_string(CompressionSpec::Mode mode);

struct KindStats {
  std::uint64_t messages = 0;
  std::uint64_t frame_bytes = 0;
  std::uint64_t payload_bytes = 0;

  friend bool operator==(const KindStats&, const KindStats&) = default;
};

/// Cumulative traffic per directed edge, broken down by message kind.
class TransferLedger {
 public:
  using Edge = std::pair<NodeId, NodeId>;

  void record(const Message& msg, std::size_t frame_bytes, std::size_t payload_bytes);

  const std::map<Edge, std::map<MessageKind, KindStats>>& edges() const { return edges_; }
  KindStats totals() const;
  KindStats totals(MessageKind kind) const;
  KindStats edge_totals(const Edge& edge) const;

  friend bool operator==(const TransferLedger&, const TransferLedger&) = default;

 private:
  std::map<Edge, std::map<MessageKind, KindStats>> edges_;
};

struct ServerSlot {
  ServerBehavior behavior;
  bool active = true;

  friend bool operator==(const ServerSlot&, const ServerSlot&) = default;
};

/// Servers are indexed 0..n-1; the plan says which layers each one runs.
struct Topology {
  PartitionPlan plan;
  std::vector<ServerSlot> servers;

  static Topology equal(std::size_t n_servers, std::size_t n_layers,
                        std::vector<ServerBehavior> behaviors = {});
  void validate(std::size_t n_layers) const;

  friend bool operator==(const Topology&, const Topology&) = default;
};

/// Moves the failed server's range to the adjacent stage: the predecessor if
/// it is active, otherwise the successor if active. When neither neighbour is
/// active the range goes to a neighbour that will itself be reassigned, as
/// long as some active server remains. The failed server must already be
/// marked inactive.
Topology reassign(const Topology& topology, std::uint32_t failed);

/// Moves bytes between nodes. Implementations must hand back exactly what
/// the receiver decodes from the frame.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Message transmit(const wire::Bytes& frame) = 0;
};

/// Synchronous in-process delivery: decode the frame and return it.
class InProcessBus final : public Transport {
 public:
  Message transmit(const wire::Bytes& frame) override { return wire::decode(frame); }
};

/// Wire encoding of one weight matrix under a compression target.
wire::WeightShardPayload encode_weight(std::uint32_t layer, wire::WeightRole role,
                                       std::uint8_t head, const Matrix& weight,
                                       const CompressionSpec& compression);
/// What the receiving server materializes.
Matrix materialize(const wire::WeightShardPayload& payload);

struct PipelineResult {
  Matrix output;
  TransferLedger ledger;
  std::vector<Message> trace;  // messages of this run, in send order
};

struct SimulationOptions {
  CompressionSpec compression;
  std::uint64_t seed = 0;
  Transport* transport = nullptr;  // nullptr selects an internal InProcessBus
};

/// Client, servers, and verifiers of one federation exchanging framed
/// messages over a transport. Single-threaded; every message is recorded in
/// the trace and the ledger.
class Simulation {
 public:
  Simulation(ModelParams params, Topology topology, SimulationOptions options = {});

  /// Client ships every server its shard (compressed per options).
  const TransferLedger& distribute_model();

  /// Client embeds, servers run their stages, client applies the output head.
  PipelineResult run_pipeline(std::span<const std::uint32_t> tokens);

  /// Server's stage output for `input`, after its behavior. No messaging.
  Matrix server_process(std::uint32_t server, const Matrix& input);

  /// Verifier sends a ValidationProbe, the server answers with a ProbeResult.
  Matrix probe_server(NodeId verifier, std::uint32_t server, std::uint32_t probe_id,
                      const Matrix& probe);

  /// Marks the server inactive and notifies it with a StatusUpdate.
  void deactivate(std::uint32_t server, NodeId verifier);

  /// Applies fed::reassign, announces it with a Reassignment message, and
  /// ships the moved layers to the replacement if it is active.
  void reassign_server(std::uint32_t failed);

  /// Sends one message through the transport and records it.
  Message send(MessageKind kind, NodeId from, NodeId to, wire::Payload payload);

  const Topology& topology() const { return topology_; }
  const TransferLedger& ledger() const { return ledger_; }
  const std::vector<Message>& trace() const { return trace_; }
  const ModelParams& params() const { return params_; }
  /// Layers currently materialized on a server, keyed by layer index.
  const std::map<std::size_t, LayerParams>& server_layers(std::uint32_t server) const;

 private:
  struct ServerState {
    std::map<std::size_t, LayerParams> layers;
    std::optional<Matrix> last_output;
    std::uint64_t calls = 0;
  };

  void ship_layers(std::uint32_t server, LayerRange range);
  LayerParams receive_layer(std::uint32_t server, std::size_t layer);
  Matrix apply_behavior(std::uint32_t server, const Matrix& input, Matrix honest);

  ModelParams params_;
  Topology topology_;
  SimulationOptions options_;
  InProcessBus default_bus_;
  Transport* transport_;
  std::vector<ServerState> servers_;
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> next_seq_;
  TransferLedger ledger_;
  std::vector<Message> trace_;
};

/// Ships `params` per `plan` on a fresh all-honest federation and returns the
/// resulting ledger.
TransferLedger distribute_model(const ModelParams& params, const PartitionPlan& plan,
                                const CompressionSpec& compression);

}  // namespace efedsim::fed
