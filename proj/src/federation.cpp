#include "efedsim/federation.hpp"

#include <algorithm>
#include <cstdio>

#include "efedsim/svdkit.hpp"

namespace efedsim::fed {

ServerBehavior ServerBehavior::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  ServerBehavior b;
  if (name == "honest") {
    b.mode = BehaviorMode::honest;
  } else if (name == "noisy") {
    b.mode = BehaviorMode::noisy;
    if (colon == std::string::npos) throw std::invalid_argument("noisy behavior needs a sigma, e.g. noisy:0.1");
    std::size_t used = 0;
    const std::string arg = text.substr(colon + 1);
    try {
      b.noise_sigma = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != arg.size() || !(b.noise_sigma > 0.0)) {
      throw std::invalid_argument("noisy sigma must be a positive number, got '" + arg + "'");
    }
    return b;
  } else if (name == "zeroing") {
    b.mode = BehaviorMode::zeroing;
  } else if (name == "sign_flip") {
    b.mode = BehaviorMode::sign_flip;
  } else if (name == "stale") {
    b.mode = BehaviorMode::stale;
  } else {
    throw std::invalid_argument("unknown server behavior '" + text + "'");
  }
  if (colon != std::string::npos) throw std::invalid_argument("behavior '" + name + "' takes no argument");
  return b;
}

std::string ServerBehavior::str() const {
  switch (mode) {
    case BehaviorMode::honest: return "honest";
    case BehaviorMode::noisy: {
      // shortest form that round-trips through stod
      char buf[32];
      for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, noise_sigma);
        if (std::stod(buf) == noise_sigma) break;
      }
      return "noisy:" + std::string(buf);
    }
    case BehaviorMode::zeroing: return "zeroing";
    case BehaviorMode::sign_flip: return "sign_flip";
    case BehaviorMode::stale: return "stale";
  }
  return "honest";
}

void CompressionSpec::validate() const {
  switch (mode) {
    case Mode::none: return;
    case Mode::energy:
      if (!(value > 0.0 && value <= 1.0)) throw std::invalid_argument("energy target must be in (0, 1]");
      return;
    case Mode::ratio:
      if (!(value > 0.0 && value <= 1.0)) throw std::invalid_argument("compression ratio must be in (0, 1]");
      return;
  }
}

std::string to_string(CompressionSpec::Mode mode) {
  switch (mode) {
    case CompressionSpec::Mode::none: return "none";
    case CompressionSpec::Mode::energy: return "energy";
    case CompressionSpec::Mode::ratio: return "ratio";
  }
  return "none";
}

void TransferLedger::record(const Message& msg, std::size_t frame_bytes, std::size_t payload_bytes) {
  auto& stats = edges_[{msg.from, msg.to}][msg.kind];
  ++stats.messages;
  stats.frame_bytes += frame_bytes;
  stats.payload_bytes += payload_bytes;
}

namespace {

void accumulate(KindStats& into, const KindStats& from) {
  into.messages += from.messages;
  into.frame_bytes += from.frame_bytes;
  into.payload_bytes += from.payload_bytes;
}

}  // namespace

KindStats TransferLedger::totals() const {
  KindStats sum;
  for (const auto& [edge, kinds] : edges_)
    for (const auto& [kind, stats] : kinds) accumulate(sum, stats);
  return sum;
}

KindStats TransferLedger::totals(MessageKind kind) const {
  KindStats sum;
  for (const auto& [edge, kinds] : edges_) {
    auto it = kinds.find(kind);
    if (it != kinds.end()) accumulate(sum, it->second);
  }
  return sum;
}

KindStats TransferLedger::edge_totals(const Edge& edge) const {
  KindStats sum;
  auto it = edges_.find(edge);
  if (it == edges_.end()) return sum;
  for (const auto& [kind, stats] : it->second) accumulate(sum, stats);
  return sum;
}

Topology Topology::equal(std::size_t n_servers, std::size_t n_layers,
                         std::vector<ServerBehavior> behaviors) {
  if (behaviors.empty()) behaviors.assign(n_servers, ServerBehavior{});
  if (behaviors.size() != n_servers) throw std::invalid_argument("one behavior per server required");
  Topology t;
  t.plan = PartitionPlan::equal_split(n_servers, n_layers);
  for (auto& b : behaviors) t.servers.push_back({b, true});
  return t;
}

void Topology::validate(std::size_t n_layers) const {
  if (plan.size() == 0) throw PlanError("topology needs at least one server");
  plan.validate(n_layers);
  for (const auto& e : plan.entries()) {
    if (e.server >= servers.size()) {
      throw PlanError("plan names server " + std::to_string(e.server) + " but only " +
                      std::to_string(servers.size()) + " exist");
    }
  }
}

Topology reassign(const Topology& topology, std::uint32_t failed) {
  const auto& entries = topology.plan.entries();
  auto pos = std::find_if(entries.begin(), entries.end(),
                          [&](const PlanEntry& e) { return e.server == failed; });
  if (pos == entries.end()) {
    throw std::invalid_argument("reassign: server " + std::to_string(failed) + " holds no layers");
  }
  if (topology.servers.at(failed).active) {
    throw std::invalid_argument("reassign: server " + std::to_string(failed) + " is still active");
  }
  const bool any_active = std::any_of(entries.begin(), entries.end(), [&](const PlanEntry& e) {
    return topology.servers.at(e.server).active;
  });
  if (!any_active) {
    throw NoActiveServer("reassign: no active server remains to take over server " +
                         std::to_string(failed));
  }

  const std::size_t i = static_cast<std::size_t>(pos - entries.begin());
  const bool has_pred = i > 0;
  const bool has_succ = i + 1 < entries.size();
  auto active_at = [&](std::size_t j) { return topology.servers.at(entries[j].server).active; };
  std::size_t target;
  if (has_pred && active_at(i - 1)) {
    target = i - 1;
  } else if (has_succ && active_at(i + 1)) {
    target = i + 1;
  } else {
    target = has_pred ? i - 1 : i + 1;
  }

  std::vector<PlanEntry> merged;
  for (std::size_t j = 0; j < entries.size(); ++j) {
    if (j == i) continue;
    PlanEntry e = entries[j];
    if (j == target) {
      e.range.first = std::min(e.range.first, entries[i].range.first);
      e.range.last = std::max(e.range.last, entries[i].range.last);
    }
    merged.push_back(e);
  }
  Topology out = topology;
  out.plan = PartitionPlan(std::move(merged));
  return out;
}

wire::WeightShardPayload encode_weight(std::uint32_t layer, wire::WeightRole role,
                                       std::uint8_t head, const Matrix& weight,
                                       const CompressionSpec& compression) {
  wire::WeightShardPayload p{layer, role, head, weight};
  if (compression.mode == CompressionSpec::Mode::none) return p;
  compression.validate();
  const svd::TruncatedSvd full = svd::svd(weight);
  std::size_t k = 0;
  if (compression.mode == CompressionSpec::Mode::energy) {
    k = svd::rank_for_energy(full, compression.value);
  } else {
    k = std::min(svd::rank_for_compression(weight.rows(), weight.cols(), compression.value), full.k());
  }
  p.body = svd::truncate(full, k).factors();
  return p;
}

Matrix materialize(const wire::WeightShardPayload& payload) {
  if (const auto* dense = std::get_if<Matrix>(&payload.body)) return *dense;
  return svd::reconstruct(std::get<svd::LowRankFactors>(payload.body));
}

Simulation::Simulation(ModelParams params, Topology topology, SimulationOptions options)
    : params_(std::move(params)),
      topology_(std::move(topology)),
      options_(options),
      transport_(options.transport ? options.transport : &default_bus_) {
  validate_params(params_);
  topology_.validate(params_.config.n_layers);
  options_.compression.validate();
  servers_.resize(topology_.servers.size());
}

Message Simulation::send(MessageKind kind, NodeId from, NodeId to, wire::Payload payload) {
  Message msg{kind, from, to, next_seq_[{from, to}]++, std::move(payload)};
  const wire::Bytes frame = wire::encode(msg);
  Message delivered = transport_->transmit(frame);
  ledger_.record(delivered, frame.size(), frame.size() - wire::kHeaderSize);
  trace_.push_back(delivered);
  return delivered;
}

LayerParams Simulation::receive_layer(std::uint32_t server, std::size_t layer_index) {
  const LayerParams& src = params_.layers.at(layer_index);
  const auto layer = static_cast<std::uint32_t>(layer_index);
  const NodeId client = wire::client_node();
  const NodeId dest = wire::server_node(server);
  const CompressionSpec dense = CompressionSpec::none();

  auto ship = [&](wire::WeightRole role, std::uint8_t head, const Matrix& w, const CompressionSpec& c) {
    const Message delivered = send(MessageKind::weight_shard, client, dest, encode_weight(layer, role, head, w, c));
    return materialize(std::get<wire::WeightShardPayload>(delivered.payload));
  };
  auto ship_vector = [&](wire::WeightRole role, const std::vector<double>& v) {
    return ship(role, 0, Matrix::row_vector(v), dense).data();
  };

  const auto& compression = options_.compression;
  LayerParams out;
  for (std::size_t h = 0; h < src.heads.size(); ++h) {
    const auto head = static_cast<std::uint8_t>(h);
    out.heads.push_back({ship(wire::WeightRole::w_q, head, src.heads[h].w_q, compression),
                         ship(wire::WeightRole::w_k, head, src.heads[h].w_k, compression),
                         ship(wire::WeightRole::w_v, head, src.heads[h].w_v, compression)});
  }
  out.w_o = ship(wire::WeightRole::w_o, 0, src.w_o, compression);
  out.w_1 = ship(wire::WeightRole::w_1, 0, src.w_1, compression);
  out.w_2 = ship(wire::WeightRole::w_2, 0, src.w_2, compression);
  out.ln1_gain = ship_vector(wire::WeightRole::ln1_gain, src.ln1_gain);
  out.ln1_bias = ship_vector(wire::WeightRole::ln1_bias, src.ln1_bias);
  out.ln2_gain = ship_vector(wire::WeightRole::ln2_gain, src.ln2_gain);
  out.ln2_bias = ship_vector(wire::WeightRole::ln2_bias, src.ln2_bias);
  return out;
}

void Simulation::ship_layers(std::uint32_t server, LayerRange range) {
  for (std::size_t l = range.first; l < range.last; ++l) {
    servers_.at(server).layers[l] = receive_layer(server, l);
  }
}

const TransferLedger& Simulation::distribute_model() {
  for (const auto& e : topology_.plan.entries()) ship_layers(e.server, e.range);
  return ledger_;
}

const std::map<std::size_t, LayerParams>& Simulation::server_layers(std::uint32_t server) const {
  return servers_.at(server).layers;
}

Matrix Simulation::apply_behavior(std::uint32_t server, const Matrix& input, Matrix honest) {
  auto& state = servers_.at(server);
  const ServerBehavior& b = topology_.servers.at(server).behavior;
  const std::uint64_t call = state.calls++;
  switch (b.mode) {
    case BehaviorMode::honest:
      return honest;
    case BehaviorMode::noisy: {
      Rng rng(derive_seed(derive_seed(options_.seed, server), call));
      for (double& v : honest.data()) v += b.noise_sigma * rng.normal();
      return honest;
    }
    case BehaviorMode::zeroing:
      return Matrix(honest.rows(), honest.cols());
    case BehaviorMode::sign_flip:
      for (double& v : honest.data()) v = -v;
      return honest;
    case BehaviorMode::stale: {
      Matrix previous = state.last_output && state.last_output->rows() == honest.rows() &&
                                state.last_output->cols() == honest.cols()
                            ? *state.last_output
                            : input;
      state.last_output = std::move(honest);
      return previous;
    }
  }
  return honest;
}

Matrix Simulation::server_process(std::uint32_t server, const Matrix& input) {
  const PlanEntry* entry = topology_.plan.find(server);
  if (!entry) throw std::invalid_argument("server " + std::to_string(server) + " holds no layers");
  const auto& held = servers_.at(server).layers;
  Matrix h = input;
  for (std::size_t l = entry->range.first; l < entry->range.last; ++l) {
    auto it = held.find(l);
    if (it == held.end()) {
      throw std::logic_error("server " + std::to_string(server) + " has not received layer " +
                             std::to_string(l));
    }
    h = layer_forward(h, it->second);
  }
  return apply_behavior(server, input, std::move(h));
}

PipelineResult Simulation::run_pipeline(std::span<const std::uint32_t> tokens) {
  for (const auto& e : topology_.plan.entries()) {
    if (!topology_.servers.at(e.server).active) {
      throw PipelineStalled("pipeline stalled: server " + std::to_string(e.server) +
                            " is deactivated and its layers were not reassigned");
    }
  }
  const std::size_t trace_start = trace_.size();
  Matrix activation = embed(tokens, params_);
  NodeId holder = wire::client_node();
  for (const auto& e : topology_.plan.entries()) {
    const NodeId next = wire::server_node(e.server);
    const Message delivered = send(MessageKind::activation, holder, next, wire::ActivationPayload{activation});
    activation = server_process(e.server, std::get<wire::ActivationPayload>(delivered.payload).data);
    holder = next;
  }
  const Message back = send(MessageKind::activation, holder, wire::client_node(), wire::ActivationPayload{activation});

  PipelineResult result;
  result.output = output_head(std::get<wire::ActivationPayload>(back.payload).data, params_.output_projection);
  result.ledger = ledger_;
  result.trace.assign(trace_.begin() + static_cast<std::ptrdiff_t>(trace_start), trace_.end());
  return result;
}

Matrix Simulation::probe_server(NodeId verifier, std::uint32_t server, std::uint32_t probe_id,
                                const Matrix& probe) {
  const NodeId dest = wire::server_node(server);
  const Message request = send(MessageKind::validation_probe, verifier, dest, wire::ProbePayload{probe_id, probe});
  Matrix output = server_process(server, std::get<wire::ProbePayload>(request.payload).data);
  const Message reply = send(MessageKind::probe_result, dest, verifier, wire::ProbePayload{probe_id, std::move(output)});
  return std::get<wire::ProbePayload>(reply.payload).data;
}

void Simulation::deactivate(std::uint32_t server, NodeId verifier) {
  topology_.servers.at(server).active = false;
  send(MessageKind::status_update, verifier, wire::server_node(server),
       wire::StatusUpdatePayload{wire::ServerStatus::deactivated});
}

void Simulation::reassign_server(std::uint32_t failed) {
  const PlanEntry* old_entry = topology_.plan.find(failed);
  if (!old_entry) throw std::invalid_argument("server " + std::to_string(failed) + " holds no layers");
  const LayerRange moved = old_entry->range;
  Topology updated = reassign(topology_, failed);

  std::uint32_t replacement = 0;
  for (const auto& e : updated.plan.entries()) {
    if (e.range.first <= moved.first && moved.last <= e.range.last) replacement = e.server;
  }
  topology_ = std::move(updated);
  servers_.at(failed).layers.clear();

  send(MessageKind::reassignment, wire::verifier_node(0), wire::server_node(replacement),
       wire::ReassignmentPayload{wire::server_node(failed), wire::server_node(replacement),
                                 static_cast<std::uint32_t>(moved.first),
                                 static_cast<std::uint32_t>(moved.last)});
  if (topology_.servers.at(replacement).active) ship_layers(replacement, moved);
}

TransferLedger distribute_model(const ModelParams& params, const PartitionPlan& plan,
                                const CompressionSpec& compression) {
  Topology topology;
  topology.plan = plan;
  std::uint32_t max_server = 0;
  for (const auto& e : plan.entries()) max_server = std::max(max_server, e.server);
  topology.servers.assign(plan.size() == 0 ? 0 : max_server + 1, ServerSlot{});
  Simulation sim(params, topology, {compression, 0, nullptr});
  return sim.distribute_model();
}

}  // namespace efedsim::fed
