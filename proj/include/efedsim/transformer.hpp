#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "efedsim/tensor.hpp"

namespace efedsim {

class ModelConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PlanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 101;
  std::size_t max_seq_len = 64;

  std::size_t d_head() const { return d_model / n_heads; }
  /// Throws ModelConfigError. n_layers may be 0 (an empty stack).
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kLayerNormEpsilon = 1e-5;

struct HeadWeights {
  Matrix w_q;  // d_model x d_head
  Matrix w_k;
  Matrix w_v;

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

struct LayerParams {
  std::vector<HeadWeights> heads;
  Matrix w_o;  // d_model x d_model
  Matrix w_1;  // d_model x d_ff
  Matrix w_2;  // d_ff x d_model
  std::vector<double> ln1_gain, ln1_bias;
  std::vector<double> ln2_gain, ln2_bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  ModelConfig config;
  Matrix embedding;          // vocab_size x d_model
  std::vector<LayerParams> layers;
  Matrix output_projection;  // d_model x vocab_size

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Checks every shape in `layer` against `config`.
void validate_layer(const LayerParams& layer, const ModelConfig& config);
void validate_params(const ModelParams& params);

/// Deterministic Gaussian initialization scaled by 1/sqrt(fan_in).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Sinusoidal positions; odd d_model ends on a sin column.
Matrix positional_encoding(std::size_t max_seq_len, std::size_t d_model);

/// Token embedding rows plus positional rows.
Matrix embed(std::span<const std::uint32_t> tokens, const ModelParams& params);

/// softmax(q k^T / sqrt(d_head)) v with d_head = q.cols().
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Per-row normalization to zero mean and unit variance, then gain and bias.
Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias);

Matrix multi_head_attention(const Matrix& x, const LayerParams& layer);
Matrix feed_forward(const Matrix& x, const LayerParams& layer);

/// LN2(h + FFN(h)) where h = LN1(x + MultiHead(x)).
Matrix layer_forward(const Matrix& x, const LayerParams& layer);

/// Client-side tail: softmax over the output projection.
Matrix output_head(const Matrix& x, const Matrix& output_projection);

struct ForwardStats {
  std::size_t layer_calls = 0;
};

/// embed -> every layer -> output projection -> row softmax.
Matrix model_forward(std::span<const std::uint32_t> tokens, const ModelParams& params,
                     ForwardStats* stats = nullptr);

/// Half-open layer interval [first, last).
struct LayerRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t size() const { return last - first; }
  bool contains(std::size_t layer) const { return layer >= first && layer < last; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct PlanEntry {
  std::uint32_t server = 0;  // server index
  LayerRange range;

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

/// Ordered pipeline stages. Valid plans tile [0, L) with non-empty,
/// contiguous ranges in pipeline order and use each server at most once.
class PartitionPlan {
 public:
  PartitionPlan() = default;
  explicit PartitionPlan(std::vector<PlanEntry> entries) : entries_(std::move(entries)) {}

  /// Layer counts per server, servers numbered 0..counts.size()-1.
  static PartitionPlan from_counts(std::span<const std::size_t> counts);
  /// n_layers spread as evenly as possible; earlier servers take the remainder.
  static PartitionPlan equal_split(std::size_t n_servers, std::size_t n_layers);

  const std::vector<PlanEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Throws PlanError when the plan does not tile [0, n_layers).
  void validate(std::size_t n_layers) const;

  const PlanEntry* find(std::uint32_t server) const;
  std::size_t max_layers() const;

  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;

 private:
  std::vector<PlanEntry> entries_;
};

/// The blocks one server executes.
struct LayerShard {
  std::uint32_t server = 0;
  std::size_t first_layer = 0;
  std::vector<LayerParams> layers;

  friend bool operator==(const LayerShard&, const LayerShard&) = default;
};

/// Embedding and output projection stay with the client.
struct ClientParams {
  ModelConfig config;
  Matrix embedding;
  Matrix output_projection;

  friend bool operator==(const ClientParams&, const ClientParams&) = default;
};

struct SplitModel {
  ClientParams client;
  std::vector<LayerShard> shards;  // plan order
};

SplitModel split_model(const ModelParams& params, const PartitionPlan& plan);
ModelParams reassemble(const SplitModel& split);

/// Runs `layers` in order over x.
Matrix run_layers(const Matrix& x, std::span<const LayerParams> layers,
                  ForwardStats* stats = nullptr);

}  // namespace efedsim
