#include "efedsim/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace efedsim {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ModelConfigError("model config: " + what);
  };
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
}

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(name) + " has shape " + m.shape_string() + ", expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void require_length(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() != n) {
    throw DimensionError(std::string(name) + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(n));
  }
}

std::vector<double> jittered(Rng& rng, std::size_t n, double center, double spread) {
  std::vector<double> v(n);
  for (double& x : v) x = center + spread * rng.normal();
  return v;
}

}  // namespace

void validate_layer(const LayerParams& layer, const ModelConfig& config) {
  const std::size_t d = config.d_model;
  if (layer.heads.size() != config.n_heads) {
    throw DimensionError("layer has " + std::to_string(layer.heads.size()) + " heads, expected " +
                         std::to_string(config.n_heads));
  }
  for (const auto& h : layer.heads) {
    require_shape(h.w_q, d, config.d_head(), "W_Q");
    require_shape(h.w_k, d, config.d_head(), "W_K");
    require_shape(h.w_v, d, config.d_head(), "W_V");
  }
  require_shape(layer.w_o, d, d, "W_O");
  require_shape(layer.w_1, d, config.d_ff, "W_1");
  require_shape(layer.w_2, config.d_ff, d, "W_2");
  require_length(layer.ln1_gain, d, "ln1 gain");
  require_length(layer.ln1_bias, d, "ln1 bias");
  require_length(layer.ln2_gain, d, "ln2 gain");
  require_length(layer.ln2_bias, d, "ln2 bias");
}

void validate_params(const ModelParams& params) {
  params.config.validate();
  const auto& c = params.config;
  require_shape(params.embedding, c.vocab_size, c.d_model, "embedding");
  require_shape(params.output_projection, c.d_model, c.vocab_size, "output projection");
  if (params.layers.size() != c.n_layers) {
    throw DimensionError("model has " + std::to_string(params.layers.size()) + " layers, expected " +
                         std::to_string(c.n_layers));
  }
  for (const auto& layer : params.layers) validate_layer(layer, c);
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const double s_model = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

  ModelParams p;
  p.config = config;
  p.embedding = rng.normal_matrix(config.vocab_size, d, 1.0);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams layer;
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      layer.heads.push_back({rng.normal_matrix(d, config.d_head(), s_model),
                             rng.normal_matrix(d, config.d_head(), s_model),
                             rng.normal_matrix(d, config.d_head(), s_model)});
    }
    layer.w_o = rng.normal_matrix(d, d, s_model);
    layer.w_1 = rng.normal_matrix(d, config.d_ff, s_model);
    layer.w_2 = rng.normal_matrix(config.d_ff, d, s_ff);
    layer.ln1_gain = jittered(rng, d, 1.0, 0.1);
    layer.ln1_bias = jittered(rng, d, 0.0, 0.1);
    layer.ln2_gain = jittered(rng, d, 1.0, 0.1);
    layer.ln2_bias = jittered(rng, d, 0.0, 0.1);
    p.layers.push_back(std::move(layer));
  }
  p.output_projection = rng.normal_matrix(d, config.vocab_size, s_model);
  return p;
}

Matrix positional_encoding(std::size_t max_seq_len, std::size_t d_model) {
  if (d_model < 2) throw ModelConfigError("positional_encoding: d_model must be >= 2");
  Matrix pe(max_seq_len, d_model);
  const double d = static_cast<double>(d_model);
  for (std::size_t pos = 0; pos < max_seq_len; ++pos) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const double two_i = static_cast<double>(c - c % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, two_i / d);
      pe(pos, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Matrix embed(std::span<const std::uint32_t> tokens, const ModelParams& params) {
  const auto& c = params.config;
  if (tokens.size() > c.max_seq_len) {
    throw std::length_error("embed: sequence of " + std::to_string(tokens.size()) +
                            " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  Matrix x(tokens.size(), c.d_model);
  if (tokens.empty()) return x;
  const Matrix pe = positional_encoding(tokens.size(), c.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= c.vocab_size) {
      throw std::out_of_range("embed: token id " + std::to_string(tokens[t]) +
                              " outside vocabulary of " + std::to_string(c.vocab_size));
    }
    auto row = params.embedding.row(tokens[t]);
    for (std::size_t j = 0; j < c.d_model; ++j) x(t, j) = row[j] + pe(t, j);
  }
  return x;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query " + q.shape_string() + " and key " + k.shape_string() +
                         " widths differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: key " + k.shape_string() + " and value " + v.shape_string() +
                         " lengths differ");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Matrix scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax_rows(scores), v);
}

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw DimensionError("layer_norm: gain/bias length does not match width " +
                         std::to_string(x.cols()));
  }
  Matrix y(x.rows(), x.cols());
  const double width = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= width;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= width;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (in[c] - mean) * inv_std * gain[c] + bias[c];
  }
  return y;
}

Matrix multi_head_attention(const Matrix& x, const LayerParams& layer) {
  std::vector<Matrix> outputs;
  outputs.reserve(layer.heads.size());
  for (const auto& h : layer.heads) {
    outputs.push_back(attention(matmul(x, h.w_q), matmul(x, h.w_k), matmul(x, h.w_v)));
  }
  if (x.rows() == 0) return Matrix(0, layer.w_o.cols());
  return matmul(hconcat(outputs), layer.w_o);
}

Matrix feed_forward(const Matrix& x, const LayerParams& layer) {
  Matrix hidden = matmul(x, layer.w_1);
  for (double& v : hidden.data()) v = std::max(v, 0.0);
  return matmul(hidden, layer.w_2);
}

Matrix layer_forward(const Matrix& x, const LayerParams& layer) {
  if (x.cols() != layer.w_o.rows()) {
    throw DimensionError("layer_forward: input " + x.shape_string() + " does not match d_model " +
                         std::to_string(layer.w_o.rows()));
  }
  const Matrix h = layer_norm(add(x, multi_head_attention(x, layer)), layer.ln1_gain, layer.ln1_bias);
  return layer_norm(add(h, feed_forward(h, layer)), layer.ln2_gain, layer.ln2_bias);
}

Matrix output_head(const Matrix& x, const Matrix& output_projection) {
  return softmax_rows(matmul(x, output_projection));
}

Matrix run_layers(const Matrix& x, std::span<const LayerParams> layers, ForwardStats* stats) {
  Matrix h = x;
  for (const auto& layer : layers) {
    h = layer_forward(h, layer);
    if (stats) ++stats->layer_calls;
  }
  return h;
}

Matrix model_forward(std::span<const std::uint32_t> tokens, const ModelParams& params,
                     ForwardStats* stats) {
  const Matrix x = run_layers(embed(tokens, params), params.layers, stats);
  return output_head(x, params.output_projection);
}

PartitionPlan PartitionPlan::from_counts(std::span<const std::size_t> counts) {
  std::vector<PlanEntry> entries;
  std::size_t next = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    entries.push_back({static_cast<std::uint32_t>(s), {next, next + counts[s]}});
    next += counts[s];
  }
  return PartitionPlan(std::move(entries));
}

PartitionPlan PartitionPlan::equal_split(std::size_t n_servers, std::size_t n_layers) {
  if (n_servers == 0) throw PlanError("plan: need at least one server");
  if (n_servers > n_layers) {
    throw PlanError("plan: " + std::to_string(n_servers) + " servers cannot share " +
                    std::to_string(n_layers) + " layers");
  }
  std::vector<std::size_t> counts(n_servers, n_layers / n_servers);
  for (std::size_t s = 0; s < n_layers % n_servers; ++s) ++counts[s];
  return from_counts(counts);
}

void PartitionPlan::validate(std::size_t n_layers) const {
  std::size_t next = 0;
  std::vector<std::uint32_t> seen;
  for (const auto& e : entries_) {
    if (e.range.first != next) {
      throw PlanError("plan: range for server " + std::to_string(e.server) + " starts at layer " +
                      std::to_string(e.range.first) + ", expected " + std::to_string(next) +
                      (e.range.first < next ? " (overlap)" : " (gap)"));
    }
    if (e.range.last <= e.range.first) {
      throw PlanError("plan: server " + std::to_string(e.server) + " has an empty range");
    }
    if (std::find(seen.begin(), seen.end(), e.server) != seen.end()) {
      throw PlanError("plan: server " + std::to_string(e.server) + " appears twice");
    }
    seen.push_back(e.server);
    next = e.range.last;
  }
  if (next != n_layers) {
    throw PlanError("plan covers " + std::to_string(next) + " of " + std::to_string(n_layers) +
                    " layers");
  }
}

const PlanEntry* PartitionPlan::find(std::uint32_t server) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const PlanEntry& e) { return e.server == server; });
  return it == entries_.end() ? nullptr : &*it;
}

std::size_t PartitionPlan::max_layers() const {
  std::size_t best = 0;
  for (const auto& e : entries_) best = std::max(best, e.range.size());
  return best;
}

SplitModel split_model(const ModelParams& params, const PartitionPlan& plan) {
  plan.validate(params.layers.size());
  SplitModel split;
  split.client = {params.config, params.embedding, params.output_projection};
  for (const auto& e : plan.entries()) {
    LayerShard shard;
    shard.server = e.server;
    shard.first_layer = e.range.first;
    shard.layers.assign(params.layers.begin() + static_cast<std::ptrdiff_t>(e.range.first),
                        params.layers.begin() + static_cast<std::ptrdiff_t>(e.range.last));
    split.shards.push_back(std::move(shard));
  }
  return split;
}

ModelParams reassemble(const SplitModel& split) {
  ModelParams p;
  p.config = split.client.config;
  p.embedding = split.client.embedding;
  p.output_projection = split.client.output_projection;
  for (const auto& shard : split.shards) {
    if (shard.first_layer != p.layers.size()) {
      throw PlanError("reassemble: shard for server " + std::to_string(shard.server) +
                      " starts at layer " + std::to_string(shard.first_layer) + ", expected " +
                      std::to_string(p.layers.size()));
    }
    p.layers.insert(p.layers.end(), shard.layers.begin(), shard.layers.end());
  }
  if (p.layers.size() != p.config.n_layers) throw PlanError("reassemble: shards do not cover the model");
  return p;
}

}  // namespace efedsim
