#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "efedsim/svdkit.hpp"
#include "efedsim/tensor.hpp"
#include "efedsim/transformer.hpp"

namespace efedsim::wire {

// Frame layout (all integers little-endian):
//   0  magic 0xEF 0x4C
//   2  version 0x01
//   3  kind
//   4  from node id (u32, role in the high byte)
//   8  to node id
//  12  seq (u64)
//  20  payload length (u32)
//  24  payload
inline constexpr std::uint8_t kMagic0 = 0xEF;
inline constexpr std::uint8_t kMagic1 = 0x4C;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::uint32_t kMaxPayload = 1u << 28;

using Bytes = std::vector<std::uint8_t>;

enum class Role : std::uint8_t { client = 0, server = 1, verifier = 2 };

struct NodeId {
  Role role = Role::client;
  std::uint32_t index = 0;  // < 2^24

  std::uint32_t encoded() const;
  static NodeId decode(std::uint32_t raw);
  std::string str() const;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

inline NodeId client_node(std::uint32_t i = 0) { return {Role::client, i}; }
inline NodeId server_node(std::uint32_t i) { return {Role::server, i}; }
inline NodeId verifier_node(std::uint32_t i) { return {Role::verifier, i}; }

enum class MessageKind : std::uint8_t {
  weight_shard = 1,
  activation = 2,
  validation_probe = 3,
  probe_result = 4,
  trust_report = 5,
  status_update = 6,
  reassignment = 7,
};

std::string_view to_string(MessageKind kind);
std::string_view to_string(Role role);

enum class ServerStatus : std::uint8_t { active = 0, deactivated = 1 };

/// Which parameter of a layer a weight shard carries.
enum class WeightRole : std::uint8_t {
  w_q = 0, w_k = 1, w_v = 2, w_o = 3, w_1 = 4, w_2 = 5,
  ln1_gain = 6, ln1_bias = 7, ln2_gain = 8, ln2_bias = 9,
};

struct WeightShardPayload {
  std::uint32_t layer = 0;
  WeightRole role = WeightRole::w_o;
  std::uint8_t head = 0;
  std::variant<Matrix, svd::LowRankFactors> body;
};

struct ActivationPayload {
  Matrix data;
};

/// Shared by ValidationProbe and ProbeResult.
struct ProbePayload {
  std::uint32_t probe_id = 0;
  Matrix data;
};

struct TrustReportPayload {
  NodeId server;
  double acc = 0.0;
  double layers = 0.0;
  double score = 0.0;
  ServerStatus status = ServerStatus::active;
};

struct StatusUpdatePayload {
  ServerStatus status = ServerStatus::active;
};

struct ReassignmentPayload {
  NodeId failed;
  NodeId replacement;
  std::uint32_t first_layer = 0;
  std::uint32_t last_layer = 0;
};

using Payload = std::variant<WeightShardPayload, ActivationPayload, ProbePayload,
                             TrustReportPayload, StatusUpdatePayload, ReassignmentPayload>;

struct Message {
  MessageKind kind = MessageKind::status_update;
  NodeId from;
  NodeId to;
  std::uint64_t seq = 0;
  Payload payload = StatusUpdatePayload{};
};

enum class CodecErrc {
  bad_magic,
  bad_version,
  truncated,
  unknown_kind,
  length_overflow,
  malformed,
};

std::string_view to_string(CodecErrc code);

class CodecError : public std::runtime_error {
 public:
  CodecError(CodecErrc code, const std::string& detail);
  CodecErrc code() const { return code_; }

 private:
  CodecErrc code_;
};

Bytes encode(const Message& msg);
/// Decodes exactly one frame; trailing bytes are an error.
Message decode(std::span<const std::uint8_t> bytes);

Bytes encode_payload(const Message& msg);

/// Payload bodies in isolation.
void append_matrix(Bytes& out, const Matrix& m);
void append_factors(Bytes& out, const svd::LowRankFactors& f);
std::size_t matrix_payload_size(const Matrix& m);
std::size_t factors_payload_size(const svd::LowRankFactors& f);

/// Incremental frame extraction from a byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Returns the next complete frame, or nullopt when more bytes are needed.
  std::optional<Message> next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  Bytes buffer_;
};

/// Field-by-field bit-exact comparison (doubles compared by bit pattern).
bool bit_equal(const Message& a, const Message& b);

// Model files: magic, version, 'M', six u32 config fields, u32 record count,
// then records of (u16 tag length, tag bytes, matrix payload).
Bytes encode_model(const ModelParams& params);
ModelParams decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);

/// Raw matrix file: a bare matrix payload.
Matrix load_matrix_file(const std::filesystem::path& path);
void save_matrix_file(const std::filesystem::path& path, const Matrix& m);

}  // namespace efedsim::wire
