#include "efedsim/codec.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace efedsim::wire {

namespace {

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw std::invalid_argument(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, CodecErrc short_read)
      : data_(data), short_read_(short_read) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  std::vector<double> doubles(std::uint64_t count, const char* what) {
    if (count > remaining() / 8) {
      throw CodecError(CodecErrc::length_overflow,
                       std::string(what) + " declares " + std::to_string(count) +
                           " elements but only " + std::to_string(remaining()) + " bytes remain");
    }
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }

  Matrix matrix() {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    auto data = doubles(static_cast<std::uint64_t>(rows) * cols, "matrix");
    return Matrix(rows, cols, std::move(data));
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) {
      throw CodecError(short_read_, "need " + std::to_string(n) + " bytes, " +
                                        std::to_string(remaining()) + " remain");
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end(const char* what) const {
    if (remaining() != 0) {
      throw CodecError(CodecErrc::malformed, std::to_string(remaining()) + " trailing bytes after " + what);
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  CodecErrc short_read_;
};

std::size_t payload_index(MessageKind kind) {
  switch (kind) {
    case MessageKind::weight_shard: return 0;
    case MessageKind::activation: return 1;
    case MessageKind::validation_probe:
    case MessageKind::probe_result: return 2;
    case MessageKind::trust_report: return 3;
    case MessageKind::status_update: return 4;
    case MessageKind::reassignment: return 5;
  }
  throw std::invalid_argument("unknown message kind");
}

bool valid_kind(std::uint8_t raw) { return raw >= 1 && raw <= 7; }

ServerStatus read_status(Reader& r) {
  const std::uint8_t s = r.u8();
  if (s > 1) throw CodecError(CodecErrc::malformed, "status byte " + std::to_string(s));
  return static_cast<ServerStatus>(s);
}

NodeId read_node(Reader& r) {
  try {
    return NodeId::decode(r.u32());
  } catch (const std::invalid_argument& e) {
    throw CodecError(CodecErrc::malformed, e.what());
  }
}

struct PayloadWriter {
  Bytes& out;

  void operator()(const WeightShardPayload& p) const {
    put_u32(out, p.layer);
    put_u8(out, static_cast<std::uint8_t>(p.role));
    put_u8(out, p.head);
    if (const auto* dense = std::get_if<Matrix>(&p.body)) {
      put_u8(out, 0);
      append_matrix(out, *dense);
    } else {
      put_u8(out, 1);
      append_factors(out, std::get<svd::LowRankFactors>(p.body));
    }
  }
  void operator()(const ActivationPayload& p) const { append_matrix(out, p.data); }
  void operator()(const ProbePayload& p) const {
    put_u32(out, p.probe_id);
    append_matrix(out, p.data);
  }
  void operator()(const TrustReportPayload& p) const {
    put_u32(out, p.server.encoded());
    put_f64(out, p.acc);
    put_f64(out, p.layers);
    put_f64(out, p.score);
    put_u8(out, static_cast<std::uint8_t>(p.status));
  }
  void operator()(const StatusUpdatePayload& p) const { put_u8(out, static_cast<std::uint8_t>(p.status)); }
  void operator()(const ReassignmentPayload& p) const {
    put_u32(out, p.failed.encoded());
    put_u32(out, p.replacement.encoded());
    put_u32(out, p.first_layer);
    put_u32(out, p.last_layer);
  }
};

Payload read_payload(MessageKind kind, Reader& r) {
  switch (kind) {
    case MessageKind::weight_shard: {
      WeightShardPayload p;
      p.layer = r.u32();
      const std::uint8_t role = r.u8();
      if (role > static_cast<std::uint8_t>(WeightRole::ln2_bias)) {
        throw CodecError(CodecErrc::malformed, "weight role " + std::to_string(role));
      }
      p.role = static_cast<WeightRole>(role);
      p.head = r.u8();
      const std::uint8_t encoding = r.u8();
      if (encoding == 0) {
        p.body = r.matrix();
      } else if (encoding == 1) {
        const std::uint32_t m = r.u32();
        const std::uint32_t n = r.u32();
        const std::uint32_t k = r.u32();
        auto u = r.doubles(static_cast<std::uint64_t>(m) * k, "U_k");
        auto sigma = r.doubles(k, "sigma");
        auto v_t = r.doubles(static_cast<std::uint64_t>(k) * n, "V_k^T");
        p.body = svd::LowRankFactors{Matrix(m, k, std::move(u)), std::move(sigma),
                                     Matrix(k, n, std::move(v_t))};
      } else {
        throw CodecError(CodecErrc::malformed, "weight encoding " + std::to_string(encoding));
      }
      return p;
    }
    case MessageKind::activation:
      return ActivationPayload{r.matrix()};
    case MessageKind::validation_probe:
    case MessageKind::probe_result: {
      ProbePayload p;
      p.probe_id = r.u32();
      p.data = r.matrix();
      return p;
    }
    case MessageKind::trust_report: {
      TrustReportPayload p;
      p.server = read_node(r);
      p.acc = r.f64();
      p.layers = r.f64();
      p.score = r.f64();
      p.status = read_status(r);
      return p;
    }
    case MessageKind::status_update:
      return StatusUpdatePayload{read_status(r)};
    case MessageKind::reassignment: {
      ReassignmentPayload p;
      p.failed = read_node(r);
      p.replacement = read_node(r);
      p.first_layer = r.u32();
      p.last_layer = r.u32();
      return p;
    }
  }
  throw CodecError(CodecErrc::unknown_kind, "kind " + std::to_string(static_cast<int>(kind)));
}

// Validates the fixed header prefix that is present; returns the full frame
// size once the length field is readable.
std::optional<std::size_t> frame_size(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 1 && bytes[0] != kMagic0) throw CodecError(CodecErrc::bad_magic, "bad magic byte 0");
  if (bytes.size() >= 2 && bytes[1] != kMagic1) throw CodecError(CodecErrc::bad_magic, "bad magic byte 1");
  if (bytes.size() >= 3 && bytes[2] != kVersion) {
    throw CodecError(CodecErrc::bad_version, "version " + std::to_string(bytes[2]));
  }
  if (bytes.size() >= 4 && !valid_kind(bytes[3])) {
    throw CodecError(CodecErrc::unknown_kind, "kind " + std::to_string(bytes[3]));
  }
  if (bytes.size() < kHeaderSize) return std::nullopt;
  Reader r(bytes.subspan(20, 4), CodecErrc::truncated);
  const std::uint32_t len = r.u32();
  if (len > kMaxPayload) {
    throw CodecError(CodecErrc::length_overflow,
                     "payload length " + std::to_string(len) + " exceeds " + std::to_string(kMaxPayload));
  }
  return kHeaderSize + len;
}

}  // namespace

std::uint32_t NodeId::encoded() const {
  if (index >= (1u << 24)) throw std::invalid_argument("node index exceeds 24 bits");
  return (static_cast<std::uint32_t>(role) << 24) | index;
}

NodeId NodeId::decode(std::uint32_t raw) {
  const std::uint32_t role = raw >> 24;
  if (role > 2) throw std::invalid_argument("node role " + std::to_string(role));
  return {static_cast<Role>(role), raw & 0xFFFFFFu};
}

std::string NodeId::str() const { return std::string(to_string(role)) + std::to_string(index); }

std::string_view to_string(Role role) {
  switch (role) {
    case Role::client: return "client";
    case Role::server: return "server";
    case Role::verifier: return "verifier";
  }
  return "unknown";
}

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::weight_shard: return "WeightShard";
    case MessageKind::activation: return "Activation";
    case MessageKind::validation_probe: return "ValidationProbe";
    case MessageKind::probe_result: return "ProbeResult";
    case MessageKind::trust_report: return "TrustReport";
    case MessageKind::status_update: return "StatusUpdate";
    case MessageKind::reassignment: return "Reassignment";
  }
  return "Unknown";
}

std::string_view to_string(CodecErrc code) {
  switch (code) {
    case CodecErrc::bad_magic: return "bad magic";
    case CodecErrc::bad_version: return "unsupported version";
    case CodecErrc::truncated: return "truncated frame";
    case CodecErrc::unknown_kind: return "unknown message kind";
    case CodecErrc::length_overflow: return "length overflow";
    case CodecErrc::malformed: return "malformed payload";
  }
  return "codec error";
}

CodecError::CodecError(CodecErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

void append_matrix(Bytes& out, const Matrix& m) {
  put_u32(out, checked_u32(m.rows(), "matrix rows"));
  put_u32(out, checked_u32(m.cols(), "matrix cols"));
  for (double v : m.data()) put_f64(out, v);
}

void append_factors(Bytes& out, const svd::LowRankFactors& f) {
  const std::size_t k = f.sigma.size();
  if (f.u.cols() != k || f.v_t.rows() != k) throw DimensionError("append_factors: inconsistent rank");
  put_u32(out, checked_u32(f.u.rows(), "m"));
  put_u32(out, checked_u32(f.v_t.cols(), "n"));
  put_u32(out, checked_u32(k, "k"));
  for (double v : f.u.data()) put_f64(out, v);
  for (double v : f.sigma) put_f64(out, v);
  for (double v : f.v_t.data()) put_f64(out, v);
}

std::size_t matrix_payload_size(const Matrix& m) { return 8 + 8 * m.size(); }

std::size_t factors_payload_size(const svd::LowRankFactors& f) { return 12 + 8 * f.element_count(); }

Bytes encode_payload(const Message& msg) {
  if (payload_index(msg.kind) != msg.payload.index()) {
    throw std::invalid_argument(std::string("payload does not match kind ") +
                                std::string(to_string(msg.kind)));
  }
  Bytes out;
  std::visit(PayloadWriter{out}, msg.payload);
  return out;
}

Bytes encode(const Message& msg) {
  Bytes payload = encode_payload(msg);
  if (payload.size() > kMaxPayload) throw std::length_error("payload exceeds maximum frame size");
  Bytes out;
  out.reserve(kHeaderSize + payload.size());
  put_u8(out, kMagic0);
  put_u8(out, kMagic1);
  put_u8(out, kVersion);
  put_u8(out, static_cast<std::uint8_t>(msg.kind));
  put_u32(out, msg.from.encoded());
  put_u32(out, msg.to.encoded());
  put_u64(out, msg.seq);
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Message decode(std::span<const std::uint8_t> bytes) {
  const auto size = frame_size(bytes);
  if (!size) {
    throw CodecError(CodecErrc::truncated,
                     "header needs " + std::to_string(kHeaderSize) + " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() < *size) {
    throw CodecError(CodecErrc::truncated,
                     "frame needs " + std::to_string(*size) + " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > *size) {
    throw CodecError(CodecErrc::malformed, std::to_string(bytes.size() - *size) + " bytes after frame");
  }
  Reader header(bytes.subspan(3, kHeaderSize - 7), CodecErrc::truncated);
  Message msg;
  msg.kind = static_cast<MessageKind>(header.u8());
  msg.from = read_node(header);
  msg.to = read_node(header);
  msg.seq = header.u64();

  Reader body(bytes.subspan(kHeaderSize), CodecErrc::malformed);
  msg.payload = read_payload(msg.kind, body);
  body.expect_end("payload");
  return msg;
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
  const auto size = frame_size(buffer_);
  if (!size || buffer_.size() < *size) return std::nullopt;
  Message msg = decode(std::span<const std::uint8_t>(buffer_).first(*size));
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(*size));
  return msg;
}

bool bit_equal(const Message& a, const Message& b) {
  if (a.kind != b.kind || a.from != b.from || a.to != b.to || a.seq != b.seq) return false;
  // Payload bodies are compared through their serialized form, which is the
  // bit pattern of every double.
  return encode_payload(a) == encode_payload(b);
}

namespace {

constexpr std::uint8_t kModelMarker = 'M';

std::string layer_tag(std::size_t layer, std::string_view name) {
  return "layer." + std::to_string(layer) + "." + std::string(name);
}

std::string head_tag(std::size_t layer, std::size_t head, std::string_view name) {
  return layer_tag(layer, "head." + std::to_string(head) + "." + std::string(name));
}

// Every (tag, matrix) pair of a model, in file order.
std::vector<std::pair<std::string, Matrix>> model_records(const ModelParams& p) {
  std::vector<std::pair<std::string, Matrix>> out;
  out.emplace_back("embedding", p.embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      out.emplace_back(head_tag(l, h, "w_q"), layer.heads[h].w_q);
      out.emplace_back(head_tag(l, h, "w_k"), layer.heads[h].w_k);
      out.emplace_back(head_tag(l, h, "w_v"), layer.heads[h].w_v);
    }
    out.emplace_back(layer_tag(l, "w_o"), layer.w_o);
    out.emplace_back(layer_tag(l, "w_1"), layer.w_1);
    out.emplace_back(layer_tag(l, "w_2"), layer.w_2);
    out.emplace_back(layer_tag(l, "ln1_gain"), Matrix::row_vector(layer.ln1_gain));
    out.emplace_back(layer_tag(l, "ln1_bias"), Matrix::row_vector(layer.ln1_bias));
    out.emplace_back(layer_tag(l, "ln2_gain"), Matrix::row_vector(layer.ln2_gain));
    out.emplace_back(layer_tag(l, "ln2_bias"), Matrix::row_vector(layer.ln2_bias));
  }
  out.emplace_back("output_projection", p.output_projection);
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

Bytes encode_model(const ModelParams& params) {
  validate_params(params);
  const auto& c = params.config;
  Bytes out;
  put_u8(out, kMagic0);
  put_u8(out, kMagic1);
  put_u8(out, kVersion);
  put_u8(out, kModelMarker);
  for (std::size_t v : {c.d_model, c.n_heads, c.n_layers, c.d_ff, c.vocab_size, c.max_seq_len}) {
    put_u32(out, checked_u32(v, "config field"));
  }
  const auto records = model_records(params);
  put_u32(out, checked_u32(records.size(), "record count"));
  for (const auto& [tag, m] : records) {
    put_u16(out, static_cast<std::uint16_t>(tag.size()));
    out.insert(out.end(), tag.begin(), tag.end());
    append_matrix(out, m);
  }
  return out;
}

ModelParams decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, CodecErrc::truncated);
  if (r.u8() != kMagic0 || r.u8() != kMagic1) throw CodecError(CodecErrc::bad_magic, "model file");
  if (r.u8() != kVersion) throw CodecError(CodecErrc::bad_version, "model file");
  if (r.u8() != kModelMarker) throw CodecError(CodecErrc::malformed, "not a model file");
  ModelConfig c;
  c.d_model = r.u32();
  c.n_heads = r.u32();
  c.n_layers = r.u32();
  c.d_ff = r.u32();
  c.vocab_size = r.u32();
  c.max_seq_len = r.u32();
  try {
    c.validate();
  } catch (const ModelConfigError& e) {
    throw CodecError(CodecErrc::malformed, e.what());
  }

  std::map<std::string, Matrix> found;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    auto tag_bytes = r.take(len);
    std::string tag(tag_bytes.begin(), tag_bytes.end());
    found[tag] = r.matrix();
  }
  r.expect_end("model records");

  auto take = [&](const std::string& tag) {
    auto it = found.find(tag);
    if (it == found.end()) throw CodecError(CodecErrc::malformed, "model file lacks " + tag);
    return it->second;
  };
  auto take_vector = [&](const std::string& tag) { return take(tag).data(); };

  ModelParams p;
  p.config = c;
  p.embedding = take("embedding");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerParams layer;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      layer.heads.push_back({take(head_tag(l, h, "w_q")), take(head_tag(l, h, "w_k")),
                             take(head_tag(l, h, "w_v"))});
    }
    layer.w_o = take(layer_tag(l, "w_o"));
    layer.w_1 = take(layer_tag(l, "w_1"));
    layer.w_2 = take(layer_tag(l, "w_2"));
    layer.ln1_gain = take_vector(layer_tag(l, "ln1_gain"));
    layer.ln1_bias = take_vector(layer_tag(l, "ln1_bias"));
    layer.ln2_gain = take_vector(layer_tag(l, "ln2_gain"));
    layer.ln2_bias = take_vector(layer_tag(l, "ln2_bias"));
    p.layers.push_back(std::move(layer));
  }
  p.output_projection = take("output_projection");
  try {
    validate_params(p);
  } catch (const DimensionError& e) {
    throw CodecError(CodecErrc::malformed, e.what());
  }
  return p;
}

void save_model(const std::filesystem::path& path, const ModelParams& params) {
  write_file(path, encode_model(params));
}

ModelParams load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

Matrix load_matrix_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  Reader r(bytes, CodecErrc::truncated);
  Matrix m = r.matrix();
  r.expect_end("matrix file");
  return m;
}

void save_matrix_file(const std::filesystem::path& path, const Matrix& m) {
  Bytes out;
  append_matrix(out, m);
  write_file(path, out);
}

}  // namespace efedsim::wire
