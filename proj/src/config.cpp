#include "efedsim/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace efedsim {

ConfigError::ConfigError(std::string key, std::size_t line, const std::string& message)
    : std::runtime_error(message), key_(std::move(key)), line_(line) {}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t to_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::uint32_t to_u32(std::string_view s) {
  const auto v = to_uint(s);
  if (v > 0xFFFFFFFFULL) throw std::invalid_argument("value " + std::string(s) + " is too large");
  return static_cast<std::uint32_t>(v);
}

double to_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

struct KeySpec {
  const char* name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define EFEDSIM_UINT_KEY(key, field)                                                              \
  KeySpec {                                                                                       \
    key, [](ExperimentConfig& c, std::string_view v) { c.field = to_uint(v); },                   \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                          \
  }
#define EFEDSIM_U32_KEY(key, field)                                                               \
  KeySpec {                                                                                       \
    key, [](ExperimentConfig& c, std::string_view v) { c.field = to_u32(v); },                    \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                          \
  }
#define EFEDSIM_DOUBLE_KEY(key, field)                                                            \
  KeySpec {                                                                                       \
    key, [](ExperimentConfig& c, std::string_view v) { c.field = to_double(v); },                 \
        [](const ExperimentConfig& c) { return format_number(c.field); }                           \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      EFEDSIM_UINT_KEY("seed", seed),
      EFEDSIM_UINT_KEY("model.d_model", model.d_model),
      EFEDSIM_UINT_KEY("model.n_heads", model.n_heads),
      EFEDSIM_UINT_KEY("model.n_layers", model.n_layers),
      EFEDSIM_UINT_KEY("model.d_ff", model.d_ff),
      EFEDSIM_UINT_KEY("model.vocab", model.vocab_size),
      EFEDSIM_UINT_KEY("model.seq_len", model.max_seq_len),
      EFEDSIM_UINT_KEY("topology.n_servers", topology.n_servers),
      KeySpec{"topology.split",
              [](ExperimentConfig& c, std::string_view v) {
                c.topology.split.clear();
                for (auto item : split_list(v)) c.topology.split.push_back(to_uint(item));
              },
              [](const ExperimentConfig& c) {
                std::vector<std::string> parts;
                for (auto n : c.resolved_split()) parts.push_back(std::to_string(n));
                return join(parts);
              }},
      KeySpec{"topology.behaviors",
              [](ExperimentConfig& c, std::string_view v) {
                c.topology.behaviors.clear();
                for (auto item : split_list(v)) {
                  c.topology.behaviors.push_back(fed::ServerBehavior::parse(std::string(item)));
                }
              },
              [](const ExperimentConfig& c) {
                std::vector<std::string> parts;
                for (const auto& b : c.resolved_behaviors()) parts.push_back(b.str());
                return join(parts);
              }},
      EFEDSIM_UINT_KEY("topology.n_verifiers", trust.n_verifiers),
      EFEDSIM_DOUBLE_KEY("trust.theta", trust.theta),
      EFEDSIM_DOUBLE_KEY("trust.tau", trust.tau),
      EFEDSIM_UINT_KEY("trust.probe_count", trust.probe_count),
      EFEDSIM_UINT_KEY("trust.probe_len", trust.probe_len),
      EFEDSIM_DOUBLE_KEY("trust.w", trust.weight),
      KeySpec{"compression.mode",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "none") {
                  c.compression.mode = fed::CompressionSpec::Mode::none;
                } else if (v == "energy") {
                  c.compression.mode = fed::CompressionSpec::Mode::energy;
                } else if (v == "ratio") {
                  c.compression.mode = fed::CompressionSpec::Mode::ratio;
                } else {
                  throw std::invalid_argument("expected none, energy or ratio, got '" + std::string(v) + "'");
                }
              },
              [](const ExperimentConfig& c) { return fed::to_string(c.compression.mode); }},
      EFEDSIM_DOUBLE_KEY("compression.value", compression.value),
      EFEDSIM_U32_KEY("verify.b", verify.base),
      EFEDSIM_U32_KEY("verify.K", verify.digits),
      EFEDSIM_U32_KEY("verify.f", verify.frac_bits),
      EFEDSIM_UINT_KEY("verify.n_workers", verify_workers),
      EFEDSIM_UINT_KEY("run.rounds", run.rounds),
      EFEDSIM_UINT_KEY("run.input_len", run.input_len),
      EFEDSIM_DOUBLE_KEY("run.tolerance", run.tolerance),
  };
  return specs;
}

#undef EFEDSIM_UINT_KEY
#undef EFEDSIM_U32_KEY
#undef EFEDSIM_DOUBLE_KEY

[[noreturn]] void invalid(const std::string& key, const std::string& why) {
  throw ConfigError(key, 0, key + ": " + why);
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::resolved_split() const {
  if (!topology.split.empty()) return topology.split;
  std::vector<std::size_t> counts;
  if (topology.n_servers == 0) return counts;
  const PartitionPlan plan = PartitionPlan::equal_split(topology.n_servers, model.n_layers);
  for (const auto& e : plan.entries()) {
    counts.push_back(e.range.size());
  }
  return counts;
}

std::vector<fed::ServerBehavior> ExperimentConfig::resolved_behaviors() const {
  if (!topology.behaviors.empty()) return topology.behaviors;
  return std::vector<fed::ServerBehavior>(topology.n_servers);
}

void ExperimentConfig::validate() const {
  const auto positive = [](const char* key, std::size_t v) {
    if (v == 0) invalid(key, "must be >= 1");
  };
  positive("model.d_model", model.d_model);
  positive("model.n_heads", model.n_heads);
  positive("model.n_layers", model.n_layers);
  positive("model.d_ff", model.d_ff);
  positive("model.vocab", model.vocab_size);
  positive("model.seq_len", model.max_seq_len);
  if (model.d_model % model.n_heads != 0) invalid("model.n_heads", "must divide model.d_model");
  if (model.d_model < 2) invalid("model.d_model", "must be >= 2");

  positive("topology.n_servers", topology.n_servers);
  if (topology.n_servers > model.n_layers) {
    invalid("topology.n_servers", "cannot exceed model.n_layers (" + std::to_string(model.n_layers) + ")");
  }
  if (!topology.split.empty()) {
    if (topology.split.size() != topology.n_servers) {
      invalid("topology.split", "needs one entry per server (" + std::to_string(topology.n_servers) + ")");
    }
    std::size_t total = 0;
    for (auto n : topology.split) {
      if (n == 0) invalid("topology.split", "every server needs at least one layer");
      total += n;
    }
    if (total != model.n_layers) {
      invalid("topology.split", "sums to " + std::to_string(total) + ", expected model.n_layers = " +
                                    std::to_string(model.n_layers));
    }
  }
  if (!topology.behaviors.empty() && topology.behaviors.size() != topology.n_servers) {
    invalid("topology.behaviors", "needs one entry per server (" + std::to_string(topology.n_servers) + ")");
  }
  positive("topology.n_verifiers", trust.n_verifiers);

  if (!(trust.theta >= 0.0 && trust.theta <= 1.0)) invalid("trust.theta", "must be in [0, 1]");
  if (!(trust.tau > 0.0)) invalid("trust.tau", "must be positive");
  positive("trust.probe_count", trust.probe_count);
  positive("trust.probe_len", trust.probe_len);
  if (trust.probe_len > model.max_seq_len) invalid("trust.probe_len", "cannot exceed model.seq_len");
  if (!(trust.weight > 0.0 && trust.weight <= 1.0)) invalid("trust.w", "must be in (0, 1]");

  if (compression.mode != fed::CompressionSpec::Mode::none &&
      !(compression.value > 0.0 && compression.value <= 1.0)) {
    invalid("compression.value", "must be in (0, 1]");
  }

  if (verify.base < 2) invalid("verify.b", "must be >= 2");
  positive("verify.K", verify.digits);
  if (verify.frac_bits > 52) invalid("verify.f", "must be <= 52");
  try {
    verify.validate();
  } catch (const std::invalid_argument& e) {
    invalid("verify.K", e.what());
  }
  positive("verify.n_workers", verify_workers);

  positive("run.input_len", run.input_len);
  if (run.input_len > model.max_seq_len) invalid("run.input_len", "cannot exceed model.seq_len");
  if (!(run.tolerance >= 0.0)) invalid("run.tolerance", "must be >= 0");
}

ExperimentConfig parse_config_text(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("", line_no, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", line_no, "line " + std::to_string(line_no) + ": missing key");

    const auto& specs = key_specs();
    const auto it = std::find_if(specs.begin(), specs.end(), [&](const KeySpec& s) { return key == s.name; });
    if (it == specs.end()) {
      throw ConfigError(key, line_no, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError(key, line_no, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, line_no, "line " + std::to_string(line_no) + ": " + key + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", 0, "cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.key(), e.line(), path.string() + ": " + e.what());
  }
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& spec : key_specs()) {
    out += spec.name;
    out += " = ";
    out += spec.get(config);
    out += '\n';
  }
  return out;
}

std::string config_digest(const ExperimentConfig& config) {
  const std::string text = dump_config(config);
  return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

}  // namespace efedsim
