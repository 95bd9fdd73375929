#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "efedsim/federation.hpp"
#include "efedsim/softmax_verify.hpp"
#include "efedsim/transformer.hpp"
#include "efedsim/trust.hpp"

namespace efedsim {

/// Bad config file or value. `key()` names the offending key when known;
/// `line()` is 1-based, 0 when the error is not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, std::size_t line, const std::string& message);
  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

struct TopologyConfig {
  std::size_t n_servers = 4;
  std::vector<std::size_t> split;               // empty: equal split
  std::vector<fed::ServerBehavior> behaviors;   // empty: all honest
};

struct RunConfig {
  std::size_t rounds = 3;
  std::size_t input_len = 16;
  double tolerance = 1e-12;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  ModelConfig model;
  TopologyConfig topology;
  trust::VerifierConfig trust{0.5, 8, 1e-6, 1.0, 2, 8};
  fed::CompressionSpec compression;
  verify::BaseBConfig verify;
  std::size_t verify_workers = 4;
  RunConfig run;

  /// Layer count per server, resolving an omitted split.
  std::vector<std::size_t> resolved_split() const;
  std::vector<fed::ServerBehavior> resolved_behaviors() const;

  /// Throws ConfigError naming the first invalid key.
  void validate() const;
};

/// Parses `section.key = value` lines; '#' starts a comment. Omitted keys
/// keep their defaults; unknown or repeated keys are rejected.
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Canonical text form: every key, fixed order, resolved lists.
std::string dump_config(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_digest(const ExperimentConfig& config);

/// Shortest decimal that round-trips to the same double.
std::string format_number(double value);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace efedsim
