#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efedsim/codec.hpp"
#include "efedsim/commands.hpp"

using namespace efedsim;
using namespace efedsim::cli;

namespace {

std::vector<std::vector<std::string>> csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream l(line);
    std::string cell;
    while (std::getline(l, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

const std::string& file(const CommandResult& r, const std::string& name) {
  for (const auto& f : r.files)
    if (f.name == name) return f.content;
  FAIL("missing output " << name);
  static const std::string none;
  return none;
}

std::string summary_value(const CommandResult& r, const std::string& key) {
  for (const auto& row : csv(r.stdout_text))
    if (row.size() == 2 && row[0] == key) return row[1];
  return "";
}

}  // namespace

TEST_CASE("cost table reproduces the read-count table") {
  const CommandResult r = cost_table({5, 10, 100, 10000});
  CHECK(r.stdout_text ==
        "dim,centralized,federated,reduction\n"
        "5,250,50,80.00%\n"
        "10,2000,200,90.00%\n"
        "100,2000000,20000,99.00%\n"
        "10000,2000000000000,200000000,99.99%\n");
  CHECK(cost_table({1}).stdout_text == "dim,centralized,federated,reduction\n1,2,2,0.00%\n");
  CHECK_THROWS_AS(cost_table({}), UsageError);
  CHECK_THROWS_AS(cost_table({0}), UsageError);
}

TEST_CASE("svd-analyze selects the 40% row") {
  const CommandResult r = svd_analyze({});
  const auto rows = csv(r.stdout_text);
  REQUIRE(rows.size() == 769);
  CHECK(rows[0] == std::vector<std::string>{"k", "compression_ratio", "energy_ratio", "selected"});
  std::size_t selected = 0;
  double previous_energy = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double energy = std::stod(rows[i][2]);
    CHECK(energy >= previous_energy);
    previous_energy = energy;
    if (rows[i][3] == "1") {
      CHECK(selected == 0);
      selected = i;
    }
  }
  REQUIRE(selected == 307);
  CHECK(std::abs(std::stod(rows[307][1]) - 0.5332) < 5e-4);
  CHECK(std::stod(rows[307][2]) >= 0.90);
  CHECK(previous_energy == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(keep_rank(0.4, 768) == 307);
  CHECK(keep_rank(0.1, 3) == 1);
  CHECK_THROWS_AS(keep_rank(0.0, 10), UsageError);
}

TEST_CASE("svd-analyze on a matrix file") {
  const auto dir = std::filesystem::temp_directory_path() / "efedsim_cmd_test";
  std::filesystem::create_directories(dir);
  Rng rng(2);
  const Matrix w = matmul(rng.normal_matrix(12, 2, 1.0), rng.normal_matrix(2, 9, 1.0));
  wire::save_matrix_file(dir / "w.bin", w);

  SvdAnalyzeOptions opts;
  opts.matrix_file = dir / "w.bin";
  const auto rows = csv(svd_analyze(opts).stdout_text);
  REQUIRE(rows.size() == 10);
  CHECK(std::stod(rows[2][2]) == doctest::Approx(1.0).epsilon(1e-12));  // rank 2

  opts.shape = std::pair<std::size_t, std::size_t>{9, 12};
  CHECK_THROWS_AS(svd_analyze(opts), UsageError);
  opts.shape.reset();
  opts.matrix_file = dir / "missing.bin";
  CHECK_THROWS_AS(svd_analyze(opts), UsageError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bandwidth sweep") {
  const CommandResult r = bandwidth({});
  const auto rows = csv(r.stdout_text);
  REQUIRE(rows.size() == 1 + 7 * 2);
  double last[2] = {2.0, 2.0};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const int p = rows[i][2] == "transfer-bytes" ? 0 : 1;
    CHECK((p == 1 || rows[i][2] == "transfer-bytes"));
    const double rate = std::stod(rows[i][5]);
    CHECK(rate < last[p]);
    last[p] = rate;
    CHECK(rows[i][6] == "141557760");
    CHECK(rows[i][8] == "2382336");
  }
  CHECK(rows[1][0] == "0.2");
  CHECK(rows[13][0] == "0.8");
  // ratio 0.7 rows
  CHECK(rows[11][1] == "429");
  CHECK(rows[11][9] == "1670829");
  REQUIRE(r.notes.size() == 1);
  CHECK(r.notes[0].find("20.26%") != std::string::npos);
  CHECK(r.notes[0].find("28.75%") != std::string::npos);

  BandwidthOptions bad;
  bad.ratios = {1.5};
  CHECK_THROWS_AS(bandwidth(bad), UsageError);
}

TEST_CASE("honest pipeline run") {
  ExperimentConfig c;
  c.topology.split = {2, 1, 1};
  c.topology.n_servers = 3;
  c.trust.theta = 0.5;
  const CommandResult r = pipeline_run(c);
  CHECK(r.exit_code == kExitOk);
  CHECK(summary_value(r, "matches_monolith") == "true");
  CHECK(summary_value(r, "max_abs_diff") == "0");
  CHECK(summary_value(r, "active_servers") == "3");
  CHECK(summary_value(r, "output_digest") == summary_value(r, "monolith_digest"));
  CHECK(summary_value(r, "config_digest") == config_digest(c));

  const auto log = csv(file(r, "trust_log.csv"));
  REQUIRE(log.size() == 1 + 3 * 3);
  for (std::size_t i = 1; i < log.size(); ++i) {
    const double layers = std::stod(log[i][3]);
    CHECK(log[i][2] == "1");
    CHECK(std::stod(log[i][4]) == layers / 2.0);
    CHECK(log[i][5] == "active");
  }
  CHECK(csv(file(r, "events.csv")).size() == 1);
  CHECK(r.notes.empty());
}

TEST_CASE("adversarial pipeline run") {
  ExperimentConfig c;
  c.topology.behaviors = {fed::ServerBehavior{}, fed::ServerBehavior::parse("sign_flip"), fed::ServerBehavior{},
                          fed::ServerBehavior{}};
  const CommandResult r = pipeline_run(c);
  CHECK(r.exit_code == kExitOk);
  CHECK(summary_value(r, "active_servers") == "3");
  const std::string& events = file(r, "events.csv");
  CHECK(events.find("1,deactivated,1,") != std::string::npos);
  CHECK(events.find("1,reassigned,1,layers 1-1 to server 0") != std::string::npos);
  const std::string& ledger = file(r, "ledger.csv");
  CHECK(ledger.find("verifier0,server0,Reassignment,1,") != std::string::npos);
}

TEST_CASE("pipeline run warnings and failure") {
  ExperimentConfig c;
  c.topology.n_servers = 2;
  c.topology.split = {3, 1};
  CommandResult r = pipeline_run(c);
  REQUIRE(!r.notes.empty());
  CHECK(r.notes[0].find("warning") == 0);
  // the one-layer server is gated out; its layer moves and the output still matches
  CHECK(r.exit_code == kExitOk);

  c = ExperimentConfig{};
  c.topology.n_servers = 1;
  c.topology.behaviors = {fed::ServerBehavior::parse("zeroing")};
  r = pipeline_run(c);
  CHECK(r.exit_code == kExitVerdict);
  CHECK(summary_value(r, "output_digest") == "none");
  CHECK(file(r, "events.csv").find("stalled") != std::string::npos);
}

TEST_CASE("pipeline run is byte-deterministic") {
  ExperimentConfig c;
  c.topology.behaviors = {fed::ServerBehavior{}, fed::ServerBehavior::parse("noisy:0.1"), fed::ServerBehavior{},
                          fed::ServerBehavior{}};
  const CommandResult a = pipeline_run(c);
  const CommandResult b = pipeline_run(c);
  REQUIRE(a.files.size() == b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(a.files[i].content == b.files[i].content);
  c.seed = 43;
  CHECK(summary_value(pipeline_run(c), "monolith_digest") != summary_value(a, "monolith_digest"));
}

TEST_CASE("verify demo") {
  ExperimentConfig c;
  const CommandResult ok = verify_demo(c, {});
  CHECK(ok.exit_code == kExitOk);
  const auto rows = csv(ok.stdout_text);
  REQUIRE(rows.size() == 65);
  CHECK(rows[0] == std::vector<std::string>{"row", "f", "b", "K", "max_error", "bound", "pass"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stod(rows[i][4]) <= 1.0 / 128.0);
    CHECK(rows[i][6] == "true");
  }

  c.verify_workers = 1;
  const std::string one = verify_demo(c, {}).stdout_text;
  c.verify_workers = 8;
  CHECK(verify_demo(c, {}).stdout_text == one);

  VerifyDemoOptions tamper;
  tamper.tamper = 1e-2;
  const CommandResult bad = verify_demo(c, tamper);
  CHECK(bad.exit_code == kExitVerdict);
  CHECK(bad.stdout_text.find("false") != std::string::npos);

  VerifyDemoOptions zero;
  zero.rows = 0;
  CHECK_THROWS_AS(verify_demo(c, zero), UsageError);
}

TEST_CASE("shape and output directory helpers") {
  CHECK(parse_shape("768x2304") == std::pair<std::size_t, std::size_t>{768, 2304});
  CHECK_THROWS_AS(parse_shape("768"), UsageError);
  CHECK_THROWS_AS(parse_shape("x3"), UsageError);
  CHECK_THROWS_AS(parse_shape("3x-4"), UsageError);

  ::unsetenv("EFEDSIM_OUT_DIR");
  CHECK(!resolve_out_dir(std::nullopt));
  CHECK(resolve_out_dir(std::string("a")) == std::filesystem::path("a"));
  ::setenv("EFEDSIM_OUT_DIR", "/tmp/env_wins", 1);
  CHECK(resolve_out_dir(std::string("a")) == std::filesystem::path("/tmp/env_wins"));
  ::unsetenv("EFEDSIM_OUT_DIR");

  const auto dir = std::filesystem::temp_directory_path() / "efedsim_write_test" / "nested";
  write_files(cost_table({5}), dir);
  std::ifstream in(dir / "cost_table.csv");
  std::stringstream s;
  s << in.rdbuf();
  CHECK(s.str() == cost_table({5}).stdout_text);
  std::filesystem::remove_all(dir.parent_path());
}
