#include <doctest.h>

#include "efedsim/trust.hpp"

using namespace efedsim;
using namespace efedsim::trust;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 4;
  c.d_ff = 16;
  c.vocab_size = 13;
  c.max_seq_len = 8;
  return c;
}

struct Scenario {
  ModelParams params;
  fed::Simulation sim;

  Scenario(std::vector<std::string> behaviors, std::uint64_t seed = 3)
      : params(init_params(tiny(), seed)), sim(params, topology(behaviors), {{}, seed, nullptr}) {
    sim.distribute_model();
  }

  static fed::Topology topology(const std::vector<std::string>& behaviors) {
    std::vector<fed::ServerBehavior> b;
    for (const auto& s : behaviors) b.push_back(fed::ServerBehavior::parse(s));
    return fed::Topology::equal(b.size(), 4, b);
  }
};

VerifierConfig config(std::size_t n_verifiers = 1) {
  VerifierConfig c;
  c.theta = 0.5;
  c.probe_count = 8;
  c.tau = 1e-6;
  c.n_verifiers = n_verifiers;
  c.probe_len = 4;
  return c;
}

std::vector<Matrix> probes(std::uint64_t seed = 17) { return make_probes(8, 4, 8, seed); }

}  // namespace

TEST_CASE("trust score examples") {
  CHECK(trust_score(0.9, 2, 4, 1.0) == 0.45);
  CHECK(trust_score(1.0, 4, 4, 1.0) == 1.0);
  CHECK(trust_score(0.0, 3, 4, 1.0) == 0.0);
  CHECK(trust_score(1.0, 1, 4, 0.5) == 0.125);
  CHECK_THROWS(trust_score(1.1, 1, 4, 1.0));
  CHECK_THROWS(trust_score(0.5, 0, 4, 1.0));
  CHECK_THROWS(trust_score(0.5, 5, 4, 1.0));
  CHECK_THROWS(trust_score(0.5, 1, 4, 1.5));
}

TEST_CASE("threshold is inclusive") {
  const NodeId s = wire::server_node(0);
  CHECK(make_record(s, 1.0, 2, 4, 1.0, 0.5).status == ServerStatus::active);
  CHECK(make_record(s, 1.0, 2, 4, 1.0, std::nextafter(0.5, 1.0)).status == ServerStatus::deactivated);
  CHECK(make_record(s, 0.0, 1, 4, 1.0, 0.0).status == ServerStatus::active);
}

TEST_CASE("accuracy counts probes within tau") {
  const Matrix a{{1.0, 2.0}};
  const Matrix near{{1.0 + 5e-7, 2.0}};
  const Matrix far{{1.0, 2.1}};
  const Matrix nan{{std::nan(""), 2.0}};
  const std::vector<Matrix> ref(4, a);
  CHECK(estimate_accuracy(std::vector<Matrix>(4, a), ref, 1e-6) == 1.0);
  CHECK(estimate_accuracy(std::vector<Matrix>(4, far), ref, 1e-6) == 0.0);
  CHECK(estimate_accuracy(std::vector<Matrix>{a, near, far, a}, ref, 1e-6) == 0.75);
  CHECK(estimate_accuracy(std::vector<Matrix>{nan, a, a, a}, ref, 1e-6) == 0.75);
  CHECK_THROWS(estimate_accuracy(std::vector<Matrix>(3, a), ref, 1e-6));
  CHECK_THROWS(estimate_accuracy(std::vector<Matrix>{}, std::vector<Matrix>{}, 1e-6));
}

TEST_CASE("score properties") {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const std::size_t max_l = 1 + rng.below(10);
    const std::size_t l = 1 + rng.below(max_l);
    const double acc = rng.uniform();
    const double w = 0.01 + 0.99 * rng.uniform();
    const double s = trust_score(acc, l, max_l, w);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK(trust_score(std::min(1.0, acc + 0.1), l, max_l, w) >= s);
    if (l < max_l) CHECK(trust_score(acc, l + 1, max_l, w) >= s);
    // layer count only matters relative to the largest stage
    CHECK(trust_score(acc, 2 * l, 2 * max_l, w) == doctest::Approx(s).epsilon(1e-15));
  }
}

TEST_CASE("honest federation stays active") {
  Scenario sc({"honest", "honest"});
  const auto records = verification_round(sc.sim, sc.params, probes(), config());
  REQUIRE(records.size() == 2);
  for (const auto& r : records) {
    CHECK(r.acc == 1.0);
    CHECK(r.score == 1.0);
    CHECK(r.status == ServerStatus::active);
  }
  CHECK(enforce(sc.sim, records).empty());
}

TEST_CASE("sign flipping server is removed and its layers move") {
  Scenario sc({"honest", "sign_flip", "honest", "honest"});
  const auto records = verification_round(sc.sim, sc.params, probes(), config());
  REQUIRE(records.size() == 4);
  CHECK(records[1].acc == 0.0);
  CHECK(records[1].status == ServerStatus::deactivated);
  for (std::size_t i : {0u, 2u, 3u}) CHECK(records[i].status == ServerStatus::active);

  CHECK(enforce(sc.sim, records) == std::vector<std::uint32_t>{1});
  CHECK(!sc.sim.topology().servers[1].active);
  CHECK(sc.sim.topology().plan.find(0)->range == LayerRange{0, 2});
  CHECK(sc.sim.topology().plan.find(1) == nullptr);

  std::vector<std::uint32_t> toks{1, 2, 3};
  CHECK(sc.sim.run_pipeline(toks).output.bit_equal(model_forward(toks, sc.params)));

  const auto again = verification_round(sc.sim, sc.params, probes(99), config());
  REQUIRE(again.size() == 3);
  for (const auto& r : again) CHECK(r.status == ServerStatus::active);
}

TEST_CASE("noisy server falls below tau") {
  Scenario sc({"noisy:0.01", "honest"});
  const auto records = verification_round(sc.sim, sc.params, probes(), config());
  CHECK(records[0].acc == 0.0);
  CHECK(records[0].status == ServerStatus::deactivated);
  CHECK(records[1].status == ServerStatus::active);
}

TEST_CASE("verifier count does not change the records") {
  auto run = [](std::size_t n_verifiers) {
    Scenario sc({"honest", "stale", "honest"});
    auto records = verification_round(sc.sim, sc.params, probes(), config(n_verifiers));
    std::vector<std::tuple<double, double, int>> out;
    for (const auto& r : records) out.emplace_back(r.acc, r.score, static_cast<int>(r.status));
    return out;
  };
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(8) == one);
}

TEST_CASE("probe i goes to verifier i mod n") {
  Scenario sc({"honest"});
  verification_round(sc.sim, sc.params, probes(), config(3));
  for (const auto& m : sc.sim.trace()) {
    if (m.kind != wire::MessageKind::validation_probe) continue;
    const auto& p = std::get<wire::ProbePayload>(m.payload);
    CHECK(m.from == wire::verifier_node(p.probe_id % 3));
  }
}

TEST_CASE("server order does not change scores") {
  // Same behaviors on the same layer ranges, listed under permuted server ids.
  const ModelParams params = init_params(tiny(), 3);
  auto scores = [&](std::vector<std::uint32_t> ids) {
    fed::Topology t;
    std::vector<PlanEntry> entries;
    for (std::size_t i = 0; i < ids.size(); ++i) entries.push_back({ids[i], {i, i + 1}});
    t.plan = PartitionPlan(entries);
    t.servers.assign(ids.size(), {});
    t.servers[ids[2]].behavior = fed::ServerBehavior::parse("zeroing");
    fed::Simulation sim(params, t);
    sim.distribute_model();
    std::vector<double> s;
    for (const auto& r : verification_round(sim, params, probes(), config())) s.push_back(r.score);
    return s;
  };
  CHECK(scores({0, 1, 2, 3}) == scores({3, 1, 0, 2}));
}

TEST_CASE("gate warning when an honest short stage cannot pass") {
  const auto plan = PartitionPlan::from_counts(std::vector<std::size_t>{3, 1});
  VerifierConfig c = config();
  c.theta = 0.5;
  CHECK(honest_servers_fail_gate(plan, c));
  c.theta = 1.0 / 3.0;
  CHECK(!honest_servers_fail_gate(plan, c));
  CHECK(!honest_servers_fail_gate(PartitionPlan::equal_split(4, 4), config()));
}

TEST_CASE("config validation") {
  VerifierConfig c = config();
  c.theta = 1.5;
  CHECK_THROWS(c.validate());
  c = config();
  c.tau = 0.0;
  CHECK_THROWS(c.validate());
  c = config();
  c.n_verifiers = 0;
  CHECK_THROWS(c.validate());
}
