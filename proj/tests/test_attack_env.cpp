#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"

using namespace adshield;
using testing::model_from;

namespace {

const char* kSingle =
    "node E User\nnode DA DomainAdmin\nentry E\nedge E DA MemberOf pd=0.1 pf=0.2 blockable=1\n";

const char* kShared =
    "node E1 User\nnode E2 User\nnode M User\nnode DA DomainAdmin\nentry E1\nentry E2\n"
    "edge E1 M MemberOf pd=0.1 pf=0.3 blockable=0\n"
    "edge E2 M MemberOf pd=0.1 pf=0.3 blockable=0\n"
    "edge M DA MemberOf pd=0.1 pf=0.3 blockable=1\n";

const char* kDiamond =
    "node E User\nnode A User\nnode B User\nnode C User\nnode DA DomainAdmin\nentry E\n"
    "edge E A MemberOf pd=0.1 pf=0.1 blockable=1\n"
    "edge A B MemberOf pd=0.1 pf=0.1 blockable=1\n"
    "edge A C MemberOf pd=0.1 pf=0.1 blockable=0\n"
    "edge B DA MemberOf pd=0.1 pf=0.1 blockable=0\n"
    "edge C DA MemberOf pd=0.1 pf=0.1 blockable=0\n";

// E reaches A and B directly and A can also reach B.
const char* kShortcut =
    "node E User\nnode A User\nnode B User\nnode C User\nnode DA DomainAdmin\nentry E\n"
    "edge E A MemberOf pd=0 pf=0 blockable=0\n"
    "edge E B MemberOf pd=0 pf=0 blockable=0\n"
    "edge A B MemberOf pd=0.1 pf=0.1 blockable=0\n"
    "edge A DA MemberOf pd=0.1 pf=0.4 blockable=0\n"
    "edge B DA MemberOf pd=0.1 pf=0.4 blockable=0\n"
    "edge B C MemberOf pd=0.1 pf=0.1 blockable=0\n"
    "edge C DA MemberOf pd=0.1 pf=0.1 blockable=0\n";

std::size_t nsp_between(const AttackModel& m, const std::string& src, const std::string& dst) {
  const auto& cg = m.graph();
  for (const auto& n : cg.nsps)
    if (cg.graph.nodes[n.src].id == src && cg.graph.nodes[n.dst].id == dst) return n.id;
  FAIL("no such NSP");
  return 0;
}

std::size_t count(const AttackerState& s, Status st) {
  return static_cast<std::size_t>(std::count(s.statuses.begin(), s.statuses.end(), st));
}

}  // namespace

TEST_CASE("initial state marks NSPs of blocked bw edges failed") {
  auto m = model_from(kShared);
  REQUIRE(m->num_nsps() == 2);
  REQUIRE(m->num_bw() == 1);
  auto open = m->initial_state(DefenseConfig::none(1));
  CHECK(count(open, Status::Unknown) == 2);
  auto blocked = m->initial_state(DefenseConfig::from_bitstring("1"));
  CHECK(blocked.statuses[0] == Status::F);
  CHECK(blocked.statuses[1] == Status::F);
  CHECK_THROWS_AS(m->initial_state(DefenseConfig::none(2)), Error);

  auto d = model_from(kDiamond);
  REQUIRE(d->num_bw() == 2);
  const auto eb = d->graph().nsps[nsp_between(*d, "E", "A")].bw;
  REQUIRE(eb);
  std::vector<std::size_t> ids = {*eb};
  auto s = d->initial_state(DefenseConfig::from_ids(2, ids));
  CHECK(count(s, Status::F) == 1);
  CHECK(s.statuses[nsp_between(*d, "E", "A")] == Status::F);
}

TEST_CASE("controlled nodes") {
  auto m = model_from(kDiamond);
  auto s = m->initial_state(DefenseConfig::none(m->num_bw()));
  auto entries = m->graph().entries;
  CHECK(m->controlled_nodes(s) == entries);
  auto ea = nsp_between(*m, "E", "A");
  s.statuses[ea] = Status::S;
  auto c = m->controlled_nodes(s);
  std::vector<std::size_t> expected = {entries[0], *m->graph().graph.find("A")};
  std::sort(expected.begin(), expected.end());
  CHECK(c == expected);
  for (auto& st : s.statuses) st = Status::F;
  CHECK(m->controlled_nodes(s) == entries);
}

TEST_CASE("legal actions") {
  auto m = model_from(kDiamond);
  auto s = m->initial_state(DefenseConfig::none(m->num_bw()));
  auto ea = nsp_between(*m, "E", "A");
  CHECK(m->legal_actions(s) == std::vector<std::size_t>{ea});

  s.statuses[ea] = Status::S;
  auto legal = m->legal_actions(s);
  CHECK(legal.size() == 2);
  for (auto a : legal) CHECK(m->graph().graph.nodes[m->graph().nsps[a].src].id == "A");

  for (auto& st : s.statuses) st = Status::F;
  CHECK(m->legal_actions(s).empty());
  CHECK(m->terminal(s));
}

TEST_CASE("outcome distribution of a single NSP into DA") {
  auto m = model_from(kSingle);
  auto s = m->initial_state(DefenseConfig::none(1));
  auto out = m->outcome_distribution(s, 0);
  REQUIRE(out.size() == 3);
  CHECK(out[0].branch == Branch::Success);
  CHECK(out[0].probability == doctest::Approx(0.7));
  CHECK(out[0].reward == 1.0);
  CHECK(out[0].done);
  CHECK(out[1].branch == Branch::Failure);
  CHECK(out[1].probability == doctest::Approx(0.2));
  CHECK(out[1].reward == 0.0);
  CHECK(out[1].next.statuses[0] == Status::F);
  CHECK(m->terminal(out[1].next));
  CHECK(out[2].branch == Branch::Detection);
  CHECK(out[2].probability == doctest::Approx(0.1));
  CHECK(out[2].done);
  CHECK(out[2].next.detected);
}

TEST_CASE("failure on a shared bw edge fails every member") {
  auto m = model_from(kShared);
  auto s = m->initial_state(DefenseConfig::none(1));
  auto out = m->outcome_distribution(s, 0);
  auto fail = std::find_if(out.begin(), out.end(), [](const auto& o) { return o.branch == Branch::Failure; });
  REQUIRE(fail != out.end());
  CHECK(fail->next.statuses[0] == Status::F);
  CHECK(fail->next.statuses[1] == Status::F);
}

TEST_CASE("failure on an unblockable NSP only fails itself") {
  auto m = model_from(kShortcut);
  auto s = m->initial_state(DefenseConfig::none(m->num_bw()));
  const auto ea = nsp_between(*m, "E", "A");
  auto out = m->outcome_distribution(s, ea);
  REQUIRE(out.size() == 1);  // pd = pf = 0
  CHECK(out[0].probability == 1.0);
  s = out[0].next;
  const auto ab = nsp_between(*m, "A", "B");
  for (const auto& o : m->outcome_distribution(s, ab))
    if (o.branch == Branch::Failure) CHECK(count(o.next, Status::F) == 1);
}

TEST_CASE("success propagates to NSPs whose destination is already controlled") {
  auto m = model_from(kShortcut);
  auto s = m->initial_state(DefenseConfig::none(m->num_bw()));
  s = m->step(s, nsp_between(*m, "E", "A"), 0.0).next;
  s = m->step(s, nsp_between(*m, "E", "B"), 0.0).next;
  CHECK(s.statuses[nsp_between(*m, "A", "B")] == Status::S);
  auto legal = m->legal_actions(s);
  for (auto a : legal) CHECK(s.statuses[a] == Status::Unknown);
}

TEST_CASE("step picks branches by the uniform draw") {
  auto m = model_from(kSingle);
  auto s = m->initial_state(DefenseConfig::none(1));
  CHECK(m->step(s, 0, 0.0).branch == Branch::Success);
  CHECK(m->step(s, 0, 0.75).branch == Branch::Failure);
  CHECK(m->step(s, 0, 0.95).branch == Branch::Detection);
  auto done = m->step(s, 0, 0.0).next;
  CHECK_THROWS_AS(m->step(done, 0, 0.0), Error);
}

TEST_CASE("empirical step frequencies match the outcome distribution") {
  auto m = model_from(kSingle);
  auto s = m->initial_state(DefenseConfig::none(1));
  Rng rng(5);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(m->step(s, 0, rng).branch)];
  const double p[3] = {0.7, 0.2, 0.1};
  for (int b = 0; b < 3; ++b) {
    const double sigma = std::sqrt(p[b] * (1 - p[b]) / n);
    CHECK(std::abs(counts[b] / double(n) - p[b]) <= 3 * sigma);
  }
}

TEST_CASE("illegal actions are rejected") {
  auto m = model_from(kDiamond);
  auto s = m->initial_state(DefenseConfig::none(m->num_bw()));
  CHECK_THROWS_AS(m->outcome_distribution(s, nsp_between(*m, "A", "DA")), Error);
  CHECK_THROWS_AS(m->step(s, 99, 0.0), Error);
}

TEST_CASE("encoding") {
  auto m = model_from(kDiamond);
  AttackerState s;
  s.statuses.assign(m->num_nsps(), Status::Unknown);
  for (double v : m->encode(s)) CHECK(v == 0.0);
  s.statuses[0] = Status::S;
  s.statuses[1] = Status::F;
  auto f = m->encode(s);
  CHECK(f[0] == 1.0);
  CHECK(f[1] == -1.0);
  CHECK(f[2] == 0.0);
}

TEST_CASE("random trajectories respect the MDP invariants") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto m = testing::model_of(testing::desk_graph(seed, 3, 4));
    Rng rng(seed);
    const std::size_t k = std::min<std::size_t>(2, m->num_bw());
    for (int ep = 0; ep < 50; ++ep) {
      std::vector<std::size_t> ids;
      for (std::size_t i = 0; i < m->num_bw(); ++i) ids.push_back(i);
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(k);
      auto d = DefenseConfig::from_ids(m->num_bw(), ids);
      auto s = m->initial_state(d);
      std::set<std::size_t> blocked_nsps;
      for (auto b : d.blocked_ids())
        for (auto n : m->graph().bw_edges[b].member_nsps) blocked_nsps.insert(n);
      std::size_t steps = 0;
      while (!m->terminal(s)) {
        auto legal = m->legal_actions(s);
        for (auto a : legal) REQUIRE(blocked_nsps.count(a) == 0);
        const auto a = legal[uniform_index(rng, legal.size())];
        double total = 0.0;
        for (const auto& o : m->outcome_distribution(s, a)) {
          total += o.probability;
          if (o.reward > 0.0) {
            REQUIRE(o.done);
            REQUIRE(m->graph().nsps[a].dst == m->graph().da);
            REQUIRE(m->da_controlled(o.next));
          }
        }
        REQUIRE(std::abs(total - 1.0) <= 1e-12);
        const auto before = count(s, Status::Unknown);
        auto out = m->step(s, a, rng);
        if (!out.next.detected) REQUIRE(count(out.next, Status::Unknown) < before);
        s = std::move(out.next);
        ++steps;
      }
      REQUIRE(steps <= m->num_nsps());
    }
  }
}

TEST_CASE("environment adopts a pending config at reset and records a trace") {
  auto m = model_from(kShared);
  AttackEnv env(m, DefenseConfig::none(1));
  env.reset();
  CHECK(env.state().statuses[0] == Status::Unknown);
  env.set_pending_config(DefenseConfig::from_bitstring("1"));
  CHECK(env.config() == DefenseConfig::none(1));
  env.reset();
  CHECK(env.config() == DefenseConfig::from_bitstring("1"));
  CHECK(env.done());

  AttackEnv open(m, DefenseConfig::none(1));
  open.reset();
  Rng rng(1);
  while (!open.done()) open.step(open.model().legal_actions(open.state()).front(), rng);
  REQUIRE_FALSE(open.trace().empty());
  CHECK(open.trace().front().rfind("step ", 0) == 0);
  CHECK_THROWS_AS(open.step(0, rng), Error);
}

TEST_CASE("defense config helpers") {
  auto d = DefenseConfig::from_bitstring("01101");
  CHECK(d.block_count() == 3);
  CHECK(d.blocked_ids() == std::vector<std::size_t>{1, 2, 4});
  CHECK(d.bitstring() == "01101");
  CHECK_THROWS_AS(DefenseConfig::from_bitstring("01x"), Error);
}
