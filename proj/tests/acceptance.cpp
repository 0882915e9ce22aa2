#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adshield/defender.hpp"
#include "adshield/harness.hpp"
#include "adshield/oracle.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace adshield;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

bool has_shared_bw(const CondensedGraph& cg) {
  return std::any_of(cg.bw_edges.begin(), cg.bw_edges.end(), [](const auto& b) { return b.member_nsps.size() > 1; });
}

// Desk graphs over a fixed sweep of shapes, seeds and rate modes, filtered by `keep`.
std::vector<std::shared_ptr<const AttackModel>> desk_models(std::size_t want,
                                                            const std::function<bool(const AttackModel&)>& keep) {
  std::vector<std::shared_ptr<const AttackModel>> out;
  const RateMode modes[] = {RateMode::Independent, RateMode::Positive, RateMode::Negative};
  for (std::uint64_t seed = 0; out.size() < want && seed < 1000; ++seed) {
    const int entries = 2 + static_cast<int>(seed % 2);
    const int splits = 3 + static_cast<int>(seed / 2 % 3);
    auto m = testing::model_of(testing::desk_graph(seed, entries, splits, modes[seed % 3]));
    if (keep(*m)) out.push_back(m);
  }
  return out;
}

DefenseConfig random_plan(const AttackModel& m, std::size_t max_k, Rng& rng) {
  const std::size_t k = uniform_index(rng, std::min(max_k, m.num_bw()) + 1);
  return random_config(m.num_bw(), k, rng);
}

// Criterion 1: Monte Carlo play of the exact policy agrees with the exact value.
Verdict environment_matches_oracle() {
  auto models = desk_models(20, [](const AttackModel& m) { return m.num_nsps() >= 2 && m.num_nsps() <= 10; });
  if (models.size() < 20) return {false, "not enough graphs"};
  Rng rng(11);
  const std::size_t episodes = 10000;
  double worst = 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto plan = random_plan(*models[i], 2, rng);
    const double v = exact_value(models[i], plan);
    const auto mc = mc_optimal_play(models[i], plan, episodes, mix_seed(11, i));
    const double sigma = std::sqrt(v * (1 - v) / static_cast<double>(episodes));
    const double z = sigma > 0 ? std::abs(mc.mean - v) / sigma : (mc.mean == v ? 0.0 : 1e9);
    worst = std::max(worst, z);
    ok += z <= 3.0;
  }
  return {ok == models.size(), format("%zu/%zu graphs within 3 sigma, worst |z| = %.2f", ok, models.size(), worst)};
}

// Criterion 2: trained PPO reaches the exact optimum within 0.05.
Verdict ppo_is_near_optimal() {
  std::size_t shared = 0, plain = 0;
  auto models = desk_models(6, [&](const AttackModel& m) {
    if (m.num_nsps() < 4 || m.num_nsps() > 12) return false;
    const bool s = has_shared_bw(m.graph());
    // Mixed structure: half with a shared bw edge, half without.
    if (s && shared < 3) return ++shared, true;
    if (!s && plain < 3) return ++plain, true;
    return false;
  });
  if (models.size() < 6) return {false, "not enough graphs"};
  PpoConfig cfg;
  Rng rng(22);
  std::string detail;
  bool pass = true;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto plan = random_plan(*models[i], 1, rng);
    auto slots = make_env_slots(models[i], {plan}, mix_seed(22, i));
    auto policy = Policy::create(models[i]->num_nsps(), cfg.hidden, mix_seed(22, i));
    train(slots, policy, cfg, 150, nullptr, mix_seed(22, i));
    const auto eval = evaluate_policy(policy.actor, *models[i], plan, 5000, mix_seed(23, i));
    const double opt = exact_value(models[i], plan);
    pass = pass && std::abs(eval.mean - opt) <= 0.05;
    detail += format("%s%.3f/%.3f", i ? " " : "", eval.mean, opt);
  }
  return {pass, "ppo/exact: " + detail};
}

// Criterion 3: C-EDO on exact fitness finds an optimal plan.
Verdict cedo_finds_optimum() {
  auto models =
      desk_models(3, [](const AttackModel& m) { return m.num_bw() >= 7 && m.num_bw() <= 12 && m.num_nsps() <= 14; });
  if (models.size() < 3) return {false, "not enough graphs"};
  bool pass = true;
  std::string detail;
  for (std::size_t g = 0; g < models.size(); ++g) {
    const double opt = exact_best_defense(models[g], 3).value;
    auto fitness = oracle_fitness(models[g]);
    DefenderOptions o;
    o.budget = 3;
    o.population = 20;
    o.total_iterations = 5000;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto p = evolve(fitness, models[g]->num_bw(), o, SurvivorRule::Diversity, seed);
      hits += exact_value(models[g], p.best_ever->config) <= opt + 0.02;
    }
    pass = pass && hits >= 4;
    detail += format("%s|BW|=%zu %d/5", g ? ", " : "", models[g]->num_bw(), hits);
  }
  return {pass, detail};
}

// Removal leaving the lexicographically smallest descending count vector; worst fitness then oldest on ties.
std::size_t brute_force_removal(const Population& p) {
  std::optional<std::vector<int>> best;
  std::size_t victim = 0;
  for (std::size_t i = 0; i < p.members.size(); ++i) {
    std::vector<int> rest(p.counts.size(), 0);
    for (std::size_t j = 0; j < p.members.size(); ++j)
      if (j != i)
        for (std::size_t e = 0; e < rest.size(); ++e) rest[e] += p.members[j].config.blocked[e];
    std::sort(rest.begin(), rest.end(), std::greater<>());
    const auto& m = p.members[i];
    const auto& v = p.members[victim];
    const bool worse = m.fitness < v.fitness || (m.fitness == v.fitness && m.age < v.age);
    if (!best || rest < *best || (rest == *best && worse)) {
      best = rest;
      victim = i;
    }
  }
  return victim;
}

// Criterion 4: diversity survivor selection equals the exhaustive oracle.
Verdict survivor_selection_exact() {
  Rng rng(44);
  std::size_t agree = 0;
  const std::size_t trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 9);
    const std::size_t k = 1 + uniform_index(rng, n - 1);
    const std::size_t mu = 1 + uniform_index(rng, 8);
    Population p;
    p.k = k;
    p.counts.assign(n, 0);
    for (std::size_t i = 0; i <= mu; ++i)
      p.add(random_config(n, k, rng), -static_cast<double>(uniform_index(rng, 4)) / 8.0);
    const auto expected = brute_force_removal(p);
    auto remaining = p.members;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(expected));
    // opt_before at the top keeps the offspring from counting as a new best.
    survivor_select(p, 0.0, SurvivorRule::Diversity);
    bool same = p.members.size() == remaining.size() && p.counts == p.recount();
    for (std::size_t i = 0; same && i < remaining.size(); ++i)
      same = p.members[i].age == remaining[i].age && p.members[i].config == remaining[i].config;
    agree += same;
  }
  return {agree == trials, format("%zu/%zu populations agree", agree, trials)};
}

// Criterion 6: PPO loss gradients against central differences.
Verdict gradients_exact() {
  double worst = 0.0;
  bool masked = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto r = testing::ppo_gradient_check(seed);
    worst = std::max({worst, r.actor_rel, r.critic_rel});
    masked = masked && r.masked_zero;
  }
  return {worst < 1e-4 && masked, format("worst relative error %.2e over 50 nets", worst)};
}

void enumerate(std::span<const PathProbs> edges, std::size_t i, double mass, PathProbs& acc) {
  if (i == edges.size()) {
    acc.ps += mass;
    return;
  }
  acc.pf += mass * edges[i].pf;
  acc.pd += mass * edges[i].pd;
  enumerate(edges, i + 1, mass * edges[i].ps, acc);
}

double enumeration_error(std::span<const PathProbs> edges, const PathProbs& got) {
  PathProbs ref{0.0, 0.0, 0.0};
  enumerate(edges, 0, 1.0, ref);
  return std::max({std::abs(got.ps - ref.ps), std::abs(got.pf - ref.pf), std::abs(got.pd - ref.pd)});
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Criterion 7: aggregated NSP probabilities and rate distributions.
Verdict probability_plumbing() {
  Rng rng(77);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<PathProbs> edges(1 + uniform_index(rng, 4));
    for (auto& e : edges) {
      e.pd = uniform01(rng) * 0.5;
      e.pf = uniform01(rng) * 0.5;
      e.ps = 1.0 - e.pd - e.pf;
    }
    worst = std::max(worst, enumeration_error(edges, aggregate_probs(edges)));
  }
  std::size_t nsps = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cg = condense(testing::desk_graph(seed, 3, 4));
    for (const auto& n : cg.nsps) {
      if (n.edge_seq.size() > 4) continue;
      std::vector<PathProbs> edges;
      for (auto e : n.edge_seq) {
        const auto& a = cg.graph.edges[e].attr;
        edges.push_back({1.0 - a.pd - a.pf, a.pf, a.pd});
      }
      worst = std::max(worst, enumeration_error(edges, n.probs));
      ++nsps;
    }
  }
  bool pass = worst <= 1e-12;
  std::string detail = format("max enumeration error %.1e over 1000 tuples and %zu NSPs", worst, nsps);

  auto g = generate_synthetic(2000, 7);
  for (auto [mode, rho] : {std::pair{RateMode::Independent, 0.0}, std::pair{RateMode::Positive, 0.5},
                           std::pair{RateMode::Negative, -0.5}}) {
    assign_rates(g, RateDistribution::from_mode(mode), 7);
    std::vector<double> pd, pf;
    for (const auto& e : g.edges) {
      pd.push_back(e.attr.pd);
      pf.push_back(e.attr.pf);
    }
    double mpd = 0, mpf = 0;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      mpd += pd[i] / static_cast<double>(pd.size());
      mpf += pf[i] / static_cast<double>(pf.size());
    }
    const double r = pearson(pd, pf);
    pass = pass && std::abs(mpd - 0.1) <= 0.005 && std::abs(mpf - 0.1) <= 0.005 && std::abs(r - rho) <= 0.08;
    detail += format("; %s mean pd %.4f pf %.4f corr %+.3f (%zu edges)", std::string(to_string(mode)).c_str(), mpd,
                     mpf, r, pd.size());
  }
  return {pass, detail};
}

// Criterion 8: condensed node count and the block budget of every admitted individual.
Verdict structural_invariants() {
  std::size_t ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = seed % 2 ? testing::desk_graph(seed, 3, 5) : generate_synthetic(50 + static_cast<int>(seed), seed);
    if (seed % 2 == 0) {
      assign_rates(g, RateDistribution::from_mode(RateMode::Independent), seed);
      assign_blockable(g, seed);
      g.entries = select_entries(g, seed);
    }
    auto cg = condense(g);
    std::set<std::size_t> nodes(cg.entries.begin(), cg.entries.end());
    for (const auto& n : cg.nsps) {
      nodes.insert(n.src);
      nodes.insert(n.dst);
    }
    ok += cg.node_count() == cg.entries.size() + cg.split.size() + 1 && nodes.size() == cg.node_count();
  }

  auto g = generate_synthetic(400, 3);
  assign_rates(g, RateDistribution::from_mode(RateMode::Independent), 3);
  assign_blockable(g, 3);
  g.entries = select_entries(g, 3);
  auto cg = std::make_shared<const CondensedGraph>(condense(g));
  auto model = std::make_shared<const AttackModel>(cg);
  if (model->num_bw() < 6) return {false, "synthetic graph has too few block-worthy edges"};
  auto critic = Policy::create(model->num_nsps(), 32, 3).critic;
  auto fitness = critic_fitness(critic, model);
  Rng rng(88);
  auto p = init_population(20, 5, model->num_bw(), fitness, rng);
  std::size_t admitted = 0, bad = 0;
  for (const auto& m : p.members) bad += m.config.block_count() != 5;
  for (int i = 0; i < 2000; ++i) {
    auto r = edo_step(p, fitness, rng, SurvivorRule::Diversity);
    if (r.admitted) {
      ++admitted;
      bad += r.offspring.block_count() != 5;
    }
    for (const auto& m : p.members) bad += m.config.block_count() != 5;
  }
  return {ok == 100 && bad == 0 && admitted > 0,
          format("%zu/100 graphs with |Entry|+|Split|+1 nodes; %zu admitted offspring, %zu budget violations", ok,
                 admitted, bad)};
}

ExperimentSpec ordering_spec() {
  ExperimentSpec s;
  s.graph_id = "desk_e2s4_g10";
  s.desk.entries = 2;
  s.desk.splits = 4;
  s.graph_seed = 10;
  s.budget = 3;
  s.seeds = {0, 1, 2, 3, 4};
  return s;
}

// Criterion 5: C-EDO <= EC <= Greedy in mean attacker success.
Verdict policy_ordering() {
  auto report = run_setup1(ordering_spec());
  std::map<std::string, double> mean;
  std::map<std::string, int> n;
  for (const auto& r : report.rows) {
    mean[r.policy] += r.success;
    ++n[r.policy];
  }
  for (auto& [k, v] : mean) v /= n[k];
  const bool pass = n["cedo"] >= 5 && n["ec"] >= 5 && n["greedy"] >= 5 && mean["cedo"] <= mean["ec"] + 0.02 &&
                    mean["ec"] <= mean["greedy"] + 0.02;
  return {pass, format("cedo %.4f, ec %.4f, greedy %.4f over %d seeds", mean["cedo"], mean["ec"], mean["greedy"],
                       n["cedo"])};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Criterion 9: two setup1 runs write byte-identical results.
Verdict setup1_deterministic() {
  auto spec = ordering_spec();
  spec.epochs = 20;
  spec.retrain_epochs = 20;
  spec.eval_episodes = 2000;
  spec.iterations = 200;
  spec.ppo.hook_interval = 5;
  spec.seeds = {0, 1};
  const auto root = fs::temp_directory_path() / "adshield_acceptance";
  fs::remove_all(root);
  write_report(run_setup1(spec), (root / "a").string());
  write_report(run_setup1(spec), (root / "b").string());
  const auto a = read_file(root / "a" / "results.csv");
  const auto b = read_file(root / "b" / "results.csv");
  fs::remove_all(root);
  return {!a.empty() && a == b, format("results.csv %zu bytes, %s", a.size(), a == b ? "identical" : "different")};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  Verdict (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "environment matches exact solver", 120, environment_matches_oracle},
      {2, "PPO within 0.05 of optimum", 900, ppo_is_near_optimal},
      {3, "C-EDO reaches the optimal defense", 600, cedo_finds_optimum},
      {4, "diversity selection matches brute force", 60, survivor_selection_exact},
      {5, "policy ordering cedo <= ec <= greedy", 1800, policy_ordering},
      {6, "gradient exactness", 60, gradients_exact},
      {7, "probability plumbing", 600, probability_plumbing},
      {8, "structural invariants", 600, structural_invariants},
      {9, "setup1 determinism", 600, setup1_deterministic},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.limit_seconds;
    failed += !pass;
    std::printf("criterion %d %s: %s (%s; %.1fs of %.0fs)\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
