#include "adshield/defender.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include "adshield/oracle.hpp"

namespace adshield {

FitnessFn critic_fitness(const MlpParams& critic, std::shared_ptr<const AttackModel> model) {
  return [critic, model](const DefenseConfig& d) {
    const auto s = model->initial_state(d);
    if (model->terminal(s)) return fitness_from_success(model->da_controlled(s) ? 1.0 : 0.0);
    return fitness_from_success(critic_forward(critic, model->encode(s)));
  };
}

FitnessFn oracle_fitness(std::shared_ptr<const AttackModel> model) {
  auto cache = std::make_shared<std::map<std::vector<std::uint8_t>, double>>();
  return [model, cache](const DefenseConfig& d) {
    auto it = cache->find(d.blocked);
    if (it == cache->end()) it = cache->emplace(d.blocked, fitness_from_success(exact_value(model, d))).first;
    return it->second;
  };
}

void Population::add(DefenseConfig config, double fitness) {
  if (config.block_count() != k)
    throw Error(ErrorCode::Internal, "individual violates the budget: " + std::to_string(config.block_count()) +
                                         " blocks, expected " + std::to_string(k));
  if (counts.size() != config.blocked.size()) throw Error(ErrorCode::Internal, "config length mismatch");
  for (std::size_t j = 0; j < config.blocked.size(); ++j) counts[j] += config.blocked[j];
  if (!best_ever || fitness > best_ever->fitness) best_ever = Individual{config, fitness, next_age};
  members.push_back({std::move(config), fitness, next_age++});
}

void Population::remove(std::size_t index) {
  const auto& c = members.at(index).config;
  for (std::size_t j = 0; j < c.blocked.size(); ++j) counts[j] -= c.blocked[j];
  members.erase(members.begin() + static_cast<std::ptrdiff_t>(index));
}

void Population::refresh_opt() {
  if (members.empty()) return;
  opt = members.front().fitness;
  for (const auto& m : members) opt = std::max(opt, m.fitness);
}

std::vector<int> Population::recount() const {
  std::vector<int> c(counts.size(), 0);
  for (const auto& m : members)
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += m.config.blocked[j];
  return c;
}

void Population::reevaluate(const FitnessFn& fitness) {
  for (auto& m : members) {
    m.fitness = fitness(m.config);
    if (!best_ever || m.fitness > best_ever->fitness) best_ever = m;
  }
  refresh_opt();
}

DefenseConfig random_config(std::size_t n_bw, std::size_t k, Rng& rng) {
  if (k > n_bw) throw Error(ErrorCode::InvalidArgument, "budget exceeds number of block-worthy edges");
  std::vector<std::size_t> idx(n_bw);
  for (std::size_t i = 0; i < n_bw; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n_bw - i)]);
  DefenseConfig d = DefenseConfig::none(n_bw);
  for (std::size_t i = 0; i < k; ++i) d.blocked[idx[i]] = 1;
  return d;
}

Population init_population(std::size_t mu, std::size_t k, std::size_t n_bw, const FitnessFn& fitness, Rng& rng) {
  if (n_bw < k)
    throw Error(ErrorCode::InvalidArgument, "|BW| = " + std::to_string(n_bw) + " is smaller than the budget " +
                                                std::to_string(k));
  if (mu == 0) throw Error(ErrorCode::InvalidArgument, "population size must be positive");
  Population p;
  p.k = k;
  p.counts.assign(n_bw, 0);
  for (std::size_t i = 0; i < mu; ++i) {
    auto config = random_config(n_bw, k, rng);
    const double f = fitness(config);
    p.add(std::move(config), f);
  }
  p.refresh_opt();
  return p;
}

std::size_t draw_swap_count(Rng& rng, std::size_t available) {
  const auto x = static_cast<std::size_t>(std::poisson_distribution<int>(1.0)(rng));
  if (available == 0) return 0;
  return std::clamp<std::size_t>(x, 1, available);
}

namespace {

/// Picks `x` distinct entries of `pool` uniformly (partial Fisher-Yates).
std::vector<std::size_t> pick(std::vector<std::size_t> pool, std::size_t x, Rng& rng) {
  for (std::size_t i = 0; i < x; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(x);
  return pool;
}

}  // namespace

DefenseConfig mutate_with(const DefenseConfig& parent, std::size_t x, Rng& rng) {
  std::vector<std::size_t> on, off;
  for (std::size_t i = 0; i < parent.blocked.size(); ++i) (parent.blocked[i] ? on : off).push_back(i);
  x = std::min({x, on.size(), off.size()});
  DefenseConfig child = parent;
  if (x == 0) return child;
  for (auto i : pick(on, x, rng)) child.blocked[i] = 0;
  for (auto i : pick(off, x, rng)) child.blocked[i] = 1;
  return child;
}

DefenseConfig mutate(const DefenseConfig& parent, Rng& rng) {
  const std::size_t k = parent.block_count();
  const std::size_t x = draw_swap_count(rng, std::min(k, parent.blocked.size() - k));
  return mutate_with(parent, x, rng);
}

DefenseConfig crossover_with(const DefenseConfig& p1, const DefenseConfig& p2, std::size_t x, Rng& rng) {
  if (p1.blocked.size() != p2.blocked.size()) throw Error(ErrorCode::InvalidArgument, "parents differ in length");
  std::vector<std::size_t> n_b, b_n;  // p1 N & p2 B, p1 B & p2 N
  for (std::size_t i = 0; i < p1.blocked.size(); ++i) {
    if (!p1.blocked[i] && p2.blocked[i]) n_b.push_back(i);
    if (p1.blocked[i] && !p2.blocked[i]) b_n.push_back(i);
  }
  x = std::min({x, n_b.size(), b_n.size()});
  DefenseConfig c1 = p1, c2 = p2;
  if (x > 0) {
    for (auto i : pick(n_b, x, rng)) {
      c1.blocked[i] = 1;
      c2.blocked[i] = 0;
    }
    for (auto i : pick(b_n, x, rng)) {
      c1.blocked[i] = 0;
      c2.blocked[i] = 1;
    }
  }
  return uniform01(rng) < 0.5 ? c1 : c2;
}

DefenseConfig crossover(const DefenseConfig& p1, const DefenseConfig& p2, Rng& rng) {
  std::size_t discordant = 0;
  for (std::size_t i = 0; i < p1.blocked.size(); ++i) discordant += !p1.blocked[i] && p2.blocked[i];
  return crossover_with(p1, p2, draw_swap_count(rng, discordant), rng);
}

std::vector<int> sorted_diver(std::span<const int> counts, const DefenseConfig& ind) {
  std::vector<int> d(counts.begin(), counts.end());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] -= ind.blocked[j];
  std::sort(d.begin(), d.end(), std::greater<>());
  return d;
}

std::size_t select_removal(const Population& p, double opt_before, SurvivorRule rule) {
  if (p.members.size() < 2) throw Error(ErrorCode::InvalidArgument, "survivor selection needs at least two members");
  const auto& offspring = p.members.back();
  auto worse_fitness = [&](std::size_t a, std::size_t b) {
    // true when a should be removed before b on fitness, oldest first on ties
    if (p.members[a].fitness != p.members[b].fitness) return p.members[a].fitness < p.members[b].fitness;
    return p.members[a].age < p.members[b].age;
  };
  const bool by_fitness = rule == SurvivorRule::FitnessOnly || offspring.fitness > opt_before;
  std::size_t victim = 0;
  if (by_fitness) {
    for (std::size_t i = 1; i < p.members.size(); ++i)
      if (worse_fitness(i, victim)) victim = i;
    return victim;
  }
  std::vector<int> best = sorted_diver(p.counts, p.members[0].config);
  for (std::size_t i = 1; i < p.members.size(); ++i) {
    auto d = sorted_diver(p.counts, p.members[i].config);
    if (d < best || (d == best && worse_fitness(i, victim))) {
      best = std::move(d);
      victim = i;
    }
  }
  return victim;
}

void survivor_select(Population& p, double opt_before, SurvivorRule rule) {
  p.remove(select_removal(p, opt_before, rule));
  p.refresh_opt();
}

void ec_survivor_select(Population& p) { survivor_select(p, p.opt, SurvivorRule::FitnessOnly); }

EdoStepResult edo_step(Population& p, const FitnessFn& fitness, Rng& rng, SurvivorRule rule, double window) {
  EdoStepResult r;
  const std::size_t mu = p.members.size();
  r.used_crossover = uniform01(rng) < 0.5;
  const std::size_t first = uniform_index(rng, mu);
  if (r.used_crossover && mu >= 2) {
    std::size_t second = uniform_index(rng, mu - 1);
    if (second >= first) ++second;
    r.offspring = crossover(p.members[first].config, p.members[second].config, rng);
  } else {
    r.offspring = mutate(p.members[first].config, rng);
  }
  r.fitness = fitness(r.offspring);
  const double opt_before = p.opt;
  r.admitted = (r.fitness >= opt_before - window && r.fitness <= opt_before + window) || r.fitness > opt_before;
  if (!r.admitted) return r;
  p.add(r.offspring, r.fitness);
  survivor_select(p, opt_before, rule);
  return r;
}

DefenseConfig greedy_defense(const FitnessFn& fitness, std::size_t n_bw, std::size_t k) {
  if (n_bw < k) throw Error(ErrorCode::InvalidArgument, "budget exceeds number of block-worthy edges");
  DefenseConfig current = DefenseConfig::none(n_bw);
  for (std::size_t round = 0; round < k; ++round) {
    std::optional<std::size_t> pick_edge;
    double best = 0.0;
    for (std::size_t j = 0; j < n_bw; ++j) {
      if (current.blocked[j]) continue;
      DefenseConfig trial = current;
      trial.blocked[j] = 1;
      const double f = fitness(trial);
      if (!pick_edge || f > best) {
        best = f;
        pick_edge = j;
      }
    }
    current.blocked[*pick_edge] = 1;
  }
  return current;
}

void write_population_csv(const Population& p, std::ostream& out) {
  out << "individual,blocked_bw,fitness\n";
  for (std::size_t i = 0; i < p.members.size(); ++i) {
    const auto ids = p.members[i].config.blocked_ids();
    out << i << ',';
    for (std::size_t j = 0; j < ids.size(); ++j) out << (j ? " " : "") << ids[j];
    out << ',' << p.members[i].fitness << '\n';
  }
}

std::optional<DefenderKind> parse_defender_kind(std::string_view text) {
  if (text == "cedo") return DefenderKind::Cedo;
  if (text == "ec") return DefenderKind::Ec;
  if (text == "greedy") return DefenderKind::Greedy;
  if (text == "none") return DefenderKind::None;
  return std::nullopt;
}

std::string_view to_string(DefenderKind kind) {
  switch (kind) {
    case DefenderKind::Cedo: return "cedo";
    case DefenderKind::Ec: return "ec";
    case DefenderKind::Greedy: return "greedy";
    case DefenderKind::None: return "none";
  }
  return "?";
}

namespace {

DefenseConfig best_under(const MlpParams& critic, std::shared_ptr<const AttackModel> model,
                         const std::vector<DefenseConfig>& candidates) {
  auto fitness = critic_fitness(critic, model);
  std::optional<DefenseConfig> best;
  double best_f = 0.0;
  for (const auto& c : candidates) {
    const double f = fitness(c);
    if (!best || f > best_f || (f == best_f && c < *best)) {
      best = c;
      best_f = f;
    }
  }
  if (!best) throw Error(ErrorCode::Internal, "no candidate configs");
  return *best;
}

}  // namespace

Population evolve(const FitnessFn& fitness, std::size_t n_bw, const DefenderOptions& options, SurvivorRule rule,
                  std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xed0));
  auto p = init_population(options.population, options.budget, n_bw, fitness, rng);
  for (std::size_t i = 0; i < options.total_iterations; ++i) edo_step(p, fitness, rng, rule, options.window);
  return p;
}

EvolutionaryDefender::EvolutionaryDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options,
                                           SurvivorRule rule, const MlpParams& initial_critic, std::uint64_t seed)
    : model_(std::move(model)), options_(options), rule_(rule), rng_(mix_seed(seed, 0xed0)) {
  population_ = init_population(options_.population, options_.budget, model_->num_bw(),
                                critic_fitness(initial_critic, model_), rng_);
}

std::size_t EvolutionaryDefender::tranche() const {
  const std::size_t hooks = std::max<std::size_t>(1, options_.expected_hooks);
  return (options_.total_iterations + hooks - 1) / hooks;
}

void EvolutionaryDefender::run(const FitnessFn& fitness, std::size_t steps) {
  for (std::size_t i = 0; i < steps; ++i) {
    auto r = edo_step(population_, fitness, rng_, rule_, options_.window);
    admitted_ += r.admitted;
    ++steps_done_;
  }
}

std::vector<DefenseConfig> EvolutionaryDefender::assign(std::size_t slots) const {
  std::vector<DefenseConfig> out;
  out.reserve(slots);
  for (std::size_t i = 0; i < slots; ++i) out.push_back(population_.members[i % population_.members.size()].config);
  return out;
}

std::vector<DefenseConfig> EvolutionaryDefender::initial_configs(std::size_t slots) { return assign(slots); }

std::vector<DefenseConfig> EvolutionaryDefender::on_hook(const MlpParams& critic, std::size_t slots) {
  auto fitness = critic_fitness(critic, model_);
  population_.reevaluate(fitness);
  const std::size_t remaining =
      options_.total_iterations > steps_done_ ? options_.total_iterations - steps_done_ : 0;
  run(fitness, std::min(tranche(), remaining));
  return assign(slots);
}

DefenseConfig EvolutionaryDefender::best_config(const MlpParams& critic) const {
  std::vector<DefenseConfig> candidates;
  for (const auto& m : population_.members) candidates.push_back(m.config);
  return best_under(critic, model_, candidates);
}

GreedyDefender::GreedyDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options,
                               std::uint64_t seed)
    : model_(std::move(model)), options_(options) {
  if (model_->num_bw() < options_.budget) throw Error(ErrorCode::InvalidArgument, "budget exceeds |BW|");
  Rng rng(mix_seed(seed, 0xed0));
  for (std::size_t i = 0; i < options_.population; ++i)
    initial_.push_back(random_config(model_->num_bw(), options_.budget, rng));
}

std::vector<DefenseConfig> GreedyDefender::initial_configs(std::size_t slots) {
  std::vector<DefenseConfig> out;
  for (std::size_t i = 0; i < slots; ++i) out.push_back(initial_[i % initial_.size()]);
  return out;
}

std::vector<DefenseConfig> GreedyDefender::on_hook(const MlpParams& critic, std::size_t slots) {
  current_ = greedy_defense(critic_fitness(critic, model_), model_->num_bw(), options_.budget);
  return std::vector<DefenseConfig>(slots, *current_);
}

DefenseConfig GreedyDefender::best_config(const MlpParams& critic) const {
  if (current_) return *current_;
  return greedy_defense(critic_fitness(critic, model_), model_->num_bw(), options_.budget);
}

StaticDefender::StaticDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options,
                               std::uint64_t seed)
    : model_(std::move(model)) {
  Rng rng(mix_seed(seed, 0xed0));
  for (std::size_t i = 0; i < options.population; ++i)
    configs_.push_back(random_config(model_->num_bw(), options.budget, rng));
}

std::vector<DefenseConfig> StaticDefender::initial_configs(std::size_t slots) {
  std::vector<DefenseConfig> out;
  for (std::size_t i = 0; i < slots; ++i) out.push_back(configs_[i % configs_.size()]);
  return out;
}

std::vector<DefenseConfig> StaticDefender::on_hook(const MlpParams&, std::size_t slots) {
  return initial_configs(slots);
}

DefenseConfig StaticDefender::best_config(const MlpParams& critic) const { return best_under(critic, model_, configs_); }

std::unique_ptr<Defender> make_defender(DefenderKind kind, std::shared_ptr<const AttackModel> model,
                                        const DefenderOptions& options, const MlpParams& initial_critic,
                                        std::uint64_t seed) {
  switch (kind) {
    case DefenderKind::Cedo:
      return std::make_unique<EvolutionaryDefender>(model, options, SurvivorRule::Diversity, initial_critic, seed);
    case DefenderKind::Ec:
      return std::make_unique<EvolutionaryDefender>(model, options, SurvivorRule::FitnessOnly, initial_critic, seed);
    case DefenderKind::Greedy:
      return std::make_unique<GreedyDefender>(model, options, seed);
    case DefenderKind::None:
      return std::make_unique<StaticDefender>(model, options, seed);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown defender kind");
}

}  // namespace adshield
