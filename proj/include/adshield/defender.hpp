#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "adshield/attack_env.hpp"
#include "adshield/neural.hpp"

namespace adshield {

/// Defender fitness of a config: larger is better for the defender.
using FitnessFn = std::function<double(const DefenseConfig&)>;

/// Maps an attacker-success estimate to defender fitness, -clamp01(success).
inline double fitness_from_success(double success) { return -clamp01(success); }

/// Fitness read off the critic at the config's initial attacker state; exact when that state is terminal.
FitnessFn critic_fitness(const MlpParams& critic, std::shared_ptr<const AttackModel> model);
/// Fitness from the exact optimal attacker value; memoized per config.
FitnessFn oracle_fitness(std::shared_ptr<const AttackModel> model);

struct Individual {
  DefenseConfig config;
  double fitness = 0.0;
  std::uint64_t age = 0;  // insertion order; smaller is older
};

struct Population {
  std::vector<Individual> members;
  std::vector<int> counts;  // per bw edge: number of members blocking it
  double opt = 0.0;         // best fitness among members
  std::size_t k = 0;
  std::uint64_t next_age = 0;

  std::optional<Individual> best_ever;  // max-tracked over every fitness value seen

  void add(DefenseConfig config, double fitness);
  void remove(std::size_t index);
  void refresh_opt();
  std::vector<int> recount() const;
  void reevaluate(const FitnessFn& fitness);
};

enum class SurvivorRule { Diversity, FitnessOnly };

Population init_population(std::size_t mu, std::size_t k, std::size_t n_bw, const FitnessFn& fitness, Rng& rng);

/// Uniform k-subset of n_bw edges.
DefenseConfig random_config(std::size_t n_bw, std::size_t k, Rng& rng);

/// Draws x ~ Poisson(1) and clamps it to [1, min(k, n - k)] (0 when no swap exists).
std::size_t draw_swap_count(Rng& rng, std::size_t available);

/// Swaps `x` blocked and `x` unblocked positions. Returns a copy when no swap is possible.
DefenseConfig mutate_with(const DefenseConfig& parent, std::size_t x, Rng& rng);
DefenseConfig mutate(const DefenseConfig& parent, Rng& rng);

/// Exchanges `x` discordant positions of each kind between the parents and returns one child.
DefenseConfig crossover_with(const DefenseConfig& p1, const DefenseConfig& p2, std::size_t x, Rng& rng);
DefenseConfig crossover(const DefenseConfig& p1, const DefenseConfig& p2, Rng& rng);

/// (counts - blocked indicator of ind), sorted descending.
std::vector<int> sorted_diver(std::span<const int> counts, const DefenseConfig& ind);

/// Index of the member to drop from a population of mu + 1 whose newest member is the offspring.
std::size_t select_removal(const Population& p, double opt_before, SurvivorRule rule);
void survivor_select(Population& p, double opt_before, SurvivorRule rule);
/// EC baseline selection: drop the worst fitness, oldest on ties.
void ec_survivor_select(Population& p);

struct EdoStepResult {
  DefenseConfig offspring;
  double fitness = 0.0;
  bool admitted = false;
  bool used_crossover = false;
};

EdoStepResult edo_step(Population& p, const FitnessFn& fitness, Rng& rng, SurvivorRule rule, double window = 0.1);

struct DefenderOptions {
  std::size_t budget = 5;
  std::size_t population = 20;
  std::size_t total_iterations = 20000;
  std::size_t expected_hooks = 35;  // wake-ups the iteration budget is spread over
  double window = 0.1;
};

/// Standalone EDO run of `options.total_iterations` steps from a random population.
Population evolve(const FitnessFn& fitness, std::size_t n_bw, const DefenderOptions& options, SurvivorRule rule,
                  std::uint64_t seed);

/// Greedy baseline: k rounds, each blocking the edge with the best resulting fitness.
DefenseConfig greedy_defense(const FitnessFn& fitness, std::size_t n_bw, std::size_t k);

void write_population_csv(const Population& p, std::ostream& out);


enum class DefenderKind { Cedo, Ec, Greedy, None };
std::optional<DefenderKind> parse_defender_kind(std::string_view text);
std::string_view to_string(DefenderKind kind);

/// Defender side of the co-evolution loop.
class Defender {
 public:
  virtual ~Defender() = default;
  virtual std::vector<DefenseConfig> initial_configs(std::size_t slots) = 0;
  virtual std::vector<DefenseConfig> on_hook(const MlpParams& critic, std::size_t slots) = 0;
  /// Plan with the lowest estimated attacker success under `critic` among the plans currently trained against.
  virtual DefenseConfig best_config(const MlpParams& critic) const = 0;
};

/// C-EDO (Diversity) or EC (FitnessOnly).
class EvolutionaryDefender : public Defender {
 public:
  EvolutionaryDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options, SurvivorRule rule,
                       const MlpParams& initial_critic, std::uint64_t seed);

  std::vector<DefenseConfig> initial_configs(std::size_t slots) override;
  std::vector<DefenseConfig> on_hook(const MlpParams& critic, std::size_t slots) override;
  DefenseConfig best_config(const MlpParams& critic) const override;

  /// Runs `steps` EDO iterations against an arbitrary fitness.
  void run(const FitnessFn& fitness, std::size_t steps);

  std::size_t tranche() const;
  const Population& population() const { return population_; }
  std::size_t steps_done() const { return steps_done_; }
  std::size_t admitted() const { return admitted_; }

 private:
  std::vector<DefenseConfig> assign(std::size_t slots) const;

  std::shared_ptr<const AttackModel> model_;
  DefenderOptions options_;
  SurvivorRule rule_;
  Rng rng_;
  Population population_;
  std::size_t steps_done_ = 0;
  std::size_t admitted_ = 0;
};

class GreedyDefender : public Defender {
 public:
  GreedyDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options, std::uint64_t seed);
  std::vector<DefenseConfig> initial_configs(std::size_t slots) override;
  std::vector<DefenseConfig> on_hook(const MlpParams& critic, std::size_t slots) override;
  DefenseConfig best_config(const MlpParams& critic) const override;

 private:
  std::shared_ptr<const AttackModel> model_;
  DefenderOptions options_;
  std::vector<DefenseConfig> initial_;
  std::optional<DefenseConfig> current_;
};

/// Keeps the initial random configs forever (plain multi-environment PPO).
class StaticDefender : public Defender {
 public:
  StaticDefender(std::shared_ptr<const AttackModel> model, const DefenderOptions& options, std::uint64_t seed);
  std::vector<DefenseConfig> initial_configs(std::size_t slots) override;
  std::vector<DefenseConfig> on_hook(const MlpParams& critic, std::size_t slots) override;
  DefenseConfig best_config(const MlpParams& critic) const override;

 private:
  std::shared_ptr<const AttackModel> model_;
  std::vector<DefenseConfig> configs_;
};

std::unique_ptr<Defender> make_defender(DefenderKind kind, std::shared_ptr<const AttackModel> model,
                                        const DefenderOptions& options, const MlpParams& initial_critic,
                                        std::uint64_t seed);

}  // namespace adshield
