#pragma once

#include <memory>
#include <optional>
#include <unordered_map>

#include "adshield/attack_env.hpp"
#include "adshield/ppo.hpp"

namespace adshield {

/// Optimal attacker values by memoized recursion over reachable states.
/// Statuses only move away from Unknown, so the recursion is acyclic.
class ExactSolver {
 public:
  explicit ExactSolver(std::shared_ptr<const AttackModel> model, std::size_t nsp_cap = 20);

  double value(const AttackerState& s);
  /// Lowest-id action among the maximizers; nullopt on terminal states.
  std::optional<std::size_t> best_action(const AttackerState& s);
  double q_value(const AttackerState& s, std::size_t action);

  std::size_t memo_size() const { return memo_.size(); }
  const AttackModel& model() const { return *model_; }

 private:
  std::shared_ptr<const AttackModel> model_;
  std::unordered_map<std::string, double> memo_;
};

double exact_value(std::shared_ptr<const AttackModel> model, const DefenseConfig& defense, std::size_t nsp_cap = 20);

struct BestDefense {
  DefenseConfig config;
  double value = 0.0;
};

/// Exhaustive search over k-subsets in lexicographic order; the first minimizer wins.
BestDefense exact_best_defense(std::shared_ptr<const AttackModel> model, std::size_t k,
                               std::size_t combination_cap = 100000, std::size_t nsp_cap = 20);

/// Plays the solver's argmax policy in the stochastic environment.
EvalResult mc_optimal_play(std::shared_ptr<const AttackModel> model, const DefenseConfig& defense,
                           std::size_t episodes, std::uint64_t seed, std::size_t nsp_cap = 20);

/// n choose k, saturating at SIZE_MAX.
std::size_t binomial(std::size_t n, std::size_t k);

}  // namespace adshield
