#include "adshield/oracle.hpp"

#include <limits>

namespace adshield {

ExactSolver::ExactSolver(std::shared_ptr<const AttackModel> model, std::size_t nsp_cap) : model_(std::move(model)) {
  if (model_->num_nsps() > nsp_cap)
    throw Error(ErrorCode::Limit, "exact solver cap exceeded: " + std::to_string(model_->num_nsps()) +
                                      " NSPs > " + std::to_string(nsp_cap));
}

double ExactSolver::q_value(const AttackerState& s, std::size_t action) {
  double q = 0.0;
  for (const auto& o : model_->outcome_distribution(s, action)) {
    if (o.reward > 0.0)
      q += o.probability * o.reward;
    else if (!o.done)
      q += o.probability * value(o.next);
  }
  return q;
}

double ExactSolver::value(const AttackerState& s) {
  if (s.detected) return 0.0;
  if (model_->da_controlled(s)) return 1.0;
  const auto key = s.key();
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  double best = 0.0;
  for (auto a : model_->legal_actions(s)) best = std::max(best, q_value(s, a));
  memo_.emplace(key, best);
  return best;
}

std::optional<std::size_t> ExactSolver::best_action(const AttackerState& s) {
  if (model_->terminal(s)) return std::nullopt;
  std::optional<std::size_t> best;
  double best_q = -1.0;
  for (auto a : model_->legal_actions(s)) {
    const double q = q_value(s, a);
    if (q > best_q) {
      best_q = q;
      best = a;
    }
  }
  return best;
}

double exact_value(std::shared_ptr<const AttackModel> model, const DefenseConfig& defense, std::size_t nsp_cap) {
  ExactSolver solver(model, nsp_cap);
  return solver.value(model->initial_state(defense));
}

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t num = n - k + i;
    if (r > std::numeric_limits<std::size_t>::max() / num) return std::numeric_limits<std::size_t>::max();
    r = r * num / i;
  }
  return r;
}

BestDefense exact_best_defense(std::shared_ptr<const AttackModel> model, std::size_t k, std::size_t combination_cap,
                               std::size_t nsp_cap) {
  const std::size_t n = model->num_bw();
  if (k > n) throw Error(ErrorCode::InvalidArgument, "budget exceeds number of block-worthy edges");
  if (binomial(n, k) > combination_cap)
    throw Error(ErrorCode::Limit, "C(" + std::to_string(n) + ", " + std::to_string(k) + ") exceeds the cap of " +
                                      std::to_string(combination_cap));
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  BestDefense best;
  bool have = false;
  while (true) {
    auto config = DefenseConfig::from_ids(n, idx);
    const double v = exact_value(model, config, nsp_cap);
    if (!have || v < best.value) {
      best = {config, v};
      have = true;
    }
    // next combination in lexicographic order
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

EvalResult mc_optimal_play(std::shared_ptr<const AttackModel> model, const DefenseConfig& defense,
                           std::size_t episodes, std::uint64_t seed, std::size_t nsp_cap) {
  ExactSolver solver(model, nsp_cap);
  Rng rng(mix_seed(seed, 0x3c));
  const auto start = model->initial_state(defense);
  std::unordered_map<std::string, std::size_t> policy;
  std::size_t wins = 0;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    AttackerState s = start;
    while (!model->terminal(s)) {
      const auto key = s.key();
      auto it = policy.find(key);
      if (it == policy.end()) it = policy.emplace(key, *solver.best_action(s)).first;
      auto out = model->step(s, it->second, rng);
      if (out.reward > 0.0) ++wins;
      s = std::move(out.next);
    }
  }
  return binomial_interval(wins, episodes);
}

}  // namespace adshield
