#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adshield/condense.hpp"

namespace adshield {

enum class Status : std::uint8_t { Unknown = 0, S = 1, F = 2 };

/// Attacker knowledge base: one status per NSP plus the absorbing detection flag.
struct AttackerState {
  std::vector<Status> statuses;
  bool detected = false;

  bool operator==(const AttackerState&) const = default;
  std::string key() const;  // canonical memo key
};

/// Binary vector over block-worthy edges.
struct DefenseConfig {
  std::vector<std::uint8_t> blocked;

  std::size_t block_count() const;
  std::vector<std::size_t> blocked_ids() const;
  std::string bitstring() const;
  static DefenseConfig from_bitstring(std::string_view bits);
  static DefenseConfig none(std::size_t n_bw) { return {std::vector<std::uint8_t>(n_bw, 0)}; }
  static DefenseConfig from_ids(std::size_t n_bw, std::span<const std::size_t> ids);

  bool operator==(const DefenseConfig&) const = default;
  auto operator<=>(const DefenseConfig&) const = default;
};

DefenseConfig load_defense(const std::string& path);
void save_defense(const DefenseConfig& d, const std::string& path);

enum class Branch : std::uint8_t { Success, Failure, Detection };

struct Outcome {
  Branch branch;
  AttackerState next;
  double probability;
  double reward;
  bool done;
};

struct StepOutcome {
  AttackerState next;
  double reward = 0.0;
  bool done = false;
  Branch branch = Branch::Success;
};

/// Read-only MDP view of a condensed graph. Shared between environments and solvers.
class AttackModel {
 public:
  explicit AttackModel(std::shared_ptr<const CondensedGraph> cg);

  const CondensedGraph& graph() const { return *cg_; }
  std::shared_ptr<const CondensedGraph> graph_ptr() const { return cg_; }
  std::size_t num_nsps() const { return cg_->nsps.size(); }
  std::size_t num_bw() const { return cg_->bw_edges.size(); }

  AttackerState initial_state(const DefenseConfig& d) const;
  std::vector<std::size_t> controlled_nodes(const AttackerState& s) const;
  bool da_controlled(const AttackerState& s) const;
  std::vector<std::size_t> legal_actions(const AttackerState& s) const;
  std::vector<std::uint8_t> legal_mask(const AttackerState& s) const;
  bool terminal(const AttackerState& s) const;

  /// Non-zero-probability branches in the order success, failure, detection.
  std::vector<Outcome> outcome_distribution(const AttackerState& s, std::size_t action) const;

  /// Samples a branch with a uniform draw `u` in [0, 1).
  StepOutcome step(const AttackerState& s, std::size_t action, double u) const;
  StepOutcome step(const AttackerState& s, std::size_t action, Rng& rng) const;

  /// S -> +1, F -> -1, Unknown -> 0.
  std::vector<double> encode(const AttackerState& s) const;
  void encode_into(const AttackerState& s, std::span<double> out) const;

 private:
  void check_action(const AttackerState& s, std::size_t action) const;
  void propagate_success(AttackerState& s) const;

  std::shared_ptr<const CondensedGraph> cg_;
  std::vector<std::vector<std::size_t>> nsps_from_;  // per node
  std::vector<char> is_entry_;
};

/// One environment instance: a model, a defense config and a running episode.
/// A config handed in with set_pending_config takes effect at the next episode start.
class AttackEnv {
 public:
  AttackEnv(std::shared_ptr<const AttackModel> model, DefenseConfig config);

  const AttackModel& model() const { return *model_; }
  const DefenseConfig& config() const { return config_; }
  const AttackerState& state() const { return state_; }
  bool done() const { return done_; }
  std::size_t episode_length() const { return length_; }

  void set_pending_config(DefenseConfig config);
  /// Starts a new episode, adopting the pending config if one was set.
  const AttackerState& reset();
  StepOutcome step(std::size_t action, Rng& rng);

  /// `step <nsp> -> S|F|D` lines for the current episode.
  const std::vector<std::string>& trace() const { return trace_; }

 private:
  std::shared_ptr<const AttackModel> model_;
  DefenseConfig config_;
  std::optional<DefenseConfig> pending_;
  AttackerState state_;
  bool done_ = true;
  std::size_t length_ = 0;
  std::vector<std::string> trace_;
};

}  // namespace adshield
