#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "adshield/attack_env.hpp"
#include "adshield/neural.hpp"

namespace adshield {

struct PpoConfig {
  double clip = 0.2;
  double gamma = 1.0;
  double lambda = 0.95;
  std::size_t batch_size = 800;      // transitions collected per epoch
  std::size_t minibatch_size = 100;
  int update_epochs = 10;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;        // <= 0 disables clipping
  std::size_t num_envs = 20;
  int hook_interval = 20;            // epochs between defender wake-ups
  int hidden = 128;
  AdamConfig adam{};

  void validate() const;
};

/// Actor and critic networks with their optimizer moments.
struct Policy {
  MlpParams actor;
  MlpParams critic;
  AdamState actor_opt;
  AdamState critic_opt;

  static Policy create(std::size_t num_nsps, int hidden, std::uint64_t seed);
  std::size_t num_nsps() const { return actor.input_size(); }

  bool operator==(const Policy& other) const;
};

void write_policy(const Policy& p, std::ostream& out);
Policy read_policy(std::istream& in);
void save_policy(const Policy& p, const std::string& path);
Policy load_policy(const std::string& path);

struct Transition {
  std::vector<double> features;
  std::vector<std::uint8_t> mask;
  std::size_t action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
};

/// Consecutive transitions from one environment; `bootstrap` values the state after the
/// last step when the segment was cut before its episode ended.
struct Trajectory {
  std::vector<Transition> steps;
  double bootstrap = 0.0;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::size_t transitions = 0;
  std::vector<double> episode_rewards;  // completed episodes, including zero-length ones

  double mean_episode_reward() const;
};

/// An environment together with its private random stream.
struct EnvSlot {
  AttackEnv env;
  Rng rng;
  bool needs_reset = true;
};

std::vector<EnvSlot> make_env_slots(std::shared_ptr<const AttackModel> model,
                                    const std::vector<DefenseConfig>& configs, std::uint64_t seed);

/// Synchronous round-robin stepping until at least cfg.batch_size transitions exist.
RolloutBatch collect_rollouts(std::vector<EnvSlot>& slots, const Policy& policy, const PpoConfig& cfg);

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one segment; `done[t]` stops bootstrapping through step t.
Advantages compute_gae(std::span<const double> rewards, std::span<const double> values,
                       std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda);
Advantages compute_gae(const Trajectory& traj, double gamma, double lambda);

/// Normalizes to mean 0, std 1 (std + 1e-8 in the denominator).
void normalize(std::vector<double>& values);

struct Minibatch {
  Matrix features;  // nsp x B
  std::vector<std::uint8_t> masks;  // nsp * B, column-major like features
  std::vector<std::size_t> actions;
  Vector old_log_probs;
  Vector advantages;
  Vector returns;

  std::size_t size() const { return actions.size(); }
};

struct LossBreakdown {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// total = policy_loss + value_coef * value_loss - entropy_coef * entropy, with exact gradients.
LossBreakdown ppo_loss(const MlpParams& actor, const MlpParams& critic, const Minibatch& mb,
                       const PpoConfig& cfg, MlpParams* actor_grad, MlpParams* critic_grad);

struct UpdateDiagnostics {
  LossBreakdown mean;  // averaged over all minibatches
  std::size_t minibatches = 0;
};

UpdateDiagnostics ppo_update(Policy& policy, const RolloutBatch& batch, const PpoConfig& cfg, Rng& rng);

struct EpochStats {
  int epoch = 0;
  double mean_reward = 0.0;
  std::size_t episodes = 0;
  std::size_t transitions = 0;
  UpdateDiagnostics update;
};

/// Called every cfg.hook_interval epochs with the critic and each slot's current config.
using DefenderHook =
    std::function<std::vector<DefenseConfig>(const MlpParams& critic, const std::vector<DefenseConfig>& current)>;

struct TrainResult {
  std::vector<EpochStats> curve;
  int hook_calls = 0;
  double final_mean_reward = 0.0;
};

TrainResult train(std::vector<EnvSlot>& slots, Policy& policy, const PpoConfig& cfg, int epochs,
                  const DefenderHook& hook, std::uint64_t seed);

void write_curve_csv(const std::vector<EpochStats>& curve, std::ostream& out);

struct EvalResult {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t episodes = 0;
};

/// Normal-approximation 95% interval for a Bernoulli mean, clipped to [0, 1].
EvalResult binomial_interval(std::size_t successes, std::size_t trials);

EvalResult evaluate_policy(const MlpParams& actor, const AttackModel& model, const DefenseConfig& config,
                           std::size_t episodes, std::uint64_t seed, bool greedy = false);

}  // namespace adshield
