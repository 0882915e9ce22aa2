#include "adshield/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace adshield {

void PpoConfig::validate() const {
  if (!(clip > 0.0) || !(gamma > 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "PPO clip/gamma/lambda out of range");
  if (batch_size == 0 || minibatch_size == 0 || update_epochs <= 0 || num_envs == 0 || hook_interval <= 0 ||
      hidden <= 0)
    throw Error(ErrorCode::InvalidArgument, "PPO sizes must be positive");
  if (value_coef < 0.0 || entropy_coef < 0.0 || !(adam.lr > 0.0))
    throw Error(ErrorCode::InvalidArgument, "PPO coefficients must be non-negative");
}

Policy Policy::create(std::size_t num_nsps, int hidden, std::uint64_t seed) {
  if (num_nsps == 0) throw Error(ErrorCode::InvalidArgument, "policy needs at least one NSP");
  Rng rng(mix_seed(seed, 0xac7));
  const int n = static_cast<int>(num_nsps);
  const std::vector<int> actor_sizes{n, hidden, hidden, n};
  const std::vector<int> critic_sizes{n, hidden, hidden, 1};
  Policy p;
  p.actor = MlpParams::random(actor_sizes, rng, std::sqrt(2.0), 0.01);
  p.critic = MlpParams::random(critic_sizes, rng, std::sqrt(2.0), 1.0);
  p.actor_opt = AdamState::for_params(p.actor);
  p.critic_opt = AdamState::for_params(p.critic);
  return p;
}

bool Policy::operator==(const Policy& o) const {
  return actor == o.actor && critic == o.critic && actor_opt.step == o.actor_opt.step &&
         actor_opt.m == o.actor_opt.m && actor_opt.v == o.actor_opt.v && critic_opt.step == o.critic_opt.step &&
         critic_opt.m == o.critic_opt.m && critic_opt.v == o.critic_opt.v;
}

void write_policy(const Policy& p, std::ostream& out) {
  out << "adshield-policy 1\n";
  out << "actor\n";
  write_mlp(p.actor, out);
  out << "critic\n";
  write_mlp(p.critic, out);
  out << "actor-adam " << p.actor_opt.step << '\n';
  write_mlp(p.actor_opt.m, out);
  write_mlp(p.actor_opt.v, out);
  out << "critic-adam " << p.critic_opt.step << '\n';
  write_mlp(p.critic_opt.m, out);
  write_mlp(p.critic_opt.v, out);
}

Policy read_policy(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "adshield-policy" || version != 1)
    throw Error(ErrorCode::Parse, "not an adshield policy checkpoint (version 1)");
  auto expect = [&](const char* want) {
    if (!(in >> tag) || tag != want) throw Error(ErrorCode::Parse, std::string("expected '") + want + "'");
  };
  Policy p;
  expect("actor");
  p.actor = read_mlp(in);
  expect("critic");
  p.critic = read_mlp(in);
  expect("actor-adam");
  in >> p.actor_opt.step;
  p.actor_opt.m = read_mlp(in);
  p.actor_opt.v = read_mlp(in);
  expect("critic-adam");
  in >> p.critic_opt.step;
  p.critic_opt.m = read_mlp(in);
  p.critic_opt.v = read_mlp(in);
  if (p.actor.input_size() != p.critic.input_size() || p.actor.output_size() != p.actor.input_size() ||
      p.critic.output_size() != 1 || p.actor_opt.m.sizes() != p.actor.sizes() ||
      p.critic_opt.m.sizes() != p.critic.sizes())
    throw Error(ErrorCode::Parse, "policy checkpoint shapes are inconsistent");
  return p;
}

void save_policy(const Policy& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_policy(p, out);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

Policy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return read_policy(in);
}

double RolloutBatch::mean_episode_reward() const {
  if (episode_rewards.empty()) return 0.0;
  return std::accumulate(episode_rewards.begin(), episode_rewards.end(), 0.0) /
         static_cast<double>(episode_rewards.size());
}

std::vector<EnvSlot> make_env_slots(std::shared_ptr<const AttackModel> model,
                                    const std::vector<DefenseConfig>& configs, std::uint64_t seed) {
  std::vector<EnvSlot> slots;
  slots.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i)
    slots.push_back({AttackEnv(model, configs[i]), Rng(mix_seed(seed, 1000 + i)), true});
  return slots;
}

RolloutBatch collect_rollouts(std::vector<EnvSlot>& slots, const Policy& policy, const PpoConfig& cfg) {
  RolloutBatch batch;
  if (slots.empty()) return batch;
  const auto& model = slots.front().env.model();
  const auto n = static_cast<Eigen::Index>(model.num_nsps());
  std::vector<Trajectory> open(slots.size());

  std::vector<std::size_t> active;
  Matrix features(n, static_cast<Eigen::Index>(slots.size()));
  while (batch.transitions < cfg.batch_size) {
    active.clear();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto& slot = slots[i];
      if (slot.needs_reset) {
        slot.env.reset();
        slot.needs_reset = false;
        if (slot.env.done()) {
          batch.episode_rewards.push_back(0.0);
          slot.needs_reset = true;
          continue;
        }
      }
      active.push_back(i);
    }
    if (active.empty()) break;

    features.resize(n, static_cast<Eigen::Index>(active.size()));
    for (std::size_t c = 0; c < active.size(); ++c)
      model.encode_into(slots[active[c]].env.state(),
                        std::span<double>(features.col(static_cast<Eigen::Index>(c)).data(), model.num_nsps()));
    const Matrix logits = mlp_predict(policy.actor, features);
    const Matrix values = mlp_predict(policy.critic, features);

    for (std::size_t c = 0; c < active.size(); ++c) {
      auto& slot = slots[active[c]];
      const auto col = static_cast<Eigen::Index>(c);
      Transition t;
      t.features.assign(features.col(col).data(), features.col(col).data() + n);
      t.mask = model.legal_mask(slot.env.state());
      const Vector probs = masked_softmax(logits.col(col), t.mask);
      ActionDistribution dist{probs, t.mask};
      t.action = dist.sample(slot.rng);
      t.log_prob = dist.log_prob(t.action);
      t.value = values(0, col);
      auto out = slot.env.step(t.action, slot.rng);
      t.reward = out.reward;
      t.done = out.done;
      auto& traj = open[active[c]];
      traj.steps.push_back(std::move(t));
      ++batch.transitions;
      if (out.done) {
        batch.episode_rewards.push_back(out.reward);
        slot.needs_reset = true;
        traj.bootstrap = 0.0;
        batch.trajectories.push_back(std::move(traj));
        traj = Trajectory{};
      }
    }
  }

  // Cut segments still running; value their current state for bootstrapping.
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& traj = open[i];
    if (traj.steps.empty()) continue;
    const auto f = model.encode(slots[i].env.state());
    traj.bootstrap = critic_forward(policy.critic, f);
    batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

Advantages compute_gae(std::span<const double> rewards, std::span<const double> values,
                       std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw Error(ErrorCode::InvalidArgument, "GAE input length mismatch");
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
    next_value = values[t];
  }
  return out;
}

Advantages compute_gae(const Trajectory& traj, double gamma, double lambda) {
  std::vector<double> r, v;
  std::vector<std::uint8_t> d;
  for (const auto& s : traj.steps) {
    r.push_back(s.reward);
    v.push_back(s.value);
    d.push_back(s.done);
  }
  return compute_gae(r, v, d, traj.bootstrap, gamma, lambda);
}

void normalize(std::vector<double>& values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) v = (v - mean) / (sd + 1e-8);
}

LossBreakdown ppo_loss(const MlpParams& actor, const MlpParams& critic, const Minibatch& mb, const PpoConfig& cfg,
                       MlpParams* actor_grad, MlpParams* critic_grad) {
  const std::size_t batch = mb.size();
  if (batch == 0) throw Error(ErrorCode::InvalidArgument, "empty minibatch");
  const Eigen::Index n = mb.features.rows();
  const double inv_b = 1.0 / static_cast<double>(batch);

  MlpCache actor_cache = mlp_forward(actor, mb.features);
  MlpCache critic_cache = mlp_forward(critic, mb.features);
  Matrix d_logits = Matrix::Zero(actor_cache.output.rows(), actor_cache.output.cols());
  Matrix d_values = Matrix::Zero(1, static_cast<Eigen::Index>(batch));

  LossBreakdown out;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    std::span<const std::uint8_t> mask(mb.masks.data() + i * static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    const Vector probs = masked_softmax(actor_cache.output.col(col), mask);
    const auto a = static_cast<Eigen::Index>(mb.actions[i]);
    const double logp = std::log(probs[a]);
    const double ratio = std::exp(logp - mb.old_log_probs[col]);
    const double adv = mb.advantages[col];
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double surr1 = ratio * adv;
    const double surr2 = clipped * adv;
    out.policy_loss -= std::min(surr1, surr2) * inv_b;
    if (std::abs(ratio - 1.0) > cfg.clip) out.clip_fraction += inv_b;
    out.approx_kl += (mb.old_log_probs[col] - logp) * inv_b;

    double entropy = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (probs[j] > 0.0) entropy -= probs[j] * std::log(probs[j]);
    out.entropy += entropy * inv_b;

    // d(-surrogate)/dlogp is -ratio*adv on the unclipped branch, zero on the clipped plateau.
    const double d_logp = surr1 <= surr2 ? -ratio * adv * inv_b : 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!mask[static_cast<std::size_t>(j)]) continue;
      const double onehot = j == a ? 1.0 : 0.0;
      double g = d_logp * (onehot - probs[j]);
      if (probs[j] > 0.0) g += cfg.entropy_coef * inv_b * probs[j] * (std::log(probs[j]) + entropy);
      d_logits(j, col) = g;
    }

    const double err = critic_cache.output(0, col) - mb.returns[col];
    out.value_loss += err * err * inv_b;
    d_values(0, col) = cfg.value_coef * 2.0 * err * inv_b;
  }
  out.total = out.policy_loss + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;
  if (!std::isfinite(out.total)) {
    std::ostringstream msg;
    msg << "non-finite PPO loss (policy=" << out.policy_loss << ", value=" << out.value_loss
        << ", entropy=" << out.entropy << ")";
    throw Error(ErrorCode::Numeric, msg.str());
  }
  if (actor_grad) *actor_grad = mlp_backward(actor, actor_cache, d_logits);
  if (critic_grad) *critic_grad = mlp_backward(critic, critic_cache, d_values);
  return out;
}

namespace {

void clip_grad_norm(MlpParams& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(grad.squared_norm());
  if (norm > max_norm) grad.scale(max_norm / (norm + 1e-12));
}

}  // namespace

UpdateDiagnostics ppo_update(Policy& policy, const RolloutBatch& batch, const PpoConfig& cfg, Rng& rng) {
  if (batch.transitions == 0) throw Error(ErrorCode::InvalidArgument, "empty rollout batch");
  const Eigen::Index n = static_cast<Eigen::Index>(policy.num_nsps());

  std::vector<const Transition*> steps;
  std::vector<double> advantages, returns;
  for (const auto& traj : batch.trajectories) {
    auto gae = compute_gae(traj, cfg.gamma, cfg.lambda);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      steps.push_back(&traj.steps[t]);
      advantages.push_back(gae.advantages[t]);
      returns.push_back(gae.returns[t]);
    }
  }
  normalize(advantages);

  const std::size_t total = steps.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  UpdateDiagnostics diag;
  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < total; start += cfg.minibatch_size) {
      const std::size_t end = std::min(total, start + cfg.minibatch_size);
      const std::size_t b = end - start;
      Minibatch mb;
      mb.features.resize(n, static_cast<Eigen::Index>(b));
      mb.masks.resize(static_cast<std::size_t>(n) * b);
      mb.actions.resize(b);
      mb.old_log_probs.resize(static_cast<Eigen::Index>(b));
      mb.advantages.resize(static_cast<Eigen::Index>(b));
      mb.returns.resize(static_cast<Eigen::Index>(b));
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[start + k];
        const auto& t = *steps[idx];
        const auto col = static_cast<Eigen::Index>(k);
        mb.features.col(col) = Eigen::Map<const Vector>(t.features.data(), n);
        std::copy(t.mask.begin(), t.mask.end(), mb.masks.begin() + static_cast<std::ptrdiff_t>(k * t.mask.size()));
        mb.actions[k] = t.action;
        mb.old_log_probs[col] = t.log_prob;
        mb.advantages[col] = advantages[idx];
        mb.returns[col] = returns[idx];
      }
      MlpParams actor_grad, critic_grad;
      auto loss = ppo_loss(policy.actor, policy.critic, mb, cfg, &actor_grad, &critic_grad);
      clip_grad_norm(actor_grad, cfg.max_grad_norm);
      clip_grad_norm(critic_grad, cfg.max_grad_norm);
      adam_step(policy.actor, policy.actor_opt, actor_grad, cfg.adam);
      adam_step(policy.critic, policy.critic_opt, critic_grad, cfg.adam);

      diag.mean.policy_loss += loss.policy_loss;
      diag.mean.value_loss += loss.value_loss;
      diag.mean.entropy += loss.entropy;
      diag.mean.total += loss.total;
      diag.mean.clip_fraction += loss.clip_fraction;
      diag.mean.approx_kl += loss.approx_kl;
      ++diag.minibatches;
    }
  }
  if (diag.minibatches > 0) {
    const double inv = 1.0 / static_cast<double>(diag.minibatches);
    diag.mean.policy_loss *= inv;
    diag.mean.value_loss *= inv;
    diag.mean.entropy *= inv;
    diag.mean.total *= inv;
    diag.mean.clip_fraction *= inv;
    diag.mean.approx_kl *= inv;
  }
  return diag;
}

TrainResult train(std::vector<EnvSlot>& slots, Policy& policy, const PpoConfig& cfg, int epochs,
                  const DefenderHook& hook, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x7a1));
  TrainResult result;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    auto batch = collect_rollouts(slots, policy, cfg);
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_reward = batch.mean_episode_reward();
    stats.episodes = batch.episode_rewards.size();
    stats.transitions = batch.transitions;
    if (batch.transitions > 0) stats.update = ppo_update(policy, batch, cfg, rng);
    result.curve.push_back(stats);
    result.final_mean_reward = stats.mean_reward;

    if (hook && epoch % cfg.hook_interval == 0) {
      std::vector<DefenseConfig> current;
      current.reserve(slots.size());
      for (const auto& s : slots) current.push_back(s.env.config());
      auto next = hook(policy.critic, current);
      if (next.size() != slots.size())
        throw Error(ErrorCode::Internal, "defender hook returned a config per slot mismatch");
      for (std::size_t i = 0; i < slots.size(); ++i) slots[i].env.set_pending_config(std::move(next[i]));
      ++result.hook_calls;
    }
  }
  return result;
}

void write_curve_csv(const std::vector<EpochStats>& curve, std::ostream& out) {
  out << "epoch,mean_reward,episodes,transitions,policy_loss,value_loss,entropy,clip_fraction,approx_kl\n";
  for (const auto& s : curve) {
    out << s.epoch << ',' << s.mean_reward << ',' << s.episodes << ',' << s.transitions << ','
        << s.update.mean.policy_loss << ',' << s.update.mean.value_loss << ',' << s.update.mean.entropy << ','
        << s.update.mean.clip_fraction << ',' << s.update.mean.approx_kl << '\n';
  }
}

EvalResult binomial_interval(std::size_t successes, std::size_t trials) {
  EvalResult r;
  r.episodes = trials;
  if (trials == 0) return r;
  r.mean = static_cast<double>(successes) / static_cast<double>(trials);
  const double half = 1.96 * std::sqrt(r.mean * (1.0 - r.mean) / static_cast<double>(trials));
  r.ci_low = std::max(0.0, r.mean - half);
  r.ci_high = std::min(1.0, r.mean + half);
  return r;
}

EvalResult evaluate_policy(const MlpParams& actor, const AttackModel& model, const DefenseConfig& config,
                           std::size_t episodes, std::uint64_t seed, bool greedy) {
  Rng rng(mix_seed(seed, 0xe7a1));
  const auto start = model.initial_state(config);
  std::size_t wins = 0;
  std::vector<double> features(model.num_nsps());
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    AttackerState s = start;
    while (!model.terminal(s)) {
      model.encode_into(s, features);
      auto dist = actor_forward(actor, features, model.legal_mask(s));
      const std::size_t a = greedy ? dist.argmax() : dist.sample(rng);
      auto out = model.step(s, a, rng);
      if (out.reward > 0.0) ++wins;
      s = std::move(out.next);
    }
  }
  return binomial_interval(wins, episodes);
}

}  // namespace adshield
