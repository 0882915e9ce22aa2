#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace adshield;

namespace {

// Two entries straight into DA: action 0 succeeds with 0.9, action 1 with 0.1; the rest is detection.
const char* kBandit =
    "node E1 User\nnode E2 User\nnode DA DomainAdmin\nentry E1\nentry E2\n"
    "edge E1 DA AdminTo pd=0.1 pf=0 blockable=1\n"
    "edge E2 DA AdminTo pd=0.9 pf=0 blockable=1\n";

PpoConfig small_config() {
  PpoConfig cfg;
  cfg.hidden = 16;
  cfg.num_envs = 4;
  cfg.batch_size = 200;
  cfg.minibatch_size = 50;
  return cfg;
}

Minibatch one_sample_batch(const MlpParams& actor, double advantage, double ratio) {
  Minibatch mb;
  mb.features = Matrix::Zero(2, 1);
  mb.masks = {1, 1};
  mb.actions = {0};
  const std::uint8_t mask[] = {1, 1};
  const double logp = std::log(masked_softmax(mlp_predict(actor, mb.features).col(0), mask)[0]);
  mb.old_log_probs = Vector::Constant(1, logp - std::log(ratio));
  mb.advantages = Vector::Constant(1, advantage);
  mb.returns = Vector::Zero(1);
  return mb;
}

}  // namespace

TEST_CASE("single NSP without detection yields length-one episodes") {
  auto model = testing::model_from(
      "node E User\nnode DA DomainAdmin\nentry E\nedge E DA AdminTo pd=0 pf=0.4 blockable=0\n");
  PpoConfig cfg = small_config();
  auto slots = make_env_slots(model, {DefenseConfig::none(0)}, 1);
  auto policy = Policy::create(1, 8, 1);
  auto batch = collect_rollouts(slots, policy, cfg);
  CHECK(batch.transitions >= cfg.batch_size);
  std::size_t steps = 0;
  for (const auto& t : batch.trajectories) {
    for (std::size_t i = 0; i < t.steps.size(); ++i) CHECK(t.steps[i].done);
    steps += t.steps.size();
  }
  CHECK(steps == batch.transitions);
  double wins = 0;
  for (double r : batch.episode_rewards) wins += r;
  CHECK(wins / static_cast<double>(batch.episode_rewards.size()) == doctest::Approx(0.6).epsilon(0.15));
}

TEST_CASE("rollouts reach the batch size and are deterministic") {
  auto model = testing::model_of(testing::desk_graph(3));
  PpoConfig cfg;
  auto run = [&] {
    auto slots = make_env_slots(model, {DefenseConfig::none(model->num_bw())}, 9);
    auto policy = Policy::create(model->num_nsps(), 16, 9);
    return collect_rollouts(slots, policy, cfg);
  };
  auto a = run(), b = run();
  CHECK(a.transitions >= 800);
  CHECK(a.transitions < 800 + cfg.num_envs);
  CHECK(a.transitions == b.transitions);
  CHECK(a.episode_rewards == b.episode_rewards);
  REQUIRE(a.trajectories.size() == b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    REQUIRE(a.trajectories[i].steps.size() == b.trajectories[i].steps.size());
    for (std::size_t j = 0; j < a.trajectories[i].steps.size(); ++j)
      CHECK(a.trajectories[i].steps[j].action == b.trajectories[i].steps[j].action);
  }
}

TEST_CASE("fully blocked environment produces no transitions and training survives") {
  auto model = testing::model_from(kBandit);
  PpoConfig cfg = small_config();
  auto all = DefenseConfig::from_bitstring("11");
  auto slots = make_env_slots(model, {all}, 2);
  auto policy = Policy::create(2, 8, 2);
  auto batch = collect_rollouts(slots, policy, cfg);
  CHECK(batch.transitions == 0);
  CHECK(batch.mean_episode_reward() == 0.0);
  auto before = policy;
  auto slots2 = make_env_slots(model, {all}, 2);
  auto res = train(slots2, policy, cfg, 3, nullptr, 2);
  CHECK(res.curve.size() == 3);
  CHECK(policy == before);
}

TEST_CASE("GAE on hand-computed segments") {
  const double r[] = {0, 0, 1};
  const double v[] = {0.5, 0.5, 0.5};
  const std::uint8_t d[] = {0, 0, 1};
  auto a = compute_gae(r, v, d, 0.0, 1.0, 1.0);
  // lambda = 1, gamma = 1: advantage = episode return - value.
  for (int t = 0; t < 3; ++t) {
    CHECK(a.advantages[t] == doctest::Approx(0.5));
    CHECK(a.returns[t] == doctest::Approx(1.0));
  }
  const double r2[] = {0, 0};
  const double v2[] = {0.2, 0.4};
  const std::uint8_t d2[] = {0, 0};
  auto b = compute_gae(r2, v2, d2, 0.8, 1.0, 0.5);
  // delta1 = 0.8 - 0.4 = 0.4; delta0 = 0.4 - 0.2 = 0.2; A0 = 0.2 + 0.5 * 0.4.
  CHECK(b.advantages[1] == doctest::Approx(0.4));
  CHECK(b.advantages[0] == doctest::Approx(0.4));
  CHECK(b.returns[0] == doctest::Approx(0.6));
  // Done in the middle stops bootstrapping.
  const double r3[] = {1, 0};
  const double v3[] = {0.3, 0.6};
  const std::uint8_t d3[] = {1, 0};
  auto c = compute_gae(r3, v3, d3, 1.0, 1.0, 0.95);
  CHECK(c.advantages[0] == doctest::Approx(0.7));
  CHECK(c.advantages[1] == doctest::Approx(0.4));
}

TEST_CASE("GAE matches the explicit discounted sum of TD errors") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + uniform_index(rng, 8);
    std::vector<double> r(len), v(len);
    std::vector<std::uint8_t> d(len, 0);
    for (std::size_t t = 0; t < len; ++t) {
      r[t] = uniform01(rng) < 0.3 ? 1.0 : 0.0;
      v[t] = uniform01(rng);
      d[t] = uniform01(rng) < 0.2;
    }
    const double boot = uniform01(rng), gamma = 0.9 + 0.1 * uniform01(rng), lambda = uniform01(rng);
    auto ours = compute_gae(r, v, d, boot, gamma, lambda);
    for (std::size_t t = 0; t < len; ++t) {
      double sum = 0.0, weight = 1.0;
      for (std::size_t k = t; k < len; ++k) {
        const double next = d[k] ? 0.0 : (k + 1 < len ? v[k + 1] : boot);
        sum += weight * (r[k] + gamma * next - v[k]);
        if (d[k]) break;
        weight *= gamma * lambda;
      }
      REQUIRE(std::abs(ours.advantages[t] - sum) < 1e-12);
      REQUIRE(std::abs(ours.returns[t] - (sum + v[t])) < 1e-12);
    }
  }
}

TEST_CASE("normalize") {
  std::vector<double> x = {1, 2, 3, 4};
  normalize(x);
  double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= 4;
  for (double v : x) var += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::sqrt(var / 4) == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<double> flat = {2, 2, 2};
  normalize(flat);
  for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("zero advantage without entropy gives no actor gradient") {
  Rng rng(1);
  auto actor = MlpParams::random(std::vector<int>{2, 4, 2}, rng, 1.0, 1.0);
  auto critic = MlpParams::random(std::vector<int>{2, 4, 1}, rng, 1.0, 1.0);
  PpoConfig cfg;
  cfg.entropy_coef = 0.0;
  auto mb = one_sample_batch(actor, 0.0, 1.1);
  MlpParams ga, gc;
  ppo_loss(actor, critic, mb, cfg, &ga, &gc);
  CHECK(ga.squared_norm() == 0.0);
}

TEST_CASE("clipped objective is flat beyond the trust region") {
  Rng rng(2);
  auto actor = MlpParams::random(std::vector<int>{2, 4, 2}, rng, 1.0, 1.0);
  auto critic = MlpParams::random(std::vector<int>{2, 4, 1}, rng, 1.0, 1.0);
  PpoConfig cfg;
  cfg.entropy_coef = 0.0;
  MlpParams ga, gc;
  auto up = one_sample_batch(actor, 1.0, 1.5);
  auto l = ppo_loss(actor, critic, up, cfg, &ga, &gc);
  CHECK(ga.squared_norm() == 0.0);
  CHECK(l.clip_fraction == 1.0);
  CHECK(l.policy_loss == doctest::Approx(-1.2));
  auto down = one_sample_batch(actor, -1.0, 0.5);
  l = ppo_loss(actor, critic, down, cfg, &ga, &gc);
  CHECK(ga.squared_norm() == 0.0);
  CHECK(l.policy_loss == doctest::Approx(0.8));
  // Pessimistic side keeps the gradient.
  auto keep = one_sample_batch(actor, -1.0, 1.5);
  ppo_loss(actor, critic, keep, cfg, &ga, &gc);
  CHECK(ga.squared_norm() > 0.0);
}

TEST_CASE("PPO gradients agree with finite differences") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto r = testing::ppo_gradient_check(seed);
    CAPTURE(seed);
    CHECK(r.actor_rel < 1e-4);
    CHECK(r.critic_rel < 1e-4);
    CHECK(r.masked_zero);
  }
}

TEST_CASE("learns the better arm of a two-armed bandit") {
  auto model = testing::model_from(kBandit);
  PpoConfig cfg = small_config();
  cfg.adam.lr = 1e-3;
  auto slots = make_env_slots(model, {DefenseConfig::none(2)}, 5);
  auto policy = Policy::create(2, cfg.hidden, 5);
  auto res = train(slots, policy, cfg, 50, nullptr, 5);
  const std::uint8_t mask[] = {1, 1};
  const double f[] = {0.0, 0.0};
  auto d = actor_forward(policy.actor, f, mask);
  CHECK(d.probs[0] > 0.95);
  for (const auto& e : res.curve) CHECK(e.update.mean.approx_kl < 0.1);
  CHECK(res.final_mean_reward > 0.8);
}

TEST_CASE("defender hook fires every interval") {
  auto model = testing::model_from(kBandit);
  PpoConfig cfg = small_config();
  cfg.batch_size = 20;
  cfg.minibatch_size = 10;
  cfg.update_epochs = 1;
  for (int epochs : {0, 19, 20, 45, 60}) {
    auto slots = make_env_slots(model, {DefenseConfig::none(2)}, 1);
    auto policy = Policy::create(2, 4, 1);
    int seen = 0;
    auto res = train(slots, policy, cfg, epochs,
                     [&](const MlpParams&, const std::vector<DefenseConfig>& cur) {
                       ++seen;
                       return cur;
                     },
                     1);
    CHECK(res.hook_calls == epochs / 20);
    CHECK(seen == epochs / 20);
  }
}

TEST_CASE("hook configs take effect at the next episode") {
  auto model = testing::model_from(kBandit);
  PpoConfig cfg = small_config();
  cfg.hook_interval = 1;
  auto slots = make_env_slots(model, {DefenseConfig::none(2)}, 3);
  auto policy = Policy::create(2, 4, 3);
  train(slots, policy, cfg, 1,
        [](const MlpParams&, const std::vector<DefenseConfig>& cur) {
          return std::vector<DefenseConfig>(cur.size(), DefenseConfig::from_bitstring("11"));
        },
        3);
  auto batch = collect_rollouts(slots, policy, cfg);
  // Running episodes finish first; afterwards every reset is fully blocked.
  CHECK(batch.transitions <= cfg.num_envs);
}

TEST_CASE("evaluation") {
  auto sure = testing::model_from(
      "node E User\nnode DA DomainAdmin\nentry E\nedge E DA AdminTo pd=0 pf=0 blockable=1\n");
  auto p = Policy::create(1, 4, 1);
  auto r = evaluate_policy(p.actor, *sure, DefenseConfig::none(1), 1000, 1);
  CHECK(r.mean == 1.0);
  CHECK(r.ci_low == 1.0);
  CHECK(evaluate_policy(p.actor, *sure, DefenseConfig::from_bitstring("1"), 100, 1).mean == 0.0);

  auto coin = testing::model_from(
      "node E User\nnode DA DomainAdmin\nentry E\nedge E DA AdminTo pd=0.3 pf=0 blockable=1\n");
  const std::size_t n = 20000;
  auto c = evaluate_policy(p.actor, *coin, DefenseConfig::none(1), n, 2);
  const double sigma = std::sqrt(0.7 * 0.3 / n);
  CHECK(std::abs(c.mean - 0.7) < 3 * sigma);
  CHECK(c.ci_low < 0.7);
  CHECK(c.ci_high > 0.7);
  CHECK(c.episodes == n);
  auto again = evaluate_policy(p.actor, *coin, DefenseConfig::none(1), n, 2);
  CHECK(again.mean == c.mean);

  auto bi = binomial_interval(50, 100);
  CHECK(bi.ci_low == doctest::Approx(0.5 - 1.96 * 0.05));
  CHECK(binomial_interval(0, 0).mean == 0.0);
}

TEST_CASE("policy checkpoint round-trip") {
  auto p = Policy::create(5, 8, 11);
  std::stringstream s;
  write_policy(p, s);
  auto back = read_policy(s);
  CHECK(back == p);
  std::istringstream bad("garbage");
  CHECK_THROWS_AS(read_policy(bad), Error);
}

TEST_CASE("policy initialization") {
  auto p = Policy::create(4, 8, 1);
  CHECK(p.actor.layers.size() == 3);
  CHECK(p.actor.layers.back().w.rows() == 4);
  CHECK(p.critic.layers.back().w.rows() == 1);
  for (const auto* net : {&p.actor, &p.critic})
    for (const auto& l : net->layers) CHECK(l.b.squaredNorm() == 0.0);
  CHECK(p.actor.layers.back().w.cwiseAbs().maxCoeff() < 0.1);
  CHECK(p.actor.layers.front().w.cwiseAbs().maxCoeff() > 0.1);
  CHECK(Policy::create(4, 8, 1) == p);
  CHECK_FALSE(Policy::create(4, 8, 2) == p);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto model = testing::model_of(testing::desk_graph(1));
  PpoConfig cfg = small_config();
  auto run = [&] {
    auto slots = make_env_slots(model, {DefenseConfig::none(model->num_bw())}, 4);
    auto policy = Policy::create(model->num_nsps(), cfg.hidden, 4);
    auto res = train(slots, policy, cfg, 3, nullptr, 4);
    return std::make_pair(policy, res.final_mean_reward);
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("config validation") {
  PpoConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.minibatch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = PpoConfig{};
  cfg.hook_interval = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
