#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "adshield/adshield.h"

namespace {

struct Failure {
  int code;
};

void check(ads_status s) {
  if (s == ADS_OK) return;
  std::fprintf(stderr, "error: %s: %s\n", ads_status_name(s), ads_last_error());
  throw Failure{static_cast<int>(s)};
}

std::string plan_buffer(const ads_condensed* cg) {
  size_t bw = 0;
  check(ads_condensed_counts(cg, nullptr, nullptr, &bw));
  return std::string(bw + 1, '\0');
}

std::string read_plan(const std::string& path) {
  if (path.empty()) return {};
  std::FILE* f = std::fopen(path.c_str(), "r");
  if (!f) {
    std::fprintf(stderr, "error: cannot open %s\n", path.c_str());
    throw Failure{ADS_ERR_IO};
  }
  std::string bits;
  char line[4096];
  while (std::fgets(line, sizeof line, f)) {
    std::string s(line);
    if (auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
    for (char c : s)
      if (c == '0' || c == '1') bits.push_back(c);
  }
  std::fclose(f);
  return bits;
}

void write_text(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) {
    std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
    throw Failure{ADS_ERR_IO};
  }
  std::fputs(text.c_str(), f);
  std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attack graph hardening: attacker training, defense search and exact solving"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a raw attack graph with rates and blockable edges");
  int computers = 20;
  std::uint64_t gen_seed = 0;
  std::string dist = "indep";
  std::string gen_out;
  bool desk = false;
  int desk_entries = 2, desk_splits = 3;
  gen->add_option("--computers,-n", computers, "Number of computers (synthetic generator)");
  gen->add_option("--seed,-s", gen_seed, "Random seed");
  gen->add_option("--dist", dist, "Rate distribution")->check(CLI::IsMember({"indep", "pos", "neg"}));
  gen->add_flag("--desk", desk, "Small hub-and-chain graph instead of the synthetic generator");
  gen->add_option("--entries", desk_entries, "Entry nodes of a desk graph");
  gen->add_option("--splits", desk_splits, "Split nodes of a desk graph");
  gen->add_option("-o,--out", gen_out, "Output graph file")->required();

  // condense
  auto* cond = app.add_subcommand("condense", "Prune a raw graph and contract it into NSPs");
  std::string cond_in, cond_out;
  cond->add_option("-i,--in", cond_in, "Raw graph file")->required()->check(CLI::ExistingFile);
  cond->add_option("-o,--out", cond_out, "Condensed graph file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Co-train a PPO attacker against a defender");
  ads_train_options topt;
  ads_train_options_default(&topt);
  std::string tr_graph, tr_out, tr_curve, tr_best, tr_defender = "cedo";
  tr->add_option("-g,--graph", tr_graph, "Condensed graph file")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", topt.epochs, "Training epochs");
  tr->add_option("--envs", topt.envs, "Parallel environments");
  tr->add_option("--hidden", topt.hidden, "Hidden layer width");
  tr->add_option("--lr", topt.lr, "Adam learning rate");
  tr->add_option("--batch", topt.batch_size, "Transitions per epoch");
  tr->add_option("--hook-interval", topt.hook_interval, "Epochs between defender wake-ups");
  tr->add_option("--defender", tr_defender, "Defender policy")->check(CLI::IsMember({"cedo", "ec", "greedy", "none"}));
  tr->add_option("--budget,-k", topt.budget, "Edges the defender may block");
  tr->add_option("--pop", topt.population, "Defender population size");
  tr->add_option("--iters", topt.iterations, "Total defender iterations");
  tr->add_option("--seed,-s", topt.seed, "Random seed");
  tr->add_option("--out", tr_out, "Policy checkpoint")->required();
  tr->add_option("--curve", tr_curve, "Training curve CSV");
  tr->add_option("--best", tr_best, "Write the defender's best plan here");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Monte Carlo success rate of a trained attacker");
  std::string ev_graph, ev_policy, ev_plan;
  size_t ev_episodes = 5000;
  std::uint64_t ev_seed = 0;
  bool ev_greedy = false;
  ev->add_option("-g,--graph", ev_graph, "Condensed graph file")->required()->check(CLI::ExistingFile);
  ev->add_option("-p,--policy", ev_policy, "Policy checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("-d,--defense", ev_plan, "Defense plan file (default: nothing blocked)")->check(CLI::ExistingFile);
  ev->add_option("--episodes", ev_episodes, "Episodes");
  ev->add_option("--seed,-s", ev_seed, "Random seed");
  ev->add_flag("--greedy", ev_greedy, "Take the most likely action instead of sampling");

  // defend
  auto* def = app.add_subcommand("defend", "Search for a defense plan");
  ads_defend_options dopt;
  ads_defend_options_default(&dopt);
  std::string d_graph, d_critic, d_kind = "cedo", d_out, d_pop;
  bool d_oracle = false;
  def->add_option("-g,--graph", d_graph, "Condensed graph file")->required()->check(CLI::ExistingFile);
  def->add_option("--critic", d_critic, "Policy checkpoint whose critic scores plans")->check(CLI::ExistingFile);
  def->add_flag("--oracle", d_oracle, "Score plans with the exact solver");
  def->add_option("--policy", d_kind, "Defender policy")->check(CLI::IsMember({"cedo", "ec", "greedy"}));
  def->add_option("--budget,-k", dopt.budget, "Edges to block");
  def->add_option("--pop", dopt.population, "Population size");
  def->add_option("--iters", dopt.iterations, "Iterations");
  def->add_option("--seed,-s", dopt.seed, "Random seed");
  def->add_option("-o,--out", d_out, "Write the best plan here");
  def->add_option("--population-csv", d_pop, "Write the final population here");

  // oracle
  auto* orc = app.add_subcommand("oracle", "Exact solver for small condensed graphs");
  orc->require_subcommand(1);
  auto* orc_value = orc->add_subcommand("value", "Optimal attacker success under a plan");
  std::string o_graph, o_plan;
  orc_value->add_option("-g,--graph", o_graph, "Condensed graph file")->required()->check(CLI::ExistingFile);
  orc_value->add_option("-d,--defense", o_plan, "Defense plan file (default: nothing blocked)")->check(CLI::ExistingFile);
  auto* orc_best = orc->add_subcommand("best-defense", "Exhaustive best plan");
  size_t o_k = 5;
  std::string o_out;
  orc_best->add_option("-g,--graph", o_graph, "Condensed graph file")->required()->check(CLI::ExistingFile);
  orc_best->add_option("-k,--budget", o_k, "Edges to block");
  orc_best->add_option("-o,--out", o_out, "Write the plan here");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run an experiment setup from a key = value spec");
  std::string e_setup, e_spec, e_out;
  exp->add_option("setup", e_setup, "setup1, setup2 or setup3")
      ->required()
      ->check(CLI::IsMember({"setup1", "setup2", "setup3"}));
  exp->add_option("--spec", e_spec, "Spec file")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", e_out, "Output directory (overrides the spec)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ads_graph* g = nullptr;
      if (desk)
        check(ads_graph_generate_desk(desk_entries, desk_splits, gen_seed, &g));
      else
        check(ads_graph_generate(computers, gen_seed, &g));
      ads_status s = ADS_OK;
      if (!desk && s == ADS_OK) s = ads_graph_select_entries(g, gen_seed);
      if (s == ADS_OK) s = ads_graph_assign_blockable(g, gen_seed);
      if (s == ADS_OK) s = ads_graph_assign_rates(g, dist.c_str(), gen_seed);
      if (s == ADS_OK) s = ads_graph_save(g, gen_out.c_str());
      size_t nodes = 0, edges = 0, entries = 0;
      if (s == ADS_OK) s = ads_graph_counts(g, &nodes, &edges, &entries);
      ads_graph_free(g);
      check(s);
      std::printf("nodes %zu edges %zu entries %zu\n", nodes, edges, entries);
    } else if (*cond) {
      ads_graph* g = nullptr;
      check(ads_graph_load(cond_in.c_str(), &g));
      ads_condensed* cg = nullptr;
      ads_status s = ads_condense(g, &cg);
      ads_graph_free(g);
      check(s);
      size_t nodes = 0, nsps = 0, bw = 0;
      s = ads_condensed_save(cg, cond_out.c_str());
      if (s == ADS_OK) s = ads_condensed_counts(cg, &nodes, &nsps, &bw);
      ads_condensed_free(cg);
      check(s);
      std::printf("nodes %zu nsps %zu bw_edges %zu\n", nodes, nsps, bw);
    } else if (*tr) {
      ads_condensed* cg = nullptr;
      check(ads_condensed_load(tr_graph.c_str(), &cg));
      topt.defender = tr_defender.c_str();
      auto plan = plan_buffer(cg);
      ads_policy* p = nullptr;
      ads_status s = ads_train(cg, &topt, tr_curve.empty() ? nullptr : tr_curve.c_str(), &p, plan.data(), plan.size());
      ads_condensed_free(cg);
      check(s);
      s = ads_policy_save(p, tr_out.c_str());
      ads_policy_free(p);
      check(s);
      plan.resize(plan.size() - 1);
      if (!tr_best.empty()) write_text(tr_best, plan + "\n");
      std::printf("best plan %s\n", plan.c_str());
    } else if (*ev) {
      ads_condensed* cg = nullptr;
      check(ads_condensed_load(ev_graph.c_str(), &cg));
      ads_policy* p = nullptr;
      ads_status s = ads_policy_load(ev_policy.c_str(), &p);
      ads_eval_result r{};
      const auto plan = read_plan(ev_plan);
      if (s == ADS_OK)
        s = ads_policy_evaluate(p, cg, ev_plan.empty() ? nullptr : plan.c_str(), ev_episodes, ev_seed, ev_greedy, &r);
      ads_policy_free(p);
      ads_condensed_free(cg);
      check(s);
      std::printf("success %.6f ci [%.6f, %.6f] episodes %zu\n", r.mean, r.ci_low, r.ci_high, r.episodes);
    } else if (*def) {
      if (d_oracle == !d_critic.empty()) {
        std::fprintf(stderr, "error: pass exactly one of --critic or --oracle\n");
        return ADS_ERR_INVALID_ARGUMENT;
      }
      ads_condensed* cg = nullptr;
      check(ads_condensed_load(d_graph.c_str(), &cg));
      ads_policy* p = nullptr;
      ads_status s = d_critic.empty() ? ADS_OK : ads_policy_load(d_critic.c_str(), &p);
      dopt.rule = d_kind.c_str();
      std::string plan;
      double fitness = 0.0;
      if (s == ADS_OK) {
        plan = plan_buffer(cg);
        s = ads_defend(cg, p, &dopt, d_pop.empty() ? nullptr : d_pop.c_str(), plan.data(), plan.size(), &fitness);
      }
      ads_policy_free(p);
      ads_condensed_free(cg);
      check(s);
      plan.resize(plan.size() - 1);
      if (!d_out.empty()) write_text(d_out, plan + "\n");
      std::printf("plan %s fitness %.6f\n", plan.c_str(), fitness);
    } else if (*orc_value) {
      ads_condensed* cg = nullptr;
      check(ads_condensed_load(o_graph.c_str(), &cg));
      const auto plan = read_plan(o_plan);
      double v = 0.0;
      ads_status s = ads_oracle_value(cg, o_plan.empty() ? nullptr : plan.c_str(), &v);
      ads_condensed_free(cg);
      check(s);
      std::printf("%.12f\n", v);
    } else if (*orc_best) {
      ads_condensed* cg = nullptr;
      check(ads_condensed_load(o_graph.c_str(), &cg));
      auto plan = plan_buffer(cg);
      double v = 0.0;
      ads_status s = ads_oracle_best_defense(cg, o_k, plan.data(), plan.size(), &v);
      ads_condensed_free(cg);
      check(s);
      plan.resize(plan.size() - 1);
      if (!o_out.empty()) write_text(o_out, plan + "\n");
      std::printf("plan %s value %.12f\n", plan.c_str(), v);
    } else if (*exp) {
      check(ads_experiment_run(e_setup.c_str(), e_spec.c_str(), e_out.empty() ? nullptr : e_out.c_str()));
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
