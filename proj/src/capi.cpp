#include "adshield/adshield.h"

#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include "adshield/defender.hpp"
#include "adshield/harness.hpp"
#include "adshield/oracle.hpp"
#include "adshield/ppo.hpp"

struct ads_graph {
  adshield::ADGraph g;
};

struct ads_condensed {
  std::shared_ptr<const adshield::CondensedGraph> cg;
  std::shared_ptr<const adshield::AttackModel> model;
};

struct ads_policy {
  adshield::Policy p;
};

namespace {

using namespace adshield;

thread_local std::string last_error;

ads_status fail(ads_status s, std::string msg) {
  last_error = std::move(msg);
  return s;
}

ads_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return ADS_ERR_INVALID_ARGUMENT;
    case ErrorCode::Parse: return ADS_ERR_PARSE;
    case ErrorCode::Io: return ADS_ERR_IO;
    case ErrorCode::Graph: return ADS_ERR_GRAPH;
    case ErrorCode::Limit: return ADS_ERR_LIMIT;
    case ErrorCode::Numeric: return ADS_ERR_NUMERIC;
    case ErrorCode::Internal: return ADS_ERR_INTERNAL;
  }
  return ADS_ERR_INTERNAL;
}

template <typename F>
ads_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return ADS_OK;
  } catch (const Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(ADS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ADS_ERR_INTERNAL, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

ads_condensed* wrap(CondensedGraph cg) {
  auto h = new ads_condensed;
  h->cg = std::make_shared<const CondensedGraph>(std::move(cg));
  h->model = std::make_shared<const AttackModel>(h->cg);
  return h;
}

DefenseConfig plan_of(const ads_condensed* cg, const char* plan) {
  const std::size_t n = cg->model->num_bw();
  if (!plan) return DefenseConfig::none(n);
  auto d = DefenseConfig::from_bitstring(plan);
  if (d.blocked.size() != n)
    throw Error(ErrorCode::InvalidArgument,
                "plan has " + std::to_string(d.blocked.size()) + " entries, graph has " + std::to_string(n) +
                    " block-worthy edges");
  return d;
}

void copy_plan(const DefenseConfig& d, char* out, std::size_t cap) {
  if (!out) return;
  const auto bits = d.bitstring();
  if (cap < bits.size() + 1)
    throw Error(ErrorCode::InvalidArgument, "plan buffer needs " + std::to_string(bits.size() + 1) + " bytes");
  std::memcpy(out, bits.c_str(), bits.size() + 1);
}

}  // namespace

extern "C" {

const char* ads_last_error(void) { return last_error.c_str(); }

const char* ads_status_name(ads_status status) {
  switch (status) {
    case ADS_OK: return "ok";
    case ADS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case ADS_ERR_PARSE: return "parse error";
    case ADS_ERR_IO: return "i/o error";
    case ADS_ERR_GRAPH: return "graph error";
    case ADS_ERR_LIMIT: return "limit exceeded";
    case ADS_ERR_NUMERIC: return "numeric error";
    case ADS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

ads_status ads_graph_generate(int computers, uint64_t seed, ads_graph** out) {
  return guarded([&] {
    require(out, "out is null");
    *out = new ads_graph{generate_synthetic(computers, seed)};
  });
}

ads_status ads_graph_generate_desk(int entries, int splits, uint64_t seed, ads_graph** out) {
  return guarded([&] {
    require(out, "out is null");
    require(entries > 0 && splits >= 0, "entries must be positive and splits non-negative");
    DeskGraphOptions o;
    o.entries = entries;
    o.splits = splits;
    *out = new ads_graph{generate_desk(o, seed)};
  });
}

ads_status ads_graph_load(const char* path, ads_graph** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new ads_graph{load_graph(path)};
  });
}

ads_status ads_graph_save(const ads_graph* g, const char* path) {
  return guarded([&] {
    require(g && path, "null argument");
    save_graph(g->g, path);
  });
}

ads_status ads_graph_assign_rates(ads_graph* g, const char* dist, uint64_t seed) {
  return guarded([&] {
    require(g && dist, "null argument");
    auto mode = parse_rate_mode(dist);
    if (!mode) throw Error(ErrorCode::InvalidArgument, std::string("unknown dist '") + dist + "'");
    assign_rates(g->g, RateDistribution::from_mode(*mode), seed);
  });
}

ads_status ads_graph_assign_blockable(ads_graph* g, uint64_t seed) {
  return guarded([&] {
    require(g, "null graph");
    assign_blockable(g->g, seed);
  });
}

ads_status ads_graph_select_entries(ads_graph* g, uint64_t seed) {
  return guarded([&] {
    require(g, "null graph");
    g->g.entries = select_entries(g->g, seed);
  });
}

ads_status ads_graph_counts(const ads_graph* g, size_t* nodes, size_t* edges, size_t* entries) {
  return guarded([&] {
    require(g, "null graph");
    if (nodes) *nodes = g->g.nodes.size();
    if (edges) *edges = g->g.edges.size();
    if (entries) *entries = g->g.entries.size();
  });
}

void ads_graph_free(ads_graph* g) { delete g; }

ads_status ads_condense(const ads_graph* g, ads_condensed** out) {
  return guarded([&] {
    require(g && out, "null argument");
    *out = wrap(condense(g->g));
  });
}

ads_status ads_condensed_load(const char* path, ads_condensed** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = wrap(load_condensed(path));
  });
}

ads_status ads_condensed_save(const ads_condensed* cg, const char* path) {
  return guarded([&] {
    require(cg && path, "null argument");
    save_condensed(*cg->cg, path);
  });
}

ads_status ads_condensed_counts(const ads_condensed* cg, size_t* nodes, size_t* nsps, size_t* bw_edges) {
  return guarded([&] {
    require(cg, "null condensed graph");
    if (nodes) *nodes = cg->cg->node_count();
    if (nsps) *nsps = cg->cg->nsps.size();
    if (bw_edges) *bw_edges = cg->cg->bw_edges.size();
  });
}

void ads_condensed_free(ads_condensed* cg) { delete cg; }

ads_status ads_oracle_value(const ads_condensed* cg, const char* plan, double* value) {
  return guarded([&] {
    require(cg && value, "null argument");
    *value = exact_value(cg->model, plan_of(cg, plan));
  });
}

ads_status ads_oracle_best_defense(const ads_condensed* cg, size_t k, char* plan_out, size_t plan_cap, double* value) {
  return guarded([&] {
    require(cg, "null condensed graph");
    auto best = exact_best_defense(cg->model, k);
    copy_plan(best.config, plan_out, plan_cap);
    if (value) *value = best.value;
  });
}

void ads_train_options_default(ads_train_options* options) {
  if (!options) return;
  const PpoConfig ppo = ExperimentSpec::default_ppo();
  const DefenderOptions def;
  options->epochs = 100;
  options->envs = ppo.num_envs;
  options->hidden = ppo.hidden;
  options->lr = ppo.adam.lr;
  options->batch_size = ppo.batch_size;
  options->hook_interval = ppo.hook_interval;
  options->defender = "cedo";
  options->budget = def.budget;
  options->population = def.population;
  options->iterations = def.total_iterations;
  options->seed = 0;
}

ads_status ads_train(const ads_condensed* cg, const ads_train_options* options, const char* curve_csv,
                     ads_policy** out, char* best_plan, size_t best_cap) {
  return guarded([&] {
    require(cg && options && out, "null argument");
    require(options->defender, "defender is null");
    auto kind = parse_defender_kind(options->defender);
    if (!kind) throw Error(ErrorCode::InvalidArgument, std::string("unknown defender '") + options->defender + "'");
    if (cg->model->num_bw() < options->budget)
      throw Error(ErrorCode::InvalidArgument, "budget exceeds number of block-worthy edges");
    ExperimentSpec spec;
    spec.epochs = options->epochs;
    spec.budget = options->budget;
    spec.population = options->population;
    spec.iterations = options->iterations;
    spec.ppo.num_envs = options->envs;
    spec.ppo.hidden = options->hidden;
    spec.ppo.adam.lr = options->lr;
    spec.ppo.batch_size = options->batch_size;
    spec.ppo.hook_interval = options->hook_interval;
    require(spec.epochs >= 1, "epochs must be positive");
    spec.ppo.validate();
    auto result = co_train(cg->model, *kind, spec, options->seed);
    if (curve_csv) {
      std::ofstream f(curve_csv);
      if (!f) throw Error(ErrorCode::Io, std::string("cannot write ") + curve_csv);
      write_curve_csv(result.train.curve, f);
    }
    copy_plan(result.best, best_plan, best_cap);
    *out = new ads_policy{std::move(result.policy)};
  });
}

ads_status ads_policy_save(const ads_policy* p, const char* path) {
  return guarded([&] {
    require(p && path, "null argument");
    save_policy(p->p, path);
  });
}

ads_status ads_policy_load(const char* path, ads_policy** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new ads_policy{load_policy(path)};
  });
}

void ads_policy_free(ads_policy* p) { delete p; }

ads_status ads_policy_evaluate(const ads_policy* p, const ads_condensed* cg, const char* plan, size_t episodes,
                               uint64_t seed, int greedy, ads_eval_result* out) {
  return guarded([&] {
    require(p && cg && out, "null argument");
    require(episodes > 0, "episodes must be positive");
    if (p->p.num_nsps() != cg->model->num_nsps())
      throw Error(ErrorCode::InvalidArgument, "policy was trained on a graph with " +
                                                  std::to_string(p->p.num_nsps()) + " NSPs, this one has " +
                                                  std::to_string(cg->model->num_nsps()));
    auto r = evaluate_policy(p->p.actor, *cg->model, plan_of(cg, plan), episodes, seed, greedy != 0);
    *out = {r.mean, r.ci_low, r.ci_high, r.episodes};
  });
}

void ads_defend_options_default(ads_defend_options* options) {
  if (!options) return;
  const DefenderOptions def;
  options->rule = "cedo";
  options->budget = def.budget;
  options->population = def.population;
  options->iterations = def.total_iterations;
  options->seed = 0;
}

ads_status ads_defend(const ads_condensed* cg, const ads_policy* critic, const ads_defend_options* options,
                      const char* population_csv, char* plan_out, size_t plan_cap, double* fitness) {
  return guarded([&] {
    require(cg && options && options->rule, "null argument");
    auto kind = parse_defender_kind(options->rule);
    if (!kind || *kind == DefenderKind::None)
      throw Error(ErrorCode::InvalidArgument, std::string("unknown rule '") + options->rule + "'");
    const std::size_t n_bw = cg->model->num_bw();
    if (options->budget > n_bw) throw Error(ErrorCode::InvalidArgument, "budget exceeds number of block-worthy edges");
    if (critic && critic->p.num_nsps() != cg->model->num_nsps())
      throw Error(ErrorCode::InvalidArgument, "policy does not match the graph");
    FitnessFn fit = critic ? critic_fitness(critic->p.critic, cg->model) : oracle_fitness(cg->model);

    DefenseConfig best;
    if (*kind == DefenderKind::Greedy) {
      best = greedy_defense(fit, n_bw, options->budget);
      if (population_csv) {
        Population p;
        p.k = options->budget;
        p.counts.assign(n_bw, 0);
        p.add(best, fit(best));
        std::ofstream f(population_csv);
        if (!f) throw Error(ErrorCode::Io, std::string("cannot write ") + population_csv);
        write_population_csv(p, f);
      }
    } else {
      DefenderOptions o;
      o.budget = options->budget;
      o.population = options->population;
      o.total_iterations = options->iterations;
      const auto rule = *kind == DefenderKind::Cedo ? SurvivorRule::Diversity : SurvivorRule::FitnessOnly;
      auto p = evolve(fit, n_bw, o, rule, options->seed);
      best = p.best_ever ? p.best_ever->config : p.members.front().config;
      if (population_csv) {
        std::ofstream f(population_csv);
        if (!f) throw Error(ErrorCode::Io, std::string("cannot write ") + population_csv);
        write_population_csv(p, f);
      }
    }
    copy_plan(best, plan_out, plan_cap);
    if (fitness) *fitness = fit(best);
  });
}

ads_status ads_experiment_run(const char* setup, const char* spec_path, const char* output_dir) {
  return guarded([&] {
    require(setup && spec_path, "null argument");
    auto spec = load_spec(spec_path);
    if (output_dir) spec.output_dir = output_dir;
    auto report = run_setup(setup, spec);
    write_report(report, spec.output_dir);
  });
}

}  // extern "C"
