#include "adshield/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "adshield/oracle.hpp"

namespace adshield {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Items separated by commas and/or whitespace.
std::vector<std::string> split_list(std::string value) {
  std::replace(value.begin(), value.end(), ',', ' ');
  std::vector<std::string> out;
  std::istringstream in(value);
  for (std::string item; in >> item;) out.push_back(item);
  return out;
}

[[noreturn]] void bad(const std::string& where, const std::string& msg) {
  throw Error(ErrorCode::Parse, where + ": " + msg);
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) bad(where, "not a number: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  bad(where, "not a boolean: '" + text + "'");
}

/// Accepts `0,1,2` and ranges such as `0-4`.
std::vector<std::uint64_t> parse_seeds(const std::string& text, const std::string& where) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_number<std::uint64_t>(item, where));
      continue;
    }
    const auto lo = parse_number<std::uint64_t>(trim(item.substr(0, dash)), where);
    const auto hi = parse_number<std::uint64_t>(trim(item.substr(dash + 1)), where);
    if (hi < lo) bad(where, "empty seed range " + item);
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(double v) { return fmt(100.0 * v, 2) + "%"; }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ResultRow make_row(const ExperimentSpec& spec, std::string graph, std::string policy, std::string dist,
                   std::string seed, const EvalResult& r, double seconds) {
  return {std::move(graph), std::move(policy), std::move(dist), std::move(seed),
          r.mean,           r.ci_low,          r.ci_high,         spec.record_seconds ? seconds : 0.0};
}

ResultRow mean_row(const std::vector<ResultRow>& rows, const std::string& graph, const std::string& policy,
                   const std::string& dist) {
  ResultRow m{graph, policy, dist, "mean", 0.0, 0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.graph != graph || r.policy != policy || r.dist != dist || r.seed == "mean") continue;
    m.success += r.success;
    m.ci_low += r.ci_low;
    m.ci_high += r.ci_high;
    m.seconds += r.seconds;
    ++n;
  }
  if (n > 0) {
    m.success /= static_cast<double>(n);
    m.ci_low /= static_cast<double>(n);
    m.ci_high /= static_cast<double>(n);
  }
  return m;
}

std::string curve_csv(const std::vector<EpochStats>& curve) {
  std::ostringstream out;
  write_curve_csv(curve, out);
  return out.str();
}

std::string spec_line(const std::string& setup, const ExperimentSpec& spec) {
  std::ostringstream out;
  out << setup << "  graph=" << spec.graph_id << "  epochs=" << spec.epochs << "  retrain_epochs=" << spec.retrain_epochs
      << "  episodes=" << spec.eval_episodes << "  budget=" << spec.budget << "  seeds=";
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) out << (i ? "," : "") << spec.seeds[i];
  out << '\n';
  return out.str();
}

/// Rows are keyed by `label`, columns by dist, cells hold mean success over seeds.
std::string dist_table(const std::vector<ResultRow>& rows, const ExperimentSpec& spec,
                       const std::vector<std::string>& labels, const std::string& header) {
  std::ostringstream out;
  out << pad(header, 28);
  for (const auto& d : spec.dists) out << pad(d, 12);
  out << "average\n";
  for (const auto& label : labels) {
    out << pad(label, 28);
    double total = 0.0;
    for (const auto& d : spec.dists) {
      const double v = mean_row(rows, spec.graph_id, label, d).success;
      total += v;
      out << pad(percent(v), 12);
    }
    out << percent(total / static_cast<double>(spec.dists.size())) << '\n';
  }
  return out.str();
}

}  // namespace

PpoConfig ExperimentSpec::default_ppo() {
  PpoConfig cfg;
  cfg.hidden = 64;
  return cfg;
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "seeds must not be empty");
  if (dists.empty()) throw Error(ErrorCode::InvalidArgument, "dists must not be empty");
  if (policies.empty()) throw Error(ErrorCode::InvalidArgument, "policies must not be empty");
  for (const auto& d : dists)
    if (d != "file" && !parse_rate_mode(d)) throw Error(ErrorCode::InvalidArgument, "unknown dist '" + d + "'");
  if (graph_file.empty()) {
    if (generator != "desk" && generator != "synthetic")
      throw Error(ErrorCode::InvalidArgument, "unknown generator '" + generator + "'");
    for (const auto& d : dists)
      if (d == "file") throw Error(ErrorCode::InvalidArgument, "dist 'file' needs graph_file");
  } else if (!std::filesystem::exists(graph_file)) {
    throw Error(ErrorCode::Io, "graph file not found: " + graph_file);
  }
  if (epochs < 1 || retrain_epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be positive");
  if (eval_episodes == 0) throw Error(ErrorCode::InvalidArgument, "eval_episodes must be positive");
  if (population == 0) throw Error(ErrorCode::InvalidArgument, "population must be positive");
  if (configs == 0) throw Error(ErrorCode::InvalidArgument, "configs must be positive");
  ppo.validate();
}

ExperimentSpec parse_spec(std::istream& in, const std::string& source) {
  ExperimentSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) bad(where, "expected key = value");
    const auto key = trim(body.substr(0, eq));
    auto value = trim(body.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);

    if (key == "graph_id") spec.graph_id = value;
    else if (key == "graph_file") spec.graph_file = value;
    else if (key == "generator") spec.generator = value;
    else if (key == "computers") spec.computers = parse_number<int>(value, where);
    else if (key == "graph_seed") spec.graph_seed = parse_number<std::uint64_t>(value, where);
    else if (key == "desk_entries") spec.desk.entries = parse_number<int>(value, where);
    else if (key == "desk_splits") spec.desk.splits = parse_number<int>(value, where);
    else if (key == "desk_max_chain") spec.desk.max_chain = parse_number<int>(value, where);
    else if (key == "desk_merge_prob") spec.desk.merge_prob = parse_number<double>(value, where);
    else if (key == "desk_back_prob") spec.desk.back_prob = parse_number<double>(value, where);
    else if (key == "desk_third_branch_prob") spec.desk.third_branch_prob = parse_number<double>(value, where);
    else if (key == "dists" || key == "dist") spec.dists = split_list(value);
    else if (key == "policies" || key == "policy") {
      spec.policies.clear();
      for (const auto& p : split_list(value)) {
        auto kind = parse_defender_kind(p);
        if (!kind) bad(where, "unknown policy '" + p + "'");
        spec.policies.push_back(*kind);
      }
    }
    else if (key == "seeds") spec.seeds = parse_seeds(value, where);
    else if (key == "epochs") spec.epochs = parse_number<int>(value, where);
    else if (key == "retrain_epochs") spec.retrain_epochs = parse_number<int>(value, where);
    else if (key == "eval_episodes") spec.eval_episodes = parse_number<std::size_t>(value, where);
    else if (key == "budget") spec.budget = parse_number<std::size_t>(value, where);
    else if (key == "population") spec.population = parse_number<std::size_t>(value, where);
    else if (key == "iterations") spec.iterations = parse_number<std::size_t>(value, where);
    else if (key == "configs") spec.configs = parse_number<std::size_t>(value, where);
    else if (key == "greedy_eval") spec.greedy_eval = parse_bool(value, where);
    else if (key == "record_seconds") spec.record_seconds = parse_bool(value, where);
    else if (key == "oracle_cap") spec.oracle_cap = parse_number<std::size_t>(value, where);
    else if (key == "hidden") spec.ppo.hidden = parse_number<int>(value, where);
    else if (key == "envs") spec.ppo.num_envs = parse_number<std::size_t>(value, where);
    else if (key == "batch_size") spec.ppo.batch_size = parse_number<std::size_t>(value, where);
    else if (key == "minibatch_size") spec.ppo.minibatch_size = parse_number<std::size_t>(value, where);
    else if (key == "update_epochs") spec.ppo.update_epochs = parse_number<int>(value, where);
    else if (key == "hook_interval") spec.ppo.hook_interval = parse_number<int>(value, where);
    else if (key == "lr") spec.ppo.adam.lr = parse_number<double>(value, where);
    else if (key == "output_dir") spec.output_dir = value;
    else bad(where, "unknown key '" + key + "'");
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open spec file: " + path);
  return parse_spec(in, path);
}

std::shared_ptr<const AttackModel> build_model(const ExperimentSpec& spec, const std::string& dist) {
  ADGraph g;
  const bool from_file = !spec.graph_file.empty();
  if (from_file) {
    g = load_graph(spec.graph_file);
  } else if (spec.generator == "desk") {
    g = generate_desk(spec.desk, spec.graph_seed);
    assign_blockable(g, spec.graph_seed);
  } else {
    g = generate_synthetic(spec.computers, spec.graph_seed);
    assign_blockable(g, spec.graph_seed);
  }
  if (g.entries.empty()) g.entries = select_entries(g, spec.graph_seed);
  if (dist != "file") {
    auto mode = parse_rate_mode(dist);
    if (!mode) throw Error(ErrorCode::InvalidArgument, "unknown dist '" + dist + "'");
    assign_rates(g, RateDistribution::from_mode(*mode), spec.graph_seed);
  }
  auto cg = std::make_shared<const CondensedGraph>(condense(g));
  if (cg->bw_edges.size() < spec.budget)
    throw Error(ErrorCode::InvalidArgument, "budget " + std::to_string(spec.budget) + " exceeds " +
                                                std::to_string(cg->bw_edges.size()) + " block-worthy edges");
  return std::make_shared<const AttackModel>(cg);
}

CoTrainResult co_train(std::shared_ptr<const AttackModel> model, DefenderKind kind, const ExperimentSpec& spec,
                       std::uint64_t seed) {
  const auto& cfg = spec.ppo;
  Policy policy = Policy::create(model->num_nsps(), cfg.hidden, mix_seed(seed, 1));
  DefenderOptions options;
  options.budget = spec.budget;
  options.population = spec.population;
  options.total_iterations = spec.iterations;
  options.expected_hooks = static_cast<std::size_t>(std::max(1, (spec.epochs - 1) / cfg.hook_interval));
  auto defender = make_defender(kind, model, options, policy.critic, mix_seed(seed, 2));
  auto slots = make_env_slots(model, defender->initial_configs(cfg.num_envs), mix_seed(seed, 3));
  int hooks = 0;
  // Training ends at the last epoch; the defender then chooses instead of evolving.
  DefenderHook hook = [&](const MlpParams& critic, const std::vector<DefenseConfig>& current) {
    if (++hooks * cfg.hook_interval >= spec.epochs) return current;
    return defender->on_hook(critic, current.size());
  };
  auto result = train(slots, policy, cfg, spec.epochs, hook, mix_seed(seed, 4));
  auto best = defender->best_config(policy.critic);
  return {std::move(policy), std::move(best), std::move(result)};
}

Policy train_attacker(std::shared_ptr<const AttackModel> model, const std::vector<DefenseConfig>& configs,
                      const ExperimentSpec& spec, int epochs, std::uint64_t seed) {
  if (configs.empty()) throw Error(ErrorCode::InvalidArgument, "no configs to train against");
  const auto& cfg = spec.ppo;
  Policy policy = Policy::create(model->num_nsps(), cfg.hidden, mix_seed(seed, 5));
  std::vector<DefenseConfig> assigned;
  for (std::size_t i = 0; i < cfg.num_envs; ++i) assigned.push_back(configs[i % configs.size()]);
  auto slots = make_env_slots(model, assigned, mix_seed(seed, 6));
  train(slots, policy, cfg, epochs, nullptr, mix_seed(seed, 7));
  return policy;
}

Report run_setup1(const ExperimentSpec& spec) {
  spec.validate();
  Report report;
  report.setup = "setup1";
  std::vector<std::string> labels;
  for (auto kind : spec.policies) labels.emplace_back(to_string(kind));
  for (std::size_t di = 0; di < spec.dists.size(); ++di) {
    const auto& dist = spec.dists[di];
    auto model = build_model(spec, dist);
    for (auto kind : spec.policies) {
      const std::string policy(to_string(kind));
      for (auto seed : spec.seeds) {
        // Every policy shares the attacker streams of a (dist, seed) pair.
        const auto job = mix_seed(seed, 100 + di);
        const auto t0 = std::chrono::steady_clock::now();
        auto co = co_train(model, kind, spec, job);
        auto attacker = train_attacker(model, {co.best}, spec, spec.retrain_epochs, job);
        auto eval = evaluate_policy(attacker.actor, *model, co.best, spec.eval_episodes, job, spec.greedy_eval);
        const auto tag = policy + "_" + dist + "_" + std::to_string(seed);
        report.rows.push_back(make_row(spec, spec.graph_id, policy, dist, std::to_string(seed), eval, seconds_since(t0)));
        report.files["curve_" + tag + ".csv"] = curve_csv(co.train.curve);
        report.files["best_" + tag + ".txt"] = co.best.bitstring() + "\n";
      }
    }
  }
  report.summary = spec_line("setup1", spec) + "\nAttacker chances of success against the defender's best plan\n" +
                   dist_table(report.rows, spec, labels, "defender");
  return report;
}

Report run_setup2(const ExperimentSpec& spec) {
  spec.validate();
  Report report;
  report.setup = "setup2";
  std::ostringstream summary;
  summary << spec_line("setup2", spec);
  for (std::size_t di = 0; di < spec.dists.size(); ++di) {
    const auto& dist = spec.dists[di];
    auto model = build_model(spec, dist);
    Rng cfg_rng(mix_seed(spec.graph_seed, 200 + di));
    std::vector<DefenseConfig> configs;
    for (std::size_t c = 0; c < spec.configs; ++c) configs.push_back(random_config(model->num_bw(), spec.budget, cfg_rng));

    std::vector<double> optimum(configs.size());
    std::vector<double> trained(configs.size(), 0.0), untrained(configs.size(), 0.0);
    for (std::size_t c = 0; c < configs.size(); ++c) {
      optimum[c] = exact_value(model, configs[c], spec.oracle_cap);
      const auto graph = spec.graph_id + "/c" + std::to_string(c);
      report.rows.push_back({graph, "oracle", dist, "-", optimum[c], optimum[c], optimum[c], 0.0});
    }
    for (auto seed : spec.seeds) {
      const auto job = mix_seed(seed, 300 + di);
      const auto t0 = std::chrono::steady_clock::now();
      auto attacker = train_attacker(model, configs, spec, spec.retrain_epochs, job);
      const double train_secs = seconds_since(t0);
      auto fresh = Policy::create(model->num_nsps(), spec.ppo.hidden, mix_seed(job, 5));
      for (std::size_t c = 0; c < configs.size(); ++c) {
        const auto graph = spec.graph_id + "/c" + std::to_string(c);
        const auto eval_seed = mix_seed(job, 400 + c);
        auto r = evaluate_policy(attacker.actor, *model, configs[c], spec.eval_episodes, eval_seed, spec.greedy_eval);
        auto u = evaluate_policy(fresh.actor, *model, configs[c], spec.eval_episodes, eval_seed, spec.greedy_eval);
        trained[c] += r.mean;
        untrained[c] += u.mean;
        report.rows.push_back(make_row(spec, graph, "ppo", dist, std::to_string(seed), r, train_secs));
        report.rows.push_back(make_row(spec, graph, "untrained", dist, std::to_string(seed), u, 0.0));
      }
    }
    const double n = static_cast<double>(spec.seeds.size());
    summary << "\ndist " << dist << "\n" << pad("config", 12) << pad("plan", 16) << pad("oracle", 12) << pad("ppo", 12)
            << "untrained\n";
    double so = 0.0, st = 0.0, su = 0.0;
    for (std::size_t c = 0; c < configs.size(); ++c) {
      summary << pad("c" + std::to_string(c), 12) << pad(configs[c].bitstring(), 16) << pad(percent(optimum[c]), 12)
              << pad(percent(trained[c] / n), 12) << percent(untrained[c] / n) << '\n';
      so += optimum[c];
      st += trained[c] / n;
      su += untrained[c] / n;
    }
    const double m = static_cast<double>(configs.size());
    summary << pad("average", 28) << pad(percent(so / m), 12) << pad(percent(st / m), 12) << percent(su / m) << '\n';
  }
  report.summary = summary.str();
  return report;
}

Report run_setup3(const ExperimentSpec& spec) {
  spec.validate();
  Report report;
  report.setup = "setup3";
  const std::vector<DefenderKind> kinds = {DefenderKind::Cedo, DefenderKind::Ec};
  std::vector<std::string> labels;
  for (auto kind : kinds) labels.push_back(std::string(to_string(kind)) + "_best");
  for (std::size_t di = 0; di < spec.dists.size(); ++di) {
    const auto& dist = spec.dists[di];
    auto model = build_model(spec, dist);
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
      for (auto seed : spec.seeds) {
        const auto job = mix_seed(seed, 100 + di);
        const auto t0 = std::chrono::steady_clock::now();
        auto co = co_train(model, kinds[ki], spec, job);
        // The judging attacker is fresh and shares its seed across both plans.
        const auto judge = mix_seed(seed, 500 + di);
        auto attacker = train_attacker(model, {co.best}, spec, spec.retrain_epochs, judge);
        auto eval = evaluate_policy(attacker.actor, *model, co.best, spec.eval_episodes, judge, spec.greedy_eval);
        report.rows.push_back(
            make_row(spec, spec.graph_id, labels[ki], dist, std::to_string(seed), eval, seconds_since(t0)));
        report.files["best_" + std::string(to_string(kinds[ki])) + "_" + dist + "_" + std::to_string(seed) + ".txt"] =
            co.best.bitstring() + "\n";
      }
      report.rows.push_back(mean_row(report.rows, spec.graph_id, labels[ki], dist));
    }
  }
  std::ostringstream summary;
  summary << spec_line("setup3", spec) << "\nAttacker chances of success on each defender's best plan\n";
  for (const auto& dist : spec.dists) {
    summary << "\ndist " << dist << "\n" << pad("plan", 28);
    for (auto seed : spec.seeds) summary << pad("seed " + std::to_string(seed), 12);
    summary << "mean\n";
    for (const auto& label : labels) {
      summary << pad(label, 28);
      for (const auto& r : report.rows)
        if (r.dist == dist && r.policy == label && r.seed != "mean") summary << pad(percent(r.success), 12);
      summary << percent(mean_row(report.rows, spec.graph_id, label, dist).success) << '\n';
    }
  }
  report.summary = summary.str();
  return report;
}

Report run_setup(const std::string& name, const ExperimentSpec& spec) {
  if (name == "setup1") return run_setup1(spec);
  if (name == "setup2") return run_setup2(spec);
  if (name == "setup3") return run_setup3(spec);
  throw Error(ErrorCode::InvalidArgument, "unknown setup '" + name + "' (expected setup1, setup2 or setup3)");
}

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  out << "graph,policy,dist,seed,success,ci_low,ci_high,seconds\n";
  for (const auto& r : rows)
    out << r.graph << ',' << r.policy << ',' << r.dist << ',' << r.seed << ',' << fmt(r.success) << ','
        << fmt(r.ci_low) << ',' << fmt(r.ci_high) << ',' << fmt(r.seconds, 3) << '\n';
}

void write_report(const Report& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + dir + ": " + ec.message());
  auto write = [&](const std::string& name, const std::string& content) {
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    out << content;
  };
  std::ostringstream csv;
  write_results_csv(report.rows, csv);
  write("results.csv", csv.str());
  write("summary.txt", report.summary);
  for (const auto& [name, content] : report.files) write(name, content);
}

}  // namespace adshield
