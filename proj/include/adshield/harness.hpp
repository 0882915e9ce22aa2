#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adshield/defender.hpp"
#include "adshield/ppo.hpp"

namespace adshield {

/// Flat `key = value` experiment description.
struct ExperimentSpec {
  std::string graph_id = "desk";
  std::string graph_file;           // raw graph; overrides the generator when set
  std::string generator = "desk";   // desk | synthetic
  int computers = 20;               // synthetic size
  std::uint64_t graph_seed = 0;
  DeskGraphOptions desk;
  std::vector<std::string> dists = {"indep"};  // indep | pos | neg | file
  std::vector<DefenderKind> policies = {DefenderKind::Cedo, DefenderKind::Ec, DefenderKind::Greedy};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int epochs = 700;          // co-training
  int retrain_epochs = 150;  // fresh attacker on a fixed config
  std::size_t eval_episodes = 5000;
  std::size_t budget = 2;
  std::size_t population = 20;
  std::size_t iterations = 20000;
  std::size_t configs = 10;  // random configs in setup2
  bool greedy_eval = false;
  bool record_seconds = false;
  std::size_t oracle_cap = 20;
  PpoConfig ppo = default_ppo();
  std::string output_dir = "results";

  static PpoConfig default_ppo();
  void validate() const;
};

ExperimentSpec parse_spec(std::istream& in, const std::string& source = "<stream>");
ExperimentSpec load_spec(const std::string& path);

struct ResultRow {
  std::string graph;
  std::string policy;
  std::string dist;
  std::string seed;  // seed number, or "mean"
  double success = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double seconds = 0.0;
};

struct Report {
  std::string setup;
  std::vector<ResultRow> rows;
  std::string summary;
  std::map<std::string, std::string> files;  // extra outputs by file name
};

/// Graph, rates and blockability for one distribution, condensed and wrapped as an MDP.
std::shared_ptr<const AttackModel> build_model(const ExperimentSpec& spec, const std::string& dist);

struct CoTrainResult {
  Policy policy;
  DefenseConfig best;
  TrainResult train;
};

/// Attacker training with a defender waking up every hook interval.
CoTrainResult co_train(std::shared_ptr<const AttackModel> model, DefenderKind kind, const ExperimentSpec& spec,
                       std::uint64_t seed);

/// Fresh attacker trained against `configs` (spread over the environments).
Policy train_attacker(std::shared_ptr<const AttackModel> model, const std::vector<DefenseConfig>& configs,
                      const ExperimentSpec& spec, int epochs, std::uint64_t seed);

Report run_setup1(const ExperimentSpec& spec);
Report run_setup2(const ExperimentSpec& spec);
Report run_setup3(const ExperimentSpec& spec);
Report run_setup(const std::string& name, const ExperimentSpec& spec);

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out);
/// results.csv, summary.txt and every extra file into `dir` (created if missing).
void write_report(const Report& report, const std::string& dir);

}  // namespace adshield
