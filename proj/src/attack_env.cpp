#include "adshield/attack_env.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace adshield {

std::string AttackerState::key() const {
  std::string k(statuses.size() + 1, '\0');
  for (std::size_t i = 0; i < statuses.size(); ++i) k[i] = static_cast<char>('0' + static_cast<int>(statuses[i]));
  k.back() = detected ? 'D' : '-';
  return k;
}

std::size_t DefenseConfig::block_count() const {
  return static_cast<std::size_t>(std::count(blocked.begin(), blocked.end(), 1));
}

std::vector<std::size_t> DefenseConfig::blocked_ids() const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < blocked.size(); ++i)
    if (blocked[i]) ids.push_back(i);
  return ids;
}

std::string DefenseConfig::bitstring() const {
  std::string s;
  s.reserve(blocked.size());
  for (auto b : blocked) s.push_back(b ? '1' : '0');
  return s;
}

DefenseConfig DefenseConfig::from_bitstring(std::string_view bits) {
  DefenseConfig d;
  for (char c : bits) {
    if (c != '0' && c != '1') throw Error(ErrorCode::Parse, "defense bitstring must contain only 0/1");
    d.blocked.push_back(c == '1');
  }
  return d;
}

DefenseConfig DefenseConfig::from_ids(std::size_t n_bw, std::span<const std::size_t> ids) {
  DefenseConfig d = none(n_bw);
  for (auto i : ids) d.blocked.at(i) = 1;
  return d;
}

DefenseConfig load_defense(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::string line, bits;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) bits += tok;
  }
  return DefenseConfig::from_bitstring(bits);
}

void save_defense(const DefenseConfig& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << d.bitstring() << '\n';
}

AttackModel::AttackModel(std::shared_ptr<const CondensedGraph> cg) : cg_(std::move(cg)) {
  if (!cg_) throw Error(ErrorCode::InvalidArgument, "null condensed graph");
  nsps_from_.resize(cg_->graph.nodes.size());
  for (const auto& n : cg_->nsps) nsps_from_[n.src].push_back(n.id);
  is_entry_.assign(cg_->graph.nodes.size(), 0);
  for (auto e : cg_->entries) is_entry_[e] = 1;
}

AttackerState AttackModel::initial_state(const DefenseConfig& d) const {
  if (d.blocked.size() != num_bw())
    throw Error(ErrorCode::InvalidArgument, "defense config length " + std::to_string(d.blocked.size()) +
                                                " does not match |BW| = " + std::to_string(num_bw()));
  AttackerState s;
  s.statuses.assign(num_nsps(), Status::Unknown);
  for (std::size_t b = 0; b < d.blocked.size(); ++b) {
    if (!d.blocked[b]) continue;
    for (auto m : cg_->bw_edges[b].member_nsps) s.statuses[m] = Status::F;
  }
  return s;
}

std::vector<std::size_t> AttackModel::controlled_nodes(const AttackerState& s) const {
  std::vector<std::size_t> nodes(cg_->entries.begin(), cg_->entries.end());
  for (std::size_t i = 0; i < s.statuses.size(); ++i)
    if (s.statuses[i] == Status::S) nodes.push_back(cg_->nsps[i].dst);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

bool AttackModel::da_controlled(const AttackerState& s) const {
  for (std::size_t i = 0; i < s.statuses.size(); ++i)
    if (s.statuses[i] == Status::S && cg_->nsps[i].dst == cg_->da) return true;
  return false;
}

std::vector<std::uint8_t> AttackModel::legal_mask(const AttackerState& s) const {
  std::vector<std::uint8_t> mask(num_nsps(), 0);
  if (s.detected || da_controlled(s)) return mask;
  auto mark_from = [&](std::size_t node) {
    for (auto n : nsps_from_[node])
      if (s.statuses[n] == Status::Unknown) mask[n] = 1;
  };
  for (auto e : cg_->entries) mark_from(e);
  for (std::size_t i = 0; i < s.statuses.size(); ++i)
    if (s.statuses[i] == Status::S) mark_from(cg_->nsps[i].dst);
  return mask;
}

std::vector<std::size_t> AttackModel::legal_actions(const AttackerState& s) const {
  auto mask = legal_mask(s);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

bool AttackModel::terminal(const AttackerState& s) const {
  if (s.detected || da_controlled(s)) return true;
  auto mask = legal_mask(s);
  return std::none_of(mask.begin(), mask.end(), [](auto m) { return m != 0; });
}

void AttackModel::check_action(const AttackerState& s, std::size_t action) const {
  if (s.statuses.size() != num_nsps()) throw Error(ErrorCode::InvalidArgument, "state length mismatch");
  if (action >= num_nsps() || !legal_mask(s)[action])
    throw Error(ErrorCode::InvalidArgument, "illegal action " + std::to_string(action));
}

void AttackModel::propagate_success(AttackerState& s) const {
  std::vector<char> controlled(cg_->graph.nodes.size(), 0);
  for (auto e : cg_->entries) controlled[e] = 1;
  for (std::size_t i = 0; i < s.statuses.size(); ++i)
    if (s.statuses[i] == Status::S) controlled[cg_->nsps[i].dst] = 1;
  for (std::size_t i = 0; i < s.statuses.size(); ++i)
    if (s.statuses[i] == Status::Unknown && controlled[cg_->nsps[i].dst]) s.statuses[i] = Status::S;
}

std::vector<Outcome> AttackModel::outcome_distribution(const AttackerState& s, std::size_t action) const {
  check_action(s, action);
  const auto& nsp = cg_->nsps[action];
  std::vector<Outcome> out;
  if (nsp.probs.ps > 0.0) {
    AttackerState next = s;
    next.statuses[action] = Status::S;
    propagate_success(next);
    const bool reached = nsp.dst == cg_->da;
    out.push_back({Branch::Success, std::move(next), nsp.probs.ps, reached ? 1.0 : 0.0, false});
    out.back().done = terminal(out.back().next);
  }
  if (nsp.probs.pf > 0.0) {
    AttackerState next = s;
    next.statuses[action] = Status::F;
    if (nsp.bw)
      for (auto m : cg_->bw_edges[*nsp.bw].member_nsps)
        if (next.statuses[m] == Status::Unknown) next.statuses[m] = Status::F;
    out.push_back({Branch::Failure, std::move(next), nsp.probs.pf, 0.0, false});
    out.back().done = terminal(out.back().next);
  }
  if (nsp.probs.pd > 0.0) {
    AttackerState next = s;
    next.statuses[action] = Status::F;
    next.detected = true;
    out.push_back({Branch::Detection, std::move(next), nsp.probs.pd, 0.0, true});
  }
  return out;
}

StepOutcome AttackModel::step(const AttackerState& s, std::size_t action, double u) const {
  if (terminal(s)) throw Error(ErrorCode::InvalidArgument, "step on a terminal state");
  auto branches = outcome_distribution(s, action);
  double acc = 0.0;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    acc += branches[i].probability;
    if (u < acc || i + 1 == branches.size()) {
      auto& b = branches[i];
      return {std::move(b.next), b.reward, b.done, b.branch};
    }
  }
  throw Error(ErrorCode::Internal, "empty outcome distribution");
}

StepOutcome AttackModel::step(const AttackerState& s, std::size_t action, Rng& rng) const {
  return step(s, action, uniform01(rng));
}

std::vector<double> AttackModel::encode(const AttackerState& s) const {
  std::vector<double> f(s.statuses.size());
  encode_into(s, f);
  return f;
}

void AttackModel::encode_into(const AttackerState& s, std::span<double> out) const {
  for (std::size_t i = 0; i < s.statuses.size(); ++i) {
    switch (s.statuses[i]) {
      case Status::S: out[i] = 1.0; break;
      case Status::F: out[i] = -1.0; break;
      default: out[i] = 0.0; break;
    }
  }
}

AttackEnv::AttackEnv(std::shared_ptr<const AttackModel> model, DefenseConfig config)
    : model_(std::move(model)), config_(std::move(config)) {
  state_ = model_->initial_state(config_);
}

void AttackEnv::set_pending_config(DefenseConfig config) { pending_ = std::move(config); }

const AttackerState& AttackEnv::reset() {
  if (pending_) {
    config_ = std::move(*pending_);
    pending_.reset();
  }
  state_ = model_->initial_state(config_);
  done_ = model_->terminal(state_);
  length_ = 0;
  trace_.clear();
  return state_;
}

StepOutcome AttackEnv::step(std::size_t action, Rng& rng) {
  if (done_) throw Error(ErrorCode::InvalidArgument, "step on a finished episode");
  auto out = model_->step(state_, action, rng);
  static constexpr const char* kCodes[] = {"S", "F", "D"};
  trace_.push_back("step " + std::to_string(action) + " -> " + kCodes[static_cast<int>(out.branch)]);
  state_ = out.next;
  done_ = out.done;
  ++length_;
  return out;
}

}  // namespace adshield
