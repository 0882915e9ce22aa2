#include "adshield/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace adshield {

namespace {

constexpr std::string_view kNodeKinds[] = {"User", "Computer", "Group", "DomainAdmin"};
constexpr std::string_view kEdgeKinds[] = {"HasSession", "MemberOf", "AdminTo"};

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view text, double& out) {
  auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

[[noreturn]] void parse_error(const std::string& source, std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::Parse, source + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

std::string_view to_string(NodeKind kind) { return kNodeKinds[static_cast<int>(kind)]; }
std::string_view to_string(EdgeKind kind) { return kEdgeKinds[static_cast<int>(kind)]; }

std::optional<NodeKind> parse_node_kind(std::string_view text) {
  for (int i = 0; i < 4; ++i)
    if (kNodeKinds[i] == text) return static_cast<NodeKind>(i);
  return std::nullopt;
}

std::optional<EdgeKind> parse_edge_kind(std::string_view text) {
  for (int i = 0; i < 3; ++i)
    if (kEdgeKinds[i] == text) return static_cast<EdgeKind>(i);
  return std::nullopt;
}

std::optional<RateMode> parse_rate_mode(std::string_view text) {
  if (text == "indep") return RateMode::Independent;
  if (text == "pos") return RateMode::Positive;
  if (text == "neg") return RateMode::Negative;
  return std::nullopt;
}

std::string_view to_string(RateMode mode) {
  switch (mode) {
    case RateMode::Independent: return "indep";
    case RateMode::Positive: return "pos";
    case RateMode::Negative: return "neg";
  }
  return "?";
}

double RateDistribution::correlation() const {
  switch (mode) {
    case RateMode::Positive: return 0.5;
    case RateMode::Negative: return -0.5;
    default: return 0.0;
  }
}

RateDistribution RateDistribution::from_mode(RateMode mode) {
  RateDistribution d;
  d.mode = mode;
  return d;
}

std::optional<std::size_t> ADGraph::find(std::string_view id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return i;
  return std::nullopt;
}

std::vector<std::size_t> ADGraph::domain_admins() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind == NodeKind::DomainAdmin) out.push_back(i);
  return out;
}

std::vector<std::vector<std::size_t>> ADGraph::out_edges() const {
  std::vector<std::vector<std::size_t>> out(nodes.size());
  for (std::size_t e = 0; e < edges.size(); ++e) out[edges[e].src].push_back(e);
  return out;
}

std::vector<std::vector<std::size_t>> ADGraph::in_edges() const {
  std::vector<std::vector<std::size_t>> in(nodes.size());
  for (std::size_t e = 0; e < edges.size(); ++e) in[edges[e].dst].push_back(e);
  return in;
}

void ADGraph::validate(bool require_entries) const {
  std::set<std::string_view> ids;
  for (const auto& n : nodes) {
    if (n.id.empty()) throw Error(ErrorCode::Graph, "empty node id");
    if (!ids.insert(n.id).second) throw Error(ErrorCode::Graph, "duplicate node id '" + n.id + "'");
  }
  for (const auto& e : edges) {
    if (e.src >= nodes.size() || e.dst >= nodes.size())
      throw Error(ErrorCode::Graph, "edge endpoint out of range");
    if (e.src == e.dst) throw Error(ErrorCode::Graph, "self-loop on '" + nodes[e.src].id + "'");
    const auto& a = e.attr;
    if (!(a.pd >= 0.0 && a.pf >= 0.0 && a.pd + a.pf <= 1.0 + 1e-12))
      throw Error(ErrorCode::Graph, "edge " + nodes[e.src].id + "->" + nodes[e.dst].id +
                                        " has invalid rates");
  }
  if (require_entries && entries.empty()) throw Error(ErrorCode::Graph, "no entry nodes");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i] >= nodes.size()) throw Error(ErrorCode::Graph, "entry out of range");
    if (i > 0 && entries[i] <= entries[i - 1])
      throw Error(ErrorCode::Graph, "entries not sorted/unique");
    if (nodes[entries[i]].kind == NodeKind::DomainAdmin)
      throw Error(ErrorCode::Graph, "DomainAdmin node '" + nodes[entries[i]].id + "' is an entry");
  }
}

ADGraph parse_graph(std::istream& in, const std::string& source) {
  struct PendingEdge {
    std::string src, dst;
    EdgeAttr attr;
    std::size_t line;
  };
  ADGraph g;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<PendingEdge> pending;
  std::vector<std::pair<std::string, std::size_t>> pending_entries;

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "node") {
      std::string id, kind;
      if (!(ls >> id >> kind)) parse_error(source, line_no, "expected 'node <id> <kind>'");
      auto k = parse_node_kind(kind);
      if (!k) parse_error(source, line_no, "unknown node kind '" + kind + "'");
      if (index.count(id)) parse_error(source, line_no, "duplicate node id '" + id + "'");
      index.emplace(id, g.nodes.size());
      g.nodes.push_back({id, *k});
    } else if (tag == "entry") {
      std::string id;
      if (!(ls >> id)) parse_error(source, line_no, "expected 'entry <id>'");
      pending_entries.emplace_back(id, line_no);
    } else if (tag == "edge") {
      PendingEdge pe;
      pe.line = line_no;
      std::string kind;
      if (!(ls >> pe.src >> pe.dst >> kind))
        parse_error(source, line_no, "expected 'edge <src> <dst> <kind> ...'");
      auto k = parse_edge_kind(kind);
      if (!k) parse_error(source, line_no, "unknown edge kind '" + kind + "'");
      pe.attr.kind = *k;
      std::string field;
      while (ls >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) parse_error(source, line_no, "malformed field '" + field + "'");
        std::string_view key(field.data(), eq);
        std::string_view value(field.data() + eq + 1, field.size() - eq - 1);
        if (key == "pd" || key == "pf") {
          double v;
          if (!parse_double(value, v)) parse_error(source, line_no, "bad number '" + field + "'");
          (key == "pd" ? pe.attr.pd : pe.attr.pf) = v;
        } else if (key == "blockable") {
          if (value != "0" && value != "1") parse_error(source, line_no, "blockable must be 0 or 1");
          pe.attr.blockable = value == "1";
        } else {
          parse_error(source, line_no, "unknown field '" + std::string(key) + "'");
        }
      }
      pending.push_back(std::move(pe));
    } else {
      parse_error(source, line_no, "unknown record '" + tag + "'");
    }
  }

  auto resolve = [&](const std::string& id, std::size_t line) {
    auto it = index.find(id);
    if (it == index.end()) parse_error(source, line, "dangling endpoint: unknown node '" + id + "'");
    return it->second;
  };
  for (const auto& pe : pending) {
    Edge e{resolve(pe.src, pe.line), resolve(pe.dst, pe.line), pe.attr};
    if (e.src == e.dst) parse_error(source, pe.line, "self-loop on '" + pe.src + "'");
    const auto& a = e.attr;
    if (a.pd < 0.0 || a.pf < 0.0 || a.pd + a.pf > 1.0)
      parse_error(source, pe.line, "rates must satisfy pd, pf >= 0 and pd + pf <= 1");
    g.edges.push_back(e);
  }
  for (const auto& [id, line] : pending_entries) g.entries.push_back(resolve(id, line));
  std::sort(g.entries.begin(), g.entries.end());
  g.entries.erase(std::unique(g.entries.begin(), g.entries.end()), g.entries.end());
  for (auto e : g.entries)
    if (g.nodes[e].kind == NodeKind::DomainAdmin)
      throw Error(ErrorCode::Parse, source + ": entry '" + g.nodes[e].id + "' is a DomainAdmin");
  return g;
}

ADGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return parse_graph(in, path);
}

void write_graph(const ADGraph& g, std::ostream& out) {
  for (const auto& n : g.nodes) out << "node " << n.id << ' ' << to_string(n.kind) << '\n';
  for (auto e : g.entries) out << "entry " << g.nodes[e].id << '\n';
  for (const auto& e : g.edges) {
    out << "edge " << g.nodes[e.src].id << ' ' << g.nodes[e.dst].id << ' ' << to_string(e.attr.kind)
        << " pd=" << format_double(e.attr.pd) << " pf=" << format_double(e.attr.pf)
        << " blockable=" << (e.attr.blockable ? 1 : 0) << '\n';
  }
}

void save_graph(const ADGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_graph(g, out);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

ADGraph generate_synthetic(int n_computers, std::uint64_t seed) {
  if (n_computers < 2) throw Error(ErrorCode::InvalidArgument, "n_computers must be >= 2");
  Rng rng(mix_seed(seed, 0x5e7));
  const auto n = static_cast<std::size_t>(n_computers);
  const std::size_t n_groups = n - 1;

  ADGraph g;
  std::vector<std::size_t> users, computers, groups;
  for (std::size_t i = 0; i < n; ++i) {
    users.push_back(g.nodes.size());
    g.nodes.push_back({"U" + std::to_string(i), NodeKind::User});
  }
  for (std::size_t i = 0; i < n; ++i) {
    computers.push_back(g.nodes.size());
    g.nodes.push_back({"C" + std::to_string(i), NodeKind::Computer});
  }
  for (std::size_t i = 0; i < n_groups; ++i) {
    groups.push_back(g.nodes.size());
    g.nodes.push_back({"G" + std::to_string(i), NodeKind::Group});
  }
  const std::size_t da = g.nodes.size();
  g.nodes.push_back({"DA", NodeKind::DomainAdmin});

  std::set<std::tuple<std::size_t, std::size_t>> seen;
  auto add = [&](std::size_t s, std::size_t d, EdgeKind kind) {
    if (s == d || !seen.emplace(s, d).second) return;
    Edge e{s, d, {}};
    e.attr.kind = kind;
    g.edges.push_back(e);
  };
  auto pick = [&](const std::vector<std::size_t>& v) { return v[uniform_index(rng, v.size())]; };
  std::poisson_distribution<int> two(2.0);

  // Guaranteed path C0 -> U0 -> DA.
  add(computers[0], users[0], EdgeKind::HasSession);
  add(users[0], da, EdgeKind::MemberOf);

  for (auto c : computers) {
    int k = std::max(1, two(rng));
    for (int j = 0; j < k; ++j) add(c, pick(users), EdgeKind::HasSession);
  }
  for (auto u : users) {
    int k = std::max(1, two(rng));
    for (int j = 0; j < k; ++j) add(u, pick(groups), EdgeKind::MemberOf);
  }
  for (std::size_t i = 0; i + 1 < groups.size(); ++i) {
    if (uniform01(rng) < 0.5) {
      std::size_t parent = i + 1 + uniform_index(rng, groups.size() - i - 1);
      add(groups[i], groups[parent], EdgeKind::MemberOf);
    }
  }
  for (auto gr : groups) {
    int k = std::max(1, two(rng));
    for (int j = 0; j < k; ++j) add(gr, pick(computers), EdgeKind::AdminTo);
  }
  for (std::size_t i = 0; i < n / 2; ++i) add(pick(users), pick(computers), EdgeKind::AdminTo);

  const std::size_t da_users = std::max<std::size_t>(1, n / 100);
  for (std::size_t i = 0; i < da_users; ++i) add(pick(users), da, EdgeKind::MemberOf);
  const std::size_t da_groups = std::max<std::size_t>(1, n / 200);
  for (std::size_t i = 0; i < da_groups; ++i) add(pick(groups), da, EdgeKind::MemberOf);
  return g;
}

ADGraph generate_desk(const DeskGraphOptions& opt, std::uint64_t seed) {
  if (opt.entries < 1 || opt.splits < 0 || opt.max_chain < 0)
    throw Error(ErrorCode::InvalidArgument, "invalid desk graph options");
  Rng rng(mix_seed(seed, 0xde5c));
  ADGraph g;
  const std::size_t da = 0;
  g.nodes.push_back({"DA", NodeKind::DomainAdmin});
  std::vector<std::size_t> hubs{da};  // rank order: DA first, splits by distance
  for (int i = 0; i < opt.splits; ++i) {
    hubs.push_back(g.nodes.size());
    g.nodes.push_back({"S" + std::to_string(i), NodeKind::Group});
  }
  std::vector<std::size_t> entries;
  for (int i = 0; i < opt.entries; ++i) {
    entries.push_back(g.nodes.size());
    g.nodes.push_back({"E" + std::to_string(i), NodeKind::User});
  }

  struct Chain {
    std::size_t owner;
    std::vector<std::size_t> interior;
  };
  std::vector<Chain> chains;
  std::size_t chain_nodes = 0;
  auto add_edge = [&](std::size_t s, std::size_t d) {
    Edge e{s, d, {}};
    e.attr.kind = static_cast<EdgeKind>(g.edges.size() % 3);
    g.edges.push_back(e);
  };
  auto has_successor = [&](std::size_t s, std::size_t d) {
    return std::any_of(g.edges.begin(), g.edges.end(),
                       [&](const Edge& e) { return e.src == s && e.dst == d; });
  };

  auto add_branch = [&](std::size_t src, std::size_t rank) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      if (!chains.empty() && uniform01(rng) < opt.merge_prob) {
        const auto& c = chains[uniform_index(rng, chains.size())];
        if (c.owner == src) continue;
        std::size_t x = c.interior[uniform_index(rng, c.interior.size())];
        if (has_successor(src, x)) continue;
        add_edge(src, x);
        return;
      }
      std::size_t target;
      if (rank >= 1 && rank < hubs.size() && hubs.size() > 2 && uniform01(rng) < opt.back_prob) {
        std::size_t r = 1 + uniform_index(rng, hubs.size() - 1);
        if (r == rank) continue;
        target = hubs[r];
      } else {
        target = hubs[uniform_index(rng, std::min(rank, hubs.size()))];
      }
      int len = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(opt.max_chain) + 1));
      if (len == 0) {
        if (has_successor(src, target)) continue;
        add_edge(src, target);
        return;
      }
      Chain chain{src, {}};
      std::size_t prev = src;
      for (int i = 0; i < len; ++i) {
        std::size_t node = g.nodes.size();
        g.nodes.push_back({"C" + std::to_string(chain_nodes++), NodeKind::Computer});
        add_edge(prev, node);
        chain.interior.push_back(node);
        prev = node;
      }
      add_edge(prev, target);
      chains.push_back(std::move(chain));
      return;
    }
  };

  for (std::size_t r = 1; r < hubs.size(); ++r) {
    int branches = 2 + (uniform01(rng) < opt.third_branch_prob ? 1 : 0);
    for (int b = 0; b < branches; ++b) add_branch(hubs[r], r);
  }
  for (auto e : entries) {
    int branches = 1 + (uniform01(rng) < 0.5 ? 1 : 0);
    for (int b = 0; b < branches; ++b) add_branch(e, hubs.size());
  }
  g.entries = entries;
  return g;
}

std::pair<double, double> sample_rates(const RateDistribution& dist, Rng& rng) {
  if (dist.mode == RateMode::Independent) {
    std::uniform_real_distribution<double> u(0.0, dist.upper);
    double pd = u(rng);
    double pf = u(rng);
    return {pd, pf};
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho = dist.correlation();
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  double pd = dist.mean_pd + dist.sigma * z1;
  double pf = dist.mean_pf + dist.sigma * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
  pd = std::clamp(pd, 0.0, 0.5);
  pf = std::clamp(pf, 0.0, 0.5);
  if (pd + pf > 1.0) {
    const double s = pd + pf;
    pd /= s;
    pf /= s;
  }
  return {pd, pf};
}

void assign_rates(ADGraph& g, const RateDistribution& dist, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4a7e));
  for (auto& e : g.edges) std::tie(e.attr.pd, e.attr.pf) = sample_rates(dist, rng);
}

std::vector<std::optional<int>> hops_to_da(const ADGraph& g) {
  std::vector<std::optional<int>> dist(g.nodes.size());
  auto in = g.in_edges();
  std::deque<std::size_t> queue;
  for (auto d : g.domain_admins()) {
    dist[d] = 0;
    queue.push_back(d);
  }
  while (!queue.empty()) {
    auto v = queue.front();
    queue.pop_front();
    for (auto e : in[v]) {
      auto u = g.edges[e].src;
      if (!dist[u]) {
        dist[u] = *dist[v] + 1;
        queue.push_back(u);
      }
    }
  }
  return dist;
}

std::vector<double> blockable_probabilities(const ADGraph& g) {
  if (g.domain_admins().empty()) throw Error(ErrorCode::Graph, "graph has no DomainAdmin node");
  auto dist = hops_to_da(g);
  int max_hops = 0;
  for (const auto& e : g.edges)
    if (dist[e.dst]) max_hops = std::max(max_hops, *dist[e.dst]);
  std::vector<double> p(g.edges.size());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& d = dist[g.edges[i].dst];
    if (!d)
      p[i] = 1.0;
    else
      p[i] = max_hops == 0 ? 0.0 : static_cast<double>(*d) / max_hops;
  }
  return p;
}

void assign_blockable(ADGraph& g, std::uint64_t seed) {
  auto p = blockable_probabilities(g);
  Rng rng(mix_seed(seed, 0xb10c));
  for (std::size_t i = 0; i < g.edges.size(); ++i) g.edges[i].attr.blockable = uniform01(rng) < p[i];
}

std::vector<std::size_t> select_entries(const ADGraph& g, std::uint64_t seed, std::size_t pool,
                                        std::size_t count) {
  auto dist = hops_to_da(g);
  std::vector<std::size_t> candidates;
  for (std::size_t v = 0; v < g.nodes.size(); ++v)
    if (dist[v] && *dist[v] > 0 && g.nodes[v].kind != NodeKind::DomainAdmin) candidates.push_back(v);
  if (candidates.empty()) throw Error(ErrorCode::Graph, "no node can reach DomainAdmin");
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return *dist[a] > *dist[b]; });
  if (candidates.size() < pool)
    std::clog << "warning: only " << candidates.size() << " nodes reach DA (wanted " << pool << ")\n";
  candidates.resize(std::min(pool, candidates.size()));

  Rng rng(mix_seed(seed, 0xe27));
  const std::size_t take = std::min(count, candidates.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + uniform_index(rng, candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(take);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

}  // namespace adshield
