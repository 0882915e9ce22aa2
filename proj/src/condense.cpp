#include "adshield/condense.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace adshield {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool contains(std::span<const std::size_t> sorted, std::size_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

}  // namespace

ADGraph prune(const ADGraph& g) {
  g.validate();
  const auto das = g.domain_admins();
  if (das.empty()) throw Error(ErrorCode::Graph, "graph has no DomainAdmin node");
  const std::size_t da = das.front();
  auto remap = [&](std::size_t v) {
    return g.nodes[v].kind == NodeKind::DomainAdmin ? da : v;
  };

  std::vector<char> is_entry(g.nodes.size(), 0);
  for (auto e : g.entries) is_entry[e] = 1;

  // Merge DAs, drop DA out-edges, entry in-edges and self loops; collapse parallel edges.
  std::vector<char> keep_edge(g.edges.size(), 0);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> best;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const std::size_t s = remap(g.edges[i].src), d = remap(g.edges[i].dst);
    if (s == da || s == d || is_entry[d]) continue;
    auto [it, inserted] = best.try_emplace({s, d}, i);
    if (!inserted && g.edges[i].attr.ps() > g.edges[it->second].attr.ps()) it->second = i;
  }
  for (const auto& [key, idx] : best) keep_edge[idx] = 1;

  std::vector<char> alive(g.nodes.size(), 1);
  for (auto d : das)
    if (d != da) alive[d] = 0;

  auto edge_alive = [&](std::size_t i) {
    return keep_edge[i] && alive[remap(g.edges[i].src)] && alive[remap(g.edges[i].dst)];
  };

  for (bool changed = true; changed;) {
    changed = false;
    std::vector<int> indeg(g.nodes.size(), 0);
    for (std::size_t i = 0; i < g.edges.size(); ++i)
      if (edge_alive(i)) ++indeg[remap(g.edges[i].dst)];
    for (std::size_t v = 0; v < g.nodes.size(); ++v) {
      if (alive[v] && v != da && !is_entry[v] && indeg[v] == 0) {
        alive[v] = 0;
        changed = true;
      }
    }
    std::vector<std::vector<std::size_t>> preds(g.nodes.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i)
      if (edge_alive(i)) preds[remap(g.edges[i].dst)].push_back(remap(g.edges[i].src));
    std::vector<char> reaches(g.nodes.size(), 0);
    std::deque<std::size_t> queue{da};
    reaches[da] = 1;
    while (!queue.empty()) {
      auto v = queue.front();
      queue.pop_front();
      for (auto u : preds[v])
        if (!reaches[u]) {
          reaches[u] = 1;
          queue.push_back(u);
        }
    }
    for (std::size_t v = 0; v < g.nodes.size(); ++v) {
      if (alive[v] && !reaches[v]) {
        alive[v] = 0;
        changed = true;
      }
    }
  }

  ADGraph out;
  std::vector<std::size_t> index(g.nodes.size(), SIZE_MAX);
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    if (!alive[v]) continue;
    index[v] = out.nodes.size();
    out.nodes.push_back(g.nodes[v]);
  }
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    if (!edge_alive(i)) continue;
    Edge e = g.edges[i];
    e.src = index[remap(e.src)];
    e.dst = index[remap(e.dst)];
    out.edges.push_back(e);
  }
  for (auto e : g.entries)
    if (alive[e]) out.entries.push_back(index[e]);
  if (out.entries.empty())
    throw Error(ErrorCode::Graph, "no entry node can reach DomainAdmin after pruning");
  return out;
}

SplitEntry find_split_entry(const ADGraph& g) {
  SplitEntry se;
  se.entry = g.entries;
  auto out = g.out_edges();
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    if (out[v].size() >= 2 && g.nodes[v].kind != NodeKind::DomainAdmin &&
        !std::binary_search(g.entries.begin(), g.entries.end(), v))
      se.split.push_back(v);
  }
  return se;
}

std::vector<Nsp> compute_nsps(const ADGraph& g, std::span<const std::size_t> split,
                              std::span<const std::size_t> entry) {
  std::vector<std::size_t> sources(split.begin(), split.end());
  sources.insert(sources.end(), entry.begin(), entry.end());
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  std::vector<std::size_t> split_sorted(split.begin(), split.end());
  std::sort(split_sorted.begin(), split_sorted.end());

  auto out = g.out_edges();
  auto is_da = [&](std::size_t v) { return g.nodes[v].kind == NodeKind::DomainAdmin; };

  std::vector<Nsp> nsps;
  for (auto src : sources) {
    for (auto first : out[src]) {
      Nsp nsp;
      nsp.id = nsps.size();
      nsp.src = src;
      nsp.edge_seq.push_back(first);
      std::vector<std::size_t> path{src};
      std::size_t cur = g.edges[first].dst;
      while (!is_da(cur) && !contains(split_sorted, cur)) {
        if (auto pos = std::find(path.begin(), path.end(), cur); pos != path.end()) {
          std::string cycle;
          for (auto it = pos; it != path.end(); ++it) cycle += g.nodes[*it].id + " -> ";
          throw Error(ErrorCode::Graph, "cycle of non-splitting nodes: " + cycle + g.nodes[cur].id);
        }
        if (out[cur].size() != 1)
          throw Error(ErrorCode::Graph,
                      "path from '" + g.nodes[src].id + "' ends at non-DA sink '" + g.nodes[cur].id + "'");
        path.push_back(cur);
        const auto next = out[cur].front();
        nsp.edge_seq.push_back(next);
        cur = g.edges[next].dst;
      }
      nsp.dst = cur;
      nsps.push_back(std::move(nsp));
    }
  }
  return nsps;
}

std::vector<BwEdge> compute_bw(const ADGraph& g, std::vector<Nsp>& nsps) {
  std::vector<BwEdge> bws;
  std::map<std::size_t, std::size_t> by_edge;
  for (auto& nsp : nsps) {
    nsp.bw.reset();
    auto last = std::find_if(nsp.edge_seq.rbegin(), nsp.edge_seq.rend(),
                             [&](std::size_t e) { return g.edges[e].attr.blockable; });
    if (last == nsp.edge_seq.rend()) continue;
    auto [it, inserted] = by_edge.try_emplace(*last, bws.size());
    if (inserted) bws.push_back({bws.size(), *last, {}});
    bws[it->second].member_nsps.push_back(nsp.id);
    nsp.bw = it->second;
  }
  return bws;
}

PathProbs aggregate_probs(std::span<const PathProbs> edges) {
  PathProbs out{1.0, 0.0, 0.0};
  double reach = 1.0;
  for (const auto& e : edges) {
    out.pd += reach * e.pd;
    reach *= e.ps;
  }
  out.ps = reach;
  out.pf = 1.0 - out.ps - out.pd;
  return out;
}

PathProbs aggregate_probs(const ADGraph& g, const Nsp& nsp) {
  std::vector<PathProbs> edges;
  edges.reserve(nsp.edge_seq.size());
  for (auto e : nsp.edge_seq) {
    const auto& a = g.edges[e].attr;
    edges.push_back({a.ps(), a.pf, a.pd});
  }
  return aggregate_probs(edges);
}

CondensedGraph condense(const ADGraph& g) {
  CondensedGraph cg;
  cg.graph = prune(g);
  auto se = find_split_entry(cg.graph);
  cg.entries = se.entry;
  cg.split = se.split;
  cg.da = cg.graph.domain_admins().front();
  cg.nsps = compute_nsps(cg.graph, cg.split, cg.entries);
  cg.bw_edges = compute_bw(cg.graph, cg.nsps);
  for (auto& nsp : cg.nsps) nsp.probs = aggregate_probs(cg.graph, nsp);
  cg.validate();
  return cg;
}

std::size_t CondensedGraph::node_count() const {
  std::set<std::size_t> nodes(entries.begin(), entries.end());
  nodes.insert(split.begin(), split.end());
  nodes.insert(da);
  for (const auto& n : nsps) {
    nodes.insert(n.src);
    nodes.insert(n.dst);
  }
  return nodes.size();
}

void CondensedGraph::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::Graph, msg); };
  if (entries.empty()) fail("condensed graph has no entries");
  if (da >= graph.nodes.size() || graph.nodes[da].kind != NodeKind::DomainAdmin)
    fail("condensed graph DA index invalid");
  if (node_count() != entries.size() + split.size() + 1)
    fail("condensed node count differs from |Entry| + |Split| + 1");
  auto out = graph.out_edges();
  for (std::size_t i = 0; i < nsps.size(); ++i) {
    const auto& n = nsps[i];
    if (n.id != i) fail("NSP ids not dense");
    if (n.edge_seq.empty()) fail("empty NSP");
    if (!contains(entries, n.src) && !contains(split, n.src)) fail("NSP source not in Entry or Split");
    if (n.dst != da && !contains(split, n.dst)) fail("NSP destination not in Split or DA");
    for (std::size_t k = 0; k < n.edge_seq.size(); ++k) {
      const auto& e = graph.edges.at(n.edge_seq[k]);
      if (k == 0 && e.src != n.src) fail("NSP edge sequence does not start at its source");
      if (k + 1 == n.edge_seq.size() && e.dst != n.dst) fail("NSP edge sequence does not end at its destination");
      if (k > 0 && out[e.src].size() != 1) fail("NSP interior node has more than one successor");
    }
    if (std::abs(n.probs.ps + n.probs.pf + n.probs.pd - 1.0) > 1e-12) fail("NSP probabilities not normalized");
    const bool any_blockable = std::any_of(n.edge_seq.begin(), n.edge_seq.end(),
                                           [&](std::size_t e) { return graph.edges[e].attr.blockable; });
    if (any_blockable != n.bw.has_value()) fail("NSP bw presence mismatch");
    if (n.bw) {
      if (*n.bw >= bw_edges.size()) fail("NSP bw id out of range");
      const auto& members = bw_edges[*n.bw].member_nsps;
      if (!std::binary_search(members.begin(), members.end(), i)) fail("NSP missing from its bw member set");
    }
  }
  for (std::size_t b = 0; b < bw_edges.size(); ++b) {
    const auto& bw = bw_edges[b];
    if (bw.id != b) fail("bw ids not dense");
    if (!graph.edges.at(bw.edge).attr.blockable) fail("bw edge is not blockable");
    if (bw.member_nsps.empty()) fail("bw edge without member NSPs");
    for (auto m : bw.member_nsps) {
      const auto& seq = nsps.at(m).edge_seq;
      auto last = std::find_if(seq.rbegin(), seq.rend(),
                               [&](std::size_t e) { return graph.edges[e].attr.blockable; });
      if (last == seq.rend() || *last != bw.edge) fail("bw edge is not the farthest blockable edge");
    }
  }
}

void write_condensed(const CondensedGraph& cg, std::ostream& out) {
  write_graph(cg.graph, out);
  for (const auto& n : cg.nsps) {
    out << "nsp " << n.id << ' ' << cg.graph.nodes[n.src].id << ' ' << cg.graph.nodes[n.dst].id
        << " edges=";
    for (std::size_t k = 0; k < n.edge_seq.size(); ++k) out << (k ? "," : "") << n.edge_seq[k];
    out << " ps=" << format_double(n.probs.ps) << " pf=" << format_double(n.probs.pf)
        << " pd=" << format_double(n.probs.pd) << " bw=";
    if (n.bw)
      out << *n.bw;
    else
      out << '-';
    out << '\n';
  }
  for (const auto& b : cg.bw_edges) {
    out << "bw " << b.id << " edge=" << b.edge << " nsps=";
    for (std::size_t k = 0; k < b.member_nsps.size(); ++k) out << (k ? "," : "") << b.member_nsps[k];
    out << '\n';
  }
}

void save_condensed(const CondensedGraph& cg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_condensed(cg, out);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

namespace {

std::vector<std::size_t> parse_index_list(const std::string& text, const std::string& where) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size())
      throw Error(ErrorCode::Parse, where + ": bad index '" + item + "'");
    out.push_back(v);
  }
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw Error(ErrorCode::Parse, where + ": bad number '" + text + "'");
  return v;
}

}  // namespace

CondensedGraph parse_condensed(std::istream& in, const std::string& source) {
  std::stringstream graph_part;
  std::vector<std::pair<std::string, std::size_t>> extra;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "nsp" || tag == "bw") {
      extra.emplace_back(line, line_no);
      graph_part << '\n';
    } else {
      graph_part << line << '\n';
    }
  }
  CondensedGraph cg;
  cg.graph = parse_graph(graph_part, source);
  auto das = cg.graph.domain_admins();
  if (das.size() != 1) throw Error(ErrorCode::Parse, source + ": condensed graph needs exactly one DomainAdmin");
  cg.da = das.front();
  cg.entries = cg.graph.entries;

  std::set<std::size_t> split;
  for (const auto& [text, ln] : extra) {
    const std::string where = source + ":" + std::to_string(ln);
    std::istringstream ls(text);
    std::string tag;
    ls >> tag;
    if (tag == "nsp") {
      Nsp n;
      std::string src, dst, field;
      if (!(ls >> n.id >> src >> dst)) throw Error(ErrorCode::Parse, where + ": malformed nsp record");
      auto s = cg.graph.find(src), d = cg.graph.find(dst);
      if (!s || !d) throw Error(ErrorCode::Parse, where + ": nsp references unknown node");
      n.src = *s;
      n.dst = *d;
      while (ls >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::Parse, where + ": malformed field");
        auto key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "edges")
          n.edge_seq = parse_index_list(value, where);
        else if (key == "ps")
          n.probs.ps = parse_number(value, where);
        else if (key == "pf")
          n.probs.pf = parse_number(value, where);
        else if (key == "pd")
          n.probs.pd = parse_number(value, where);
        else if (key == "bw") {
          if (value != "-") n.bw = parse_index_list(value, where).at(0);
        } else
          throw Error(ErrorCode::Parse, where + ": unknown field '" + key + "'");
      }
      for (auto e : n.edge_seq)
        if (e >= cg.graph.edges.size()) throw Error(ErrorCode::Parse, where + ": edge index out of range");
      if (n.id != cg.nsps.size()) throw Error(ErrorCode::Parse, where + ": nsp ids must be dense and ordered");
      if (!std::binary_search(cg.entries.begin(), cg.entries.end(), n.src)) split.insert(n.src);
      cg.nsps.push_back(std::move(n));
    } else {
      BwEdge b;
      std::string field;
      if (!(ls >> b.id)) throw Error(ErrorCode::Parse, where + ": malformed bw record");
      while (ls >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::Parse, where + ": malformed field");
        auto key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "edge")
          b.edge = parse_index_list(value, where).at(0);
        else if (key == "nsps")
          b.member_nsps = parse_index_list(value, where);
        else
          throw Error(ErrorCode::Parse, where + ": unknown field '" + key + "'");
      }
      if (b.id != cg.bw_edges.size()) throw Error(ErrorCode::Parse, where + ": bw ids must be dense and ordered");
      if (b.edge >= cg.graph.edges.size()) throw Error(ErrorCode::Parse, where + ": edge index out of range");
      cg.bw_edges.push_back(std::move(b));
    }
  }
  cg.split.assign(split.begin(), split.end());
  try {
    cg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Parse, source + ": " + e.what());
  }
  return cg;
}

CondensedGraph load_condensed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return parse_condensed(in, path);
}

}  // namespace adshield
