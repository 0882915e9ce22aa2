#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adshield/graph.hpp"

namespace adshield {

/// Aggregated outcome of traversing a whole path.
struct PathProbs {
  double ps = 1.0;
  double pf = 0.0;
  double pd = 0.0;
};

/// Non-splitting path: a maximal single-successor chain treated as one macro edge.
struct Nsp {
  std::size_t id = 0;
  std::size_t src = 0;  // node index in the pruned graph
  std::size_t dst = 0;
  std::vector<std::size_t> edge_seq;  // edge indices in traversal order
  PathProbs probs;
  std::optional<std::size_t> bw;  // block-worthy edge id
};

struct BwEdge {
  std::size_t id = 0;
  std::size_t edge = 0;  // edge index in the pruned graph
  std::vector<std::size_t> member_nsps;  // sorted
};

struct CondensedGraph {
  ADGraph graph;  // pruned graph the NSPs index into
  std::vector<std::size_t> entries;
  std::vector<std::size_t> split;
  std::size_t da = 0;
  std::vector<Nsp> nsps;
  std::vector<BwEdge> bw_edges;

  /// Distinct nodes of the condensed structure (entries, split nodes and DA).
  std::size_t node_count() const;
  void validate() const;
};

/// Merges DomainAdmins and strips structure the attacker can never use; iterates to a fixed point.
ADGraph prune(const ADGraph& g);

struct SplitEntry {
  std::vector<std::size_t> split;
  std::vector<std::size_t> entry;
};
SplitEntry find_split_entry(const ADGraph& g);

std::vector<Nsp> compute_nsps(const ADGraph& g, std::span<const std::size_t> split,
                              std::span<const std::size_t> entry);

/// Assigns `bw` on each NSP and returns the deduplicated block-worthy edges.
std::vector<BwEdge> compute_bw(const ADGraph& g, std::vector<Nsp>& nsps);

PathProbs aggregate_probs(const ADGraph& g, const Nsp& nsp);
PathProbs aggregate_probs(std::span<const PathProbs> edges);

CondensedGraph condense(const ADGraph& g);

void write_condensed(const CondensedGraph& cg, std::ostream& out);
void save_condensed(const CondensedGraph& cg, const std::string& path);
CondensedGraph parse_condensed(std::istream& in, const std::string& source = "<stream>");
CondensedGraph load_condensed(const std::string& path);

}  // namespace adshield
