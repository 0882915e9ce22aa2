#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adshield/common.hpp"

namespace adshield {

enum class NodeKind { User, Computer, Group, DomainAdmin };
enum class EdgeKind { HasSession, MemberOf, AdminTo };

std::string_view to_string(NodeKind kind);
std::string_view to_string(EdgeKind kind);
std::optional<NodeKind> parse_node_kind(std::string_view text);
std::optional<EdgeKind> parse_edge_kind(std::string_view text);

struct EdgeAttr {
  double pd = 0.0;  // detection
  double pf = 0.0;  // failure
  bool blockable = false;
  EdgeKind kind = EdgeKind::MemberOf;

  double ps() const { return 1.0 - pf - pd; }
  bool operator==(const EdgeAttr&) const = default;
};

struct Node {
  std::string id;
  NodeKind kind = NodeKind::User;
  bool operator==(const Node&) const = default;
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeAttr attr;
  bool operator==(const Edge&) const = default;
};

/// Raw directed attack graph. Nodes and edges are addressed by position.
struct ADGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<std::size_t> entries;  // sorted, unique

  std::optional<std::size_t> find(std::string_view id) const;
  std::vector<std::size_t> domain_admins() const;
  std::vector<std::vector<std::size_t>> out_edges() const;
  std::vector<std::vector<std::size_t>> in_edges() const;

  /// Throws Error(Graph) on a broken invariant. Entries may be empty unless required.
  void validate(bool require_entries = false) const;

  bool operator==(const ADGraph&) const = default;
};

enum class RateMode { Independent, Positive, Negative };

struct RateDistribution {
  RateMode mode = RateMode::Independent;
  double mean_pd = 0.1;
  double mean_pf = 0.1;
  double sigma = 0.05;
  double upper = 0.2;  // Independent: uniform(0, upper)

  double correlation() const;
  static RateDistribution from_mode(RateMode mode);
};

std::optional<RateMode> parse_rate_mode(std::string_view text);  // indep|pos|neg
std::string_view to_string(RateMode mode);

/// One-record-per-line text format (`node`, `entry`, `edge`).
ADGraph load_graph(const std::string& path);
ADGraph parse_graph(std::istream& in, const std::string& source = "<stream>");
void save_graph(const ADGraph& g, const std::string& path);
void write_graph(const ADGraph& g, std::ostream& out);

/// Layered User/Computer/Group stand-in for the BloodHound generator.
ADGraph generate_synthetic(int n_computers, std::uint64_t seed);

struct DeskGraphOptions {
  int entries = 2;
  int splits = 3;
  int max_chain = 2;        // interior nodes per branch
  double merge_prob = 0.3;  // branch joins an existing chain (creates shared suffixes)
  double back_prob = 0.1;   // branch targets a split farther from DA
  double third_branch_prob = 0.25;
};

/// Small hub-and-chain graph whose condensed form has a handful of NSPs.
ADGraph generate_desk(const DeskGraphOptions& options, std::uint64_t seed);

void assign_rates(ADGraph& g, const RateDistribution& dist, std::uint64_t seed);

/// Samples one (pd, pf) pair; exposed for distribution tests.
std::pair<double, double> sample_rates(const RateDistribution& dist, Rng& rng);

/// Hop count from each node to the nearest DomainAdmin; nullopt when unreachable.
std::vector<std::optional<int>> hops_to_da(const ADGraph& g);

/// Probability that each edge is made blockable (minHops / maxHops).
std::vector<double> blockable_probabilities(const ADGraph& g);
void assign_blockable(ADGraph& g, std::uint64_t seed);

/// Chooses 20 entries among the 40 nodes farthest from DA.
std::vector<std::size_t> select_entries(const ADGraph& g, std::uint64_t seed, std::size_t pool = 40,
                                        std::size_t count = 20);

}  // namespace adshield
