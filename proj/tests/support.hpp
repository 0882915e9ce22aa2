#pragma once

#include <memory>
#include <sstream>
#include <string>

#include "adshield/attack_env.hpp"
#include "adshield/condense.hpp"

namespace testing {

inline adshield::ADGraph graph_from(const std::string& text) {
  std::istringstream in(text);
  return adshield::parse_graph(in, "test");
}

inline std::shared_ptr<const adshield::AttackModel> model_of(const adshield::ADGraph& g) {
  auto cg = std::make_shared<const adshield::CondensedGraph>(adshield::condense(g));
  return std::make_shared<const adshield::AttackModel>(cg);
}

inline std::shared_ptr<const adshield::AttackModel> model_from(const std::string& text) {
  return model_of(graph_from(text));
}

/// Desk graph with rates and blockable flags assigned from one seed.
inline adshield::ADGraph desk_graph(std::uint64_t seed, int entries = 2, int splits = 3,
                                    adshield::RateMode mode = adshield::RateMode::Independent) {
  adshield::DeskGraphOptions o;
  o.entries = entries;
  o.splits = splits;
  auto g = adshield::generate_desk(o, seed);
  adshield::assign_rates(g, adshield::RateDistribution::from_mode(mode), seed);
  adshield::assign_blockable(g, seed);
  return g;
}

}  // namespace testing
