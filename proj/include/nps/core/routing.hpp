#pragma once

#include <map>
#include <optional>
#include <vector>

#include "nps/core/types.hpp"

namespace nps {

/// Minimum-latency path over usable links. Ties go to fewer hops, then to
/// the lexicographically smallest node-id sequence. route(t, a, a) == {a}.
///
/// Throws Error{NoRoute} if b is unreachable and Error{InvalidArgument} if
/// either node is unknown.
std::vector<NodeId> route(const Topology& t, const NodeId& a, const NodeId& b);

/// Summary of one route, enough to price a transfer of any size over it.
struct RouteInfo {
  std::vector<NodeId> path;
  Rational latency_ms{0};
  /// Sum over traversed links of 1 / bandwidth_kb_per_ms.
  Rational inv_bandwidth{0};
  std::size_t hops() const { return path.empty() ? 0 : path.size() - 1; }

  /// latency + size / bandwidth on every hop, in ms.
  Rational transfer_ms(std::uint64_t bytes) const;
};

/// All-pairs routes computed once per topology state; the placement search
/// evaluates millions of candidate placements against the same table.
class RouteTable {
 public:
  explicit RouteTable(const Topology& t);

  /// nullptr when b is unreachable from a.
  const RouteInfo* find(const NodeId& a, const NodeId& b) const;
  const RouteInfo& at(const NodeId& a, const NodeId& b) const;

 private:
  std::map<std::pair<NodeId, NodeId>, RouteInfo> routes_;
};

}  // namespace nps
