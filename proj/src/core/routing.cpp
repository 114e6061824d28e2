#include "nps/core/routing.hpp"

#include <tuple>

#include "nps/core/error.hpp"

namespace nps {
namespace {

struct Label {
  Rational latency{0};
  std::size_t hops = 0;
  std::vector<NodeId> path;
  Rational inv_bw{0};

  bool operator<(const Label& o) const {
    return std::tie(latency, hops, path) < std::tie(o.latency, o.hops, o.path);
  }
};

// Label-setting search. Extending two equal-length paths by the same node
// preserves their lexicographic order, so the full (latency, hops, path)
// key is monotone and settling the minimum label is exact.
std::map<NodeId, Label> shortest_from(const Topology& t, const NodeId& src) {
  std::map<NodeId, Label> best;
  std::map<NodeId, bool> settled;
  if (!t.node_up(src)) return best;
  best[src] = Label{Rational{0}, 0, {src}, Rational{0}};

  std::map<NodeId, std::vector<const LinkDescriptor*>> adj;
  for (const auto& [key, l] : t.links())
    if (t.link_usable(l)) {
      adj[l.a].push_back(&l);
      adj[l.b].push_back(&l);
    }

  while (true) {
    const NodeId* next = nullptr;
    for (const auto& [id, label] : best) {
      if (settled[id]) continue;
      if (!next || label < best[*next]) next = &id;
    }
    if (!next) break;
    const NodeId u = *next;
    settled[u] = true;
    const Label lu = best[u];
    for (const auto* l : adj[u]) {
      const NodeId& w = l->a == u ? l->b : l->a;
      if (settled[w]) continue;
      Label cand{lu.latency + l->latency_ms, lu.hops + 1, lu.path,
                 lu.inv_bw + Rational{1} / l->bandwidth_kb_per_ms};
      cand.path.push_back(w);
      auto it = best.find(w);
      if (it == best.end() || cand < it->second) best[w] = std::move(cand);
    }
  }
  return best;
}

}  // namespace

Rational RouteInfo::transfer_ms(std::uint64_t bytes) const {
  if (hops() == 0) return Rational{0};
  return latency_ms + Rational{static_cast<std::int64_t>(bytes), 1000} * inv_bandwidth;
}

std::vector<NodeId> route(const Topology& t, const NodeId& a, const NodeId& b) {
  if (!t.has_node(a) || !t.has_node(b))
    throw Error(ErrorCode::InvalidArgument, "route between unknown nodes " + a + ", " + b);
  auto labels = shortest_from(t, a);
  auto it = labels.find(b);
  if (it == labels.end()) throw Error(ErrorCode::NoRoute, "no route " + a + " -> " + b);
  return it->second.path;
}

RouteTable::RouteTable(const Topology& t) {
  for (const auto& [src, node] : t.nodes()) {
    for (auto& [dst, label] : shortest_from(t, src))
      routes_.emplace(std::make_pair(src, dst),
                      RouteInfo{std::move(label.path), label.latency, label.inv_bw});
  }
}

const RouteInfo* RouteTable::find(const NodeId& a, const NodeId& b) const {
  auto it = routes_.find({a, b});
  return it == routes_.end() ? nullptr : &it->second;
}

const RouteInfo& RouteTable::at(const NodeId& a, const NodeId& b) const {
  if (const auto* r = find(a, b)) return *r;
  throw Error(ErrorCode::NoRoute, "no route " + a + " -> " + b);
}

}  // namespace nps
