#pragma once

#include <string>
#include <vector>

#include "nps/core/pipeline.hpp"
#include "nps/core/types.hpp"

namespace nps::testing {

inline NodeDescriptor node(const std::string& id, Rational cpu = Rational{1},
                           std::uint64_t mem_mb = 1 << 20, bool accel = false,
                           const std::string& domain = "default") {
  NodeDescriptor n;
  n.id = id;
  n.cpu_capacity = cpu;
  n.mem_mb = mem_mb;
  n.has_accelerator = accel;
  n.domain = domain;
  return n;
}

inline LinkDescriptor link(const std::string& a, const std::string& b, Rational latency_ms,
                           Rational bw = Rational{10}) {
  LinkDescriptor l;
  l.a = a;
  l.b = b;
  l.latency_ms = latency_ms;
  l.bandwidth_kb_per_ms = bw;
  return l;
}

/// Nodes joined in a line with the given per-link latency.
inline Topology line(const std::vector<std::string>& ids, Rational latency = Rational{5},
                     Rational bw = Rational{10}) {
  Topology t;
  for (const auto& id : ids) t.add_node(node(id));
  for (std::size_t i = 1; i < ids.size(); ++i) t.add_link(link(ids[i - 1], ids[i], latency, bw));
  return t;
}

inline StageSpec mapping(const std::string& id, Rational cost = Rational{1},
                         Rational selectivity = Rational{1}, std::uint64_t mem = 0) {
  StageSpec s;
  s.id = id;
  s.kind = MappingKind{};
  s.compute_cost = cost;
  s.selectivity = selectivity;
  s.mem_mb = mem;
  return s;
}

/// Chain s1 -> s2 -> ... bound to `filter`.
inline PipelineSpec chain(std::vector<StageSpec> stages, const std::string& filter = "#") {
  PipelineSpec p;
  for (std::size_t i = 1; i < stages.size(); ++i) p.edges.emplace_back(stages[i - 1].id, stages[i].id);
  p.source_bindings.emplace(stages.front().id, TopicFilter{filter});
  p.sink = stages.back().id;
  p.stages = std::move(stages);
  return p;
}

}  // namespace nps::testing
