#include "nps/placement/cost.hpp"

#include <algorithm>

#include "nps/core/error.hpp"
#include "nps/operators/operators.hpp"

namespace nps::place {
namespace {

// Entry sizes and rates are read off every workload topic the entry's
// filter matches: the largest size and the summed rate.
TopicLoad entry_load(const TopicFilter& filter, const WorkloadSpec& w) {
  TopicLoad out{1, Rational{0}};
  bool any = false;
  for (const auto& [topic, load] : w.topics) {
    if (!match_filter(filter, Topic{topic})) continue;
    out.size_bytes = any ? std::max(out.size_bytes, load.size_bytes) : load.size_bytes;
    out.rate_per_s += load.rate_per_s;
    any = true;
  }
  return out;
}

std::vector<std::uint64_t> propagate_sizes(const PipelineGraph& g,
                                           const std::vector<std::uint64_t>& entry_bytes) {
  std::vector<std::uint64_t> out(g.size(), 1);
  for (auto i : g.topo_order()) {
    std::uint64_t in = 0;
    if (g.is_entry(i))
      in = entry_bytes[i];
    else
      for (auto j : g.preds(i)) in += out[j];
    out[i] = ops::scaled_size(in, g.stage(i).selectivity);
  }
  return out;
}

Rational funnel_rate(const FunnelKind& f, const std::vector<Rational>& in_rates) {
  Rational sum{0};
  for (const auto& r : in_rates) sum += r;
  if (std::holds_alternative<BarrierPolicy>(f.trigger))
    return *std::min_element(in_rates.begin(), in_rates.end());
  if (const auto* c = std::get_if<CountWindowPolicy>(&f.trigger))
    return sum / Rational{static_cast<std::int64_t>(c->n)};
  const auto& tw = std::get<TimeWindowPolicy>(f.trigger);
  return std::min(sum, Rational{1000, tw.delta_ms});
}

}  // namespace

void check_objective(const Objective& o) {
  if (o.alpha.is_negative() || o.beta.is_negative())
    throw Error(ErrorCode::InvalidArgument, "objective weights must be >= 0");
  if (o.alpha.is_zero() && o.beta.is_zero())
    throw Error(ErrorCode::InvalidArgument, "objective weights cannot both be zero");
}

std::string_view to_string(PlacementRule rule) {
  switch (rule) {
    case PlacementRule::Unassigned: return "Unassigned";
    case PlacementRule::UnknownNode: return "UnknownNode";
    case PlacementRule::NodeDown: return "NodeDown";
    case PlacementRule::MemoryExceeded: return "MemoryExceeded";
    case PlacementRule::CpuExceeded: return "CpuExceeded";
    case PlacementRule::AcceleratorMissing: return "AcceleratorMissing";
    case PlacementRule::PinViolated: return "PinViolated";
    case PlacementRule::NoRoute: return "NoRoute";
  }
  return "Unknown";
}

Endpoints Endpoints::single(const PipelineSpec& p, const NodeId& publisher,
                            const NodeId& subscriber) {
  Endpoints e;
  for (const auto& [stage, filter] : p.source_bindings) e.publishers[stage] = publisher;
  e.subscriber = subscriber;
  return e;
}

std::map<StageId, std::uint64_t> stage_sizes(const PipelineSpec& p, std::uint64_t input_size) {
  std::map<StageId, std::uint64_t> entries;
  for (const auto& [stage, filter] : p.source_bindings) entries[stage] = input_size;
  return stage_sizes(p, entries);
}

std::map<StageId, std::uint64_t> stage_sizes(const PipelineSpec& p,
                                             const std::map<StageId, std::uint64_t>& entry_sizes) {
  PipelineGraph g(p);
  std::vector<std::uint64_t> entry_bytes(g.size(), 1);
  for (auto e : g.entries()) {
    auto it = entry_sizes.find(g.stage(e).id);
    if (it == entry_sizes.end())
      throw Error(ErrorCode::InvalidArgument, "no input size for entry " + g.stage(e).id);
    entry_bytes[e] = it->second;
  }
  auto sizes = propagate_sizes(g, entry_bytes);
  std::map<StageId, std::uint64_t> out;
  for (std::size_t i = 0; i < g.size(); ++i) out[g.stage(i).id] = sizes[i];
  return out;
}

CostModel::CostModel(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                     const Objective& o, const Endpoints& ends)
    : graph_(p), objective_(o), table_(t) {
  check_objective(o);
  for (const auto& [id, node] : t.nodes()) {
    node_index_[id] = nodes_.size();
    nodes_.push_back(id);
    up_.push_back(t.node_up(id));
    node_mem_.push_back(node.mem_mb);
    node_cap_.push_back(node.cpu_capacity);
    node_accel_.push_back(node.has_accelerator);
  }
  const std::size_t n_nodes = nodes_.size();
  routes_.assign(n_nodes * n_nodes, nullptr);
  for (std::size_t a = 0; a < n_nodes; ++a)
    for (std::size_t b = 0; b < n_nodes; ++b) routes_[a * n_nodes + b] = table_.find(nodes_[a], nodes_[b]);

  if (!t.has_node(ends.subscriber))
    throw Error(ErrorCode::InvalidArgument, "unknown subscriber node " + ends.subscriber);
  subscriber_ = node_index_.at(ends.subscriber);

  const std::size_t n = graph_.size();
  entry_pub_.assign(n, kUnassigned);
  entry_bytes_.assign(n, 1);
  std::vector<Rational> rate(n, Rational{0});
  for (auto e : graph_.entries()) {
    const auto& id = graph_.stage(e).id;
    auto pub = ends.publishers.find(id);
    if (pub == ends.publishers.end())
      throw Error(ErrorCode::InvalidArgument, "no publisher for entry stage " + id);
    if (!t.has_node(pub->second))
      throw Error(ErrorCode::InvalidArgument, "unknown publisher node " + pub->second);
    entry_pub_[e] = node_index_.at(pub->second);
    auto load = entry_load(p.source_bindings.at(id), w);
    entry_bytes_[e] = load.size_bytes;
    rate[e] = load.rate_per_s;
  }
  out_bytes_ = propagate_sizes(graph_, entry_bytes_);

  for (auto i : graph_.topo_order()) {
    if (graph_.is_entry(i)) continue;
    std::vector<Rational> in_rates;
    for (auto j : graph_.preds(i)) in_rates.push_back(rate[j]);
    if (const auto* f = std::get_if<FunnelKind>(&graph_.stage(i).kind))
      rate[i] = funnel_rate(*f, in_rates);
    else
      rate[i] = in_rates.front();
  }

  primary_pub_.assign(n, kUnassigned);
  pin_target_.assign(n, std::nullopt);
  load_.assign(n, Rational{0});
  compute_ms_.assign(n * n_nodes, Rational{0});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = graph_.stage(i);
    primary_pub_[i] = entry_pub_[graph_.upstream_entries(i).front()];
    load_[i] = s.compute_cost * rate[i] / Rational{1000};
    for (std::size_t m = 0; m < n_nodes; ++m) compute_ms_[i * n_nodes + m] = s.compute_cost / node_cap_[m];

    std::visit(
        [&](const auto& pin) {
          using T = std::decay_t<decltype(pin)>;
          if constexpr (std::is_same_v<T, AtPublisher>) {
            std::size_t target = kUnassigned;
            bool unique = true;
            for (auto e : graph_.upstream_entries(i)) {
              if (target == kUnassigned)
                target = entry_pub_[e];
              else if (entry_pub_[e] != target)
                unique = false;
            }
            if (unique) pin_target_[i] = target;
          } else if constexpr (std::is_same_v<T, AtSubscriber>) {
            pin_target_[i] = subscriber_;
          } else if constexpr (std::is_same_v<T, AtNode>) {
            auto it = node_index_.find(pin.node);
            if (it != node_index_.end()) pin_target_[i] = it->second;
          }
        },
        s.pin);
  }

  for (auto e : graph_.entries()) flows_.push_back({kUnassigned, e, entry_bytes_[e]});
  for (auto i : graph_.topo_order())
    for (auto j : graph_.succs(i)) flows_.push_back({i, j, out_bytes_[i]});
  flows_.push_back({graph_.sink(), kUnassigned, out_bytes_[graph_.sink()]});
}

std::size_t CostModel::node_index(const NodeId& id) const {
  auto it = node_index_.find(id);
  if (it == node_index_.end()) throw Error(ErrorCode::InvalidArgument, "unknown node " + id);
  return it->second;
}

std::optional<std::size_t> CostModel::pin_target(std::size_t stage) const {
  return pin_target_[stage];
}

bool CostModel::resources_ok(std::span<const std::size_t> assign,
                             std::vector<PlacementViolation>* out) const {
  bool ok = true;
  auto report = [&](PlacementRule rule, const std::string& subject, const std::string& detail) {
    ok = false;
    if (out) out->push_back({rule, subject, detail});
  };
  const std::size_t n_nodes = nodes_.size();
  std::vector<std::uint64_t> mem(n_nodes, 0);
  std::vector<Rational> load(n_nodes, Rational{0});
  std::vector<bool> used(n_nodes, false);

  for (std::size_t i = 0; i < graph_.size(); ++i) {
    const auto& s = graph_.stage(i);
    const auto node = assign[i];
    if (node == kUnassigned) {
      report(PlacementRule::Unassigned, s.id, "stage has no node");
      if (!out) return false;
      continue;
    }
    if (!up_[node]) {
      report(PlacementRule::NodeDown, s.id, "assigned to down node " + nodes_[node]);
      if (!out) return false;
    }
    if (s.needs_accelerator && !node_accel_[node]) {
      report(PlacementRule::AcceleratorMissing, s.id, nodes_[node] + " has no accelerator");
      if (!out) return false;
    }
    if (is_pinned(s.pin) && pin_target_[i] != node) {
      report(PlacementRule::PinViolated, s.id,
             pin_target_[i] ? "pinned to " + nodes_[*pin_target_[i]] + ", placed on " + nodes_[node]
                            : "pin cannot be resolved");
      if (!out) return false;
    }
    mem[node] += s.mem_mb;
    load[node] += load_[i];
    used[node] = true;
  }
  for (std::size_t m = 0; m < n_nodes; ++m) {
    if (!used[m]) continue;
    if (mem[m] > node_mem_[m]) {
      report(PlacementRule::MemoryExceeded, nodes_[m],
             std::to_string(mem[m]) + " MB > " + std::to_string(node_mem_[m]) + " MB");
      if (!out) return false;
    }
    if (load[m] > node_cap_[m]) {
      report(PlacementRule::CpuExceeded, nodes_[m],
             "load " + load[m].str() + " > capacity " + node_cap_[m].str());
      if (!out) return false;
    }
  }
  return ok;
}

bool CostModel::latency_and_bytes(std::span<const std::size_t> assign, Rational& latency,
                                  Rational& bytes_kb, std::vector<PlacementViolation>* out) const {
  const std::size_t n_nodes = nodes_.size();
  const std::size_t n = graph_.size();
  bool ok = true;
  std::vector<Rational> ready(n, Rational{0});
  std::vector<Rational> finish(n, Rational{0});
  Rational bytes{0};
  Rational delivered{0};

  auto transfer = [&](std::size_t from, std::size_t to, std::uint64_t size, const std::string& what,
                      Rational& arrival) {
    if (from == to) return;
    const RouteInfo* r = routes_[from * n_nodes + to];
    if (!r) {
      ok = false;
      if (out) out->push_back({PlacementRule::NoRoute, what, nodes_[from] + " -> " + nodes_[to]});
      return;
    }
    arrival += r->transfer_ms(size);
    bytes += Rational{static_cast<std::int64_t>(size * r->hops()), 1000};
  };

  // Flows are ordered: entries, then edges in topological order of their
  // source, then delivery; so every stage's inputs are known before its
  // successors read finish[].
  std::size_t f = 0;
  for (; f < flows_.size() && flows_[f].from_stage == kUnassigned; ++f) {
    const auto& fl = flows_[f];
    if (assign[fl.to_stage] == kUnassigned) continue;
    Rational arrival{0};
    transfer(entry_pub_[fl.to_stage], assign[fl.to_stage], fl.bytes,
             "entry " + graph_.stage(fl.to_stage).id, arrival);
    ready[fl.to_stage] = std::max(ready[fl.to_stage], arrival);
  }
  std::vector<bool> done(n, false);
  auto finish_stage = [&](std::size_t i) {
    if (done[i]) return;
    done[i] = true;
    if (assign[i] != kUnassigned) finish[i] = ready[i] + compute_ms_[i * n_nodes + assign[i]];
  };
  for (; f < flows_.size(); ++f) {
    const auto& fl = flows_[f];
    finish_stage(fl.from_stage);
    if (assign[fl.from_stage] == kUnassigned) continue;
    if (fl.to_stage == kUnassigned) {
      Rational arrival = finish[fl.from_stage];
      transfer(assign[fl.from_stage], subscriber_, fl.bytes, "delivery", arrival);
      delivered = arrival;
      continue;
    }
    if (assign[fl.to_stage] == kUnassigned) continue;
    Rational arrival = finish[fl.from_stage];
    transfer(assign[fl.from_stage], assign[fl.to_stage], fl.bytes,
             graph_.stage(fl.from_stage).id + "->" + graph_.stage(fl.to_stage).id, arrival);
    ready[fl.to_stage] = std::max(ready[fl.to_stage], arrival);
  }
  latency = delivered;
  bytes_kb = bytes;
  return ok;
}

CostReport CostModel::evaluate(std::span<const std::size_t> assign) const {
  CostReport r;
  resources_ok(assign, &r.violations);
  latency_and_bytes(assign, r.latency_ms, r.bytes_kb, &r.violations);
  r.feasible = r.violations.empty();
  r.objective_value = objective_.alpha * r.latency_ms + objective_.beta * r.bytes_kb;
  return r;
}

std::optional<Rational> CostModel::objective_if_feasible(std::span<const std::size_t> assign) const {
  if (!resources_ok(assign, nullptr)) return std::nullopt;
  Rational latency{0}, bytes{0};
  if (!latency_and_bytes(assign, latency, bytes, nullptr)) return std::nullopt;
  return objective_.alpha * latency + objective_.beta * bytes;
}

std::vector<PlacementViolation> CostModel::violations(std::span<const std::size_t> assign) const {
  return evaluate(assign).violations;
}

std::vector<std::size_t> CostModel::to_indices(const Placement& pl) const {
  std::vector<std::size_t> out(graph_.size(), kUnassigned);
  for (std::size_t i = 0; i < graph_.size(); ++i) {
    auto it = pl.assignment.find(graph_.stage(i).id);
    if (it == pl.assignment.end()) continue;
    auto n = node_index_.find(it->second);
    out[i] = n == node_index_.end() ? kUnassigned : n->second;
  }
  return out;
}

Placement CostModel::to_placement(std::span<const std::size_t> assign) const {
  Placement pl;
  for (std::size_t i = 0; i < graph_.size(); ++i)
    if (assign[i] != kUnassigned) pl.assignment[graph_.stage(i).id] = nodes_[assign[i]];
  return pl;
}

namespace {

// Assignments naming nodes outside the topology are reported here, since
// the index form cannot represent them.
void unknown_nodes(const Placement& pl, const Topology& t, std::vector<PlacementViolation>& out) {
  for (const auto& [stage, node] : pl.assignment)
    if (!t.has_node(node)) out.push_back({PlacementRule::UnknownNode, stage, "unknown node " + node});
}

}  // namespace

CostReport cost(const Placement& pl, const PipelineSpec& p, const Topology& t,
                const WorkloadSpec& w, const Objective& o, const Endpoints& ends) {
  CostModel model(p, t, w, o, ends);
  std::vector<PlacementViolation> unknown;
  unknown_nodes(pl, t, unknown);
  auto report = model.evaluate(model.to_indices(pl));
  if (!unknown.empty()) {
    report.violations.insert(report.violations.begin(), unknown.begin(), unknown.end());
    report.feasible = false;
  }
  return report;
}

CostReport cost(const Placement& pl, const PipelineSpec& p, const Topology& t,
                const WorkloadSpec& w, const Objective& o, const NodeId& publisher,
                const NodeId& subscriber) {
  return cost(pl, p, t, w, o, Endpoints::single(p, publisher, subscriber));
}

std::vector<PlacementViolation> feasible(const Placement& pl, const PipelineSpec& p,
                                         const Topology& t, const WorkloadSpec& w,
                                         const Endpoints& ends) {
  if (p.stages.empty()) return {};
  return cost(pl, p, t, w, Objective{}, ends).violations;
}

std::vector<PlacementViolation> feasible(const Placement& pl, const PipelineSpec& p,
                                         const Topology& t, const WorkloadSpec& w,
                                         const NodeId& publisher, const NodeId& subscriber) {
  if (p.stages.empty()) return {};
  return feasible(pl, p, t, w, Endpoints::single(p, publisher, subscriber));
}

}  // namespace nps::place
