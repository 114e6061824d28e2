#include "nps/core/pipeline.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <type_traits>
#include <variant>

#include "nps/core/error.hpp"

namespace nps {

std::string_view to_string(PipelineRule rule) {
  switch (rule) {
    case PipelineRule::EmptyPipeline: return "EmptyPipeline";
    case PipelineRule::DuplicateStageId: return "DuplicateStageId";
    case PipelineRule::InvalidStageId: return "InvalidStageId";
    case PipelineRule::InvalidParameter: return "InvalidParameter";
    case PipelineRule::InvalidTrigger: return "InvalidTrigger";
    case PipelineRule::UnknownEdgeEndpoint: return "UnknownEdgeEndpoint";
    case PipelineRule::SelfLoop: return "SelfLoop";
    case PipelineRule::DuplicateEdge: return "DuplicateEdge";
    case PipelineRule::CycleDetected: return "CycleDetected";
    case PipelineRule::NoSink: return "NoSink";
    case PipelineRule::MultipleSinks: return "MultipleSinks";
    case PipelineRule::SinkMismatch: return "SinkMismatch";
    case PipelineRule::UnknownBindingStage: return "UnknownBindingStage";
    case PipelineRule::BindingOnNonEntry: return "BindingOnNonEntry";
    case PipelineRule::UnboundEntry: return "UnboundEntry";
    case PipelineRule::UnreachableStage: return "UnreachableStage";
    case PipelineRule::FunnelWithoutInput: return "FunnelWithoutInput";
    case PipelineRule::BarrierArityMismatch: return "BarrierArityMismatch";
    case PipelineRule::NonFunnelFanIn: return "NonFunnelFanIn";
  }
  return "Unknown";
}

namespace {

void check_trigger(const StageSpec& s, std::vector<PipelineViolation>& out) {
  const auto* funnel = std::get_if<FunnelKind>(&s.kind);
  if (!funnel) return;
  std::visit(
      [&](const auto& policy) {
        using T = std::decay_t<decltype(policy)>;
        if constexpr (std::is_same_v<T, BarrierPolicy>) {
          std::set<StageId> uniq(policy.inputs.begin(), policy.inputs.end());
          if (policy.inputs.empty())
            out.push_back({PipelineRule::InvalidTrigger, s.id, "barrier input list is empty"});
          else if (uniq.size() != policy.inputs.size())
            out.push_back({PipelineRule::InvalidTrigger, s.id, "barrier inputs contain duplicates"});
        } else if constexpr (std::is_same_v<T, CountWindowPolicy>) {
          if (policy.n < 1) out.push_back({PipelineRule::InvalidTrigger, s.id, "count window n < 1"});
        } else {
          if (policy.delta_ms < 1)
            out.push_back({PipelineRule::InvalidTrigger, s.id, "time window delta_ms < 1"});
        }
      },
      funnel->trigger);
}

}  // namespace

std::vector<PipelineViolation> validate_pipeline(const PipelineSpec& p) {
  std::vector<PipelineViolation> out;
  if (p.stages.empty()) {
    out.push_back({PipelineRule::EmptyPipeline, "", "pipeline has no stages"});
    return out;
  }

  std::map<StageId, std::size_t> index;
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const auto& s = p.stages[i];
    if (!is_valid_segment(s.id))
      out.push_back({PipelineRule::InvalidStageId, s.id, "stage ids must be nonempty without '/', '+', '#'"});
    if (!index.emplace(s.id, i).second)
      out.push_back({PipelineRule::DuplicateStageId, s.id, "stage id used twice"});
    if (s.compute_cost.is_negative())
      out.push_back({PipelineRule::InvalidParameter, s.id, "compute_cost < 0"});
    if (!s.selectivity.is_positive())
      out.push_back({PipelineRule::InvalidParameter, s.id, "selectivity <= 0"});
    check_trigger(s, out);
  }

  const std::size_t n = p.stages.size();
  std::vector<std::set<std::size_t>> preds(n), succs(n);
  std::set<std::pair<std::size_t, std::size_t>> seen_edges;
  for (const auto& [from, to] : p.edges) {
    const std::string label = from + "->" + to;
    auto fi = index.find(from);
    auto ti = index.find(to);
    if (fi == index.end() || ti == index.end()) {
      out.push_back({PipelineRule::UnknownEdgeEndpoint, label, "edge names an unknown stage"});
      continue;
    }
    if (fi->second == ti->second) {
      out.push_back({PipelineRule::SelfLoop, label, "stage feeds itself"});
      continue;
    }
    if (!seen_edges.emplace(fi->second, ti->second).second) {
      out.push_back({PipelineRule::DuplicateEdge, label, "edge listed twice"});
      continue;
    }
    succs[fi->second].insert(ti->second);
    preds[ti->second].insert(fi->second);
  }

  // Kahn's algorithm; anything left over sits on or behind a cycle.
  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = preds[i].size();
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto i = ready.back();
    ready.pop_back();
    ++visited;
    for (auto j : succs[i])
      if (--indeg[j] == 0) ready.push_back(j);
  }
  if (visited != n) {
    std::string members;
    for (std::size_t i = 0; i < n; ++i)
      if (indeg[i] != 0) members += (members.empty() ? "" : ",") + p.stages[i].id;
    out.push_back({PipelineRule::CycleDetected, members, "stages on or after a cycle"});
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = p.stages[i];
    if (const auto* f = std::get_if<FunnelKind>(&s.kind)) {
      if (preds[i].empty()) {
        out.push_back({PipelineRule::FunnelWithoutInput, s.id, "funnel has no incoming edge"});
      } else if (const auto* b = std::get_if<BarrierPolicy>(&f->trigger)) {
        std::set<StageId> expected(b->inputs.begin(), b->inputs.end());
        std::set<StageId> actual;
        for (auto j : preds[i]) actual.insert(p.stages[j].id);
        if (expected != actual)
          out.push_back({PipelineRule::BarrierArityMismatch, s.id,
                         "barrier inputs differ from incoming edges"});
      }
    } else if (preds[i].size() > 1) {
      out.push_back({PipelineRule::NonFunnelFanIn, s.id, "only funnels may have several inputs"});
    }
  }

  // Sink and reachability rules are meaningless on a cyclic graph.
  if (visited != n) return out;

  std::vector<std::size_t> sinks;
  for (std::size_t i = 0; i < n; ++i)
    if (succs[i].empty()) sinks.push_back(i);
  if (sinks.size() > 1) {
    std::string names;
    for (auto i : sinks) names += (names.empty() ? "" : ",") + p.stages[i].id;
    out.push_back({PipelineRule::MultipleSinks, names, "more than one stage without successors"});
  } else if (sinks.size() == 1 && p.stages[sinks[0]].id != p.sink) {
    out.push_back({PipelineRule::SinkMismatch, p.sink,
                   "declared sink differs from '" + p.stages[sinks[0]].id + "'"});
  }

  std::vector<bool> reached(n, false);
  std::vector<std::size_t> frontier;
  for (const auto& [stage, filter] : p.source_bindings) {
    auto it = index.find(stage);
    if (it == index.end()) {
      out.push_back({PipelineRule::UnknownBindingStage, stage, "source binding names no stage"});
      continue;
    }
    if (!preds[it->second].empty()) {
      out.push_back({PipelineRule::BindingOnNonEntry, stage, "bound stage has incoming edges"});
      continue;
    }
    reached[it->second] = true;
    frontier.push_back(it->second);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (preds[i].empty() && !p.source_bindings.count(p.stages[i].id))
      out.push_back({PipelineRule::UnboundEntry, p.stages[i].id, "entry stage has no source binding"});
  }
  while (!frontier.empty()) {
    auto i = frontier.back();
    frontier.pop_back();
    for (auto j : succs[i])
      if (!reached[j]) {
        reached[j] = true;
        frontier.push_back(j);
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!reached[i] && !preds[i].empty())
      out.push_back({PipelineRule::UnreachableStage, p.stages[i].id, "not reachable from any entry"});

  return out;
}

PipelineGraph::PipelineGraph(PipelineSpec spec) : spec_(std::move(spec)) {
  auto violations = validate_pipeline(spec_);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw ValidationError("pipeline/" + v.subject, std::string(to_string(v.rule)) + ": " + v.detail);
  }
  const std::size_t n = spec_.stages.size();
  preds_.assign(n, {});
  succs_.assign(n, {});
  for (const auto& [from, to] : spec_.edges) {
    auto f = index_of(from);
    auto t = index_of(to);
    succs_[f].push_back(t);
    preds_[t].push_back(f);
  }
  for (auto& v : preds_) std::sort(v.begin(), v.end());
  for (auto& v : succs_) std::sort(v.begin(), v.end());

  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = preds_[i].size();
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.insert(i);
  while (!ready.empty()) {
    auto i = *ready.begin();
    ready.erase(ready.begin());
    topo_.push_back(i);
    for (auto j : succs_[i])
      if (--indeg[j] == 0) ready.insert(j);
  }

  upstream_.assign(n, {});
  for (auto i : topo_) {
    if (preds_[i].empty()) {
      entries_.push_back(i);
      upstream_[i] = {i};
      continue;
    }
    std::set<std::size_t> acc;
    for (auto j : preds_[i]) acc.insert(upstream_[j].begin(), upstream_[j].end());
    upstream_[i].assign(acc.begin(), acc.end());
  }
  std::sort(entries_.begin(), entries_.end());
  sink_ = index_of(spec_.sink);
}

std::size_t PipelineGraph::index_of(const StageId& id) const {
  for (std::size_t i = 0; i < spec_.stages.size(); ++i)
    if (spec_.stages[i].id == id) return i;
  throw Error(ErrorCode::InvalidArgument, "unknown stage " + id);
}

PipelineSpec split_model(const ModelDescriptor& model, std::uint32_t k, bool privacy_split,
                         const TopicFilter& entry_filter) {
  const std::size_t layers = model.layers.size();
  if (k < 1 || k > layers)
    throw Error(ErrorCode::SplitArity, "k=" + std::to_string(k) + " outside [1, " +
                                           std::to_string(layers) + "] for model " + model.id);

  PipelineSpec p;
  const std::size_t base = layers / k;
  const std::size_t extra = layers % k;
  std::size_t next = 0;
  for (std::uint32_t g = 0; g < k; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    StageSpec s;
    s.id = model.id + ".s" + std::to_string(g + 1);
    s.kind = MappingKind{FnSpec{"identity", {}}};
    s.compute_cost = Rational{0};
    s.selectivity = Rational{1};
    for (std::size_t l = next; l < next + size; ++l) {
      const auto& layer = model.layers[l];
      s.compute_cost += layer.compute_cost;
      s.mem_mb += layer.mem_mb;
      s.selectivity *= layer.selectivity;
      s.needs_accelerator = s.needs_accelerator || layer.needs_accelerator;
    }
    next += size;
    if (privacy_split && (g == 0 || g + 1 == k)) s.pin = AtPublisher{};
    p.stages.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < p.stages.size(); ++i)
    p.edges.emplace_back(p.stages[i - 1].id, p.stages[i].id);
  p.source_bindings.emplace(p.stages.front().id, entry_filter);
  p.sink = p.stages.back().id;
  return p;
}

}  // namespace nps
