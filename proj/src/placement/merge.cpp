#include "nps/placement/merge.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace nps::place {
namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_fn(std::ostream& os, const FnSpec& fn) {
  os << fn.name << '{';
  for (const auto& [k, v] : fn.params) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    os << k << '=' << std::string_view(buf, res.ptr - buf) << ';';
  }
  os << '}';
}

std::string canonical(const StageSpec& s) {
  std::ostringstream os;
  os << s.id << '|' << s.kind.index() << ':';
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, MappingKind>) {
          write_fn(os, k.fn);
        } else if constexpr (std::is_same_v<T, FilterKind>) {
          write_fn(os, k.predicate);
        } else {
          write_fn(os, k.fn);
          os << '/' << k.trigger.index() << ':';
          if (const auto* b = std::get_if<BarrierPolicy>(&k.trigger))
            for (const auto& in : b->inputs) os << in << ',';
          else if (const auto* c = std::get_if<CountWindowPolicy>(&k.trigger))
            os << c->n;
          else
            os << std::get<TimeWindowPolicy>(k.trigger).delta_ms;
        }
      },
      s.kind);
  os << '|' << s.compute_cost << '|' << s.mem_mb << '|' << s.selectivity << '|'
     << s.needs_accelerator << '|' << s.pin.index();
  if (const auto* at = std::get_if<AtNode>(&s.pin)) os << ':' << at->node;
  return os.str();
}

std::vector<StageId> pred_ids(const PipelineSpec& p, const StageId& id) {
  std::vector<StageId> out;
  for (const auto& [from, to] : p.edges)
    if (to == id) out.push_back(from);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

const ExecStage* ExecutionGraph::find(const std::string& key) const {
  auto it = stages.find(key);
  return it == stages.end() ? nullptr : &it->second;
}

std::vector<const ExecStage*> ExecutionGraph::entries() const {
  std::vector<const ExecStage*> out;
  for (const auto& [key, s] : stages)
    if (s.is_entry()) out.push_back(&s);
  return out;
}

ExecutionGraph merge_shared_prefix(std::span<const PipelineInstance> instances) {
  std::vector<const PipelineInstance*> order;
  for (const auto& inst : instances)
    if (!inst.suspended) order.push_back(&inst);
  std::sort(order.begin(), order.end(),
            [](const PipelineInstance* a, const PipelineInstance* b) { return a->id < b->id; });

  ExecutionGraph g;
  for (const auto* inst : order) {
    PipelineGraph pg(inst->pipeline);
    auto& keys = g.stage_keys[inst->id];
    for (auto i : pg.topo_order()) {
      const auto& spec = pg.stage(i);
      const auto& node = inst->placement.assignment.at(spec.id);
      std::vector<std::string> preds;
      for (auto j : pg.preds(i)) preds.push_back(keys.at(pg.stage(j).id));
      std::sort(preds.begin(), preds.end());

      std::string identity = inst->model_id + '\n' + canonical(spec) + '\n' + node + '\n';
      for (const auto& k : preds) identity += k + ',';
      std::optional<TopicFilter> filter;
      NodeId publisher;
      if (preds.empty()) {
        filter = inst->pipeline.source_bindings.at(spec.id);
        publisher = inst->endpoints.publishers.at(spec.id);
        identity += '\n' + publisher + '\n' + filter->str();
      }
      char hash[17];
      std::snprintf(hash, sizeof hash, "%016llx",
                    static_cast<unsigned long long>(fnv1a(identity)));
      const std::string key = spec.id + "@" + node + "#" + hash;
      keys[spec.id] = key;

      auto [it, fresh] = g.stages.try_emplace(key);
      auto& stage = it->second;
      if (fresh) {
        stage.key = key;
        stage.model_id = inst->model_id;
        stage.spec = spec;
        stage.node = node;
        stage.pred_keys = preds;
        stage.entry_filter = filter;
        stage.publisher = publisher;
        for (const auto& pk : preds) g.stages.at(pk).succ_keys.push_back(key);
      }
      stage.members.push_back(inst->id);
      if (i == pg.sink()) stage.deliveries.push_back(inst->id);
    }
  }
  for (auto& [key, stage] : g.stages) std::sort(stage.succ_keys.begin(), stage.succ_keys.end());
  return g;
}

std::vector<StageId> common_prefix(const PipelineSpec& a, const PipelineSpec& b) {
  PipelineGraph ga(a);
  std::vector<StageId> out;
  auto in_prefix = [&](const StageId& id) {
    return std::find(out.begin(), out.end(), id) != out.end();
  };
  for (auto i : ga.topo_order()) {
    const auto& s = ga.stage(i);
    const auto* other = b.find(s.id);
    if (!other || !(*other == s)) continue;
    auto preds = pred_ids(a, s.id);
    if (preds != pred_ids(b, s.id)) continue;
    if (!std::all_of(preds.begin(), preds.end(), in_prefix)) continue;
    if (preds.empty()) {
      auto fa = a.source_bindings.find(s.id);
      auto fb = b.source_bindings.find(s.id);
      if (fa == a.source_bindings.end() || fb == b.source_bindings.end() ||
          !(fa->second == fb->second))
        continue;
    }
    out.push_back(s.id);
  }
  return out;
}

}  // namespace nps::place
