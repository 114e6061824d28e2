#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nps/placement/cost.hpp"

namespace nps::place {

/// One resolved inference subscription: its pipeline and where it runs.
struct PipelineInstance {
  InstanceId id;
  SubId sub_id;
  ModelId model_id;
  PipelineSpec pipeline;
  Placement placement;
  Endpoints endpoints;
  /// Set when the instance spans a bridge to another domain.
  std::optional<DomainId> remote_domain;
  /// Domains whose nodes the instance may use.
  std::set<DomainId> domains;
  /// Broker node holding the model, the origin of any stage shipment.
  NodeId model_source;
  bool privacy_split = false;
  bool suspended = false;
  std::uint32_t repairs = 0;
};

/// A stage as it actually executes: one per distinct (spec, node, inputs)
/// across all merged instances.
struct ExecStage {
  std::string key;
  ModelId model_id;
  StageSpec spec;
  NodeId node;
  /// Keys of the stages feeding this one, sorted.
  std::vector<std::string> pred_keys;
  std::vector<std::string> succ_keys;
  /// Entry stages only: what they consume and from whom.
  std::optional<TopicFilter> entry_filter;
  NodeId publisher;
  /// Instances whose sink is this stage; each gets its own delivery.
  std::vector<InstanceId> deliveries;
  /// Every instance running through this stage.
  std::vector<InstanceId> members;

  bool is_entry() const { return pred_keys.empty(); }
};

struct ExecutionGraph {
  /// Keyed by ExecStage::key.
  std::map<std::string, ExecStage> stages;
  /// Per instance: pipeline stage id -> exec key.
  std::map<InstanceId, std::map<StageId, std::string>> stage_keys;

  const ExecStage* find(const std::string& key) const;
  /// Entry stages, in key order.
  std::vector<const ExecStage*> entries() const;
};

/// Instantiates every common prefix once. Two instance stages merge when
/// they have the same model, identical StageSpec, the same node and merged
/// inputs (for entries: the same publisher and filter); downstream stages
/// whose inputs diverge stay separate. Suspended instances are skipped.
ExecutionGraph merge_shared_prefix(std::span<const PipelineInstance> instances);

/// Stage ids of the longest common prefix of two pipelines: stages that
/// match by spec, by inputs and by entry binding, walked in topological
/// order of `a`.
std::vector<StageId> common_prefix(const PipelineSpec& a, const PipelineSpec& b);

}  // namespace nps::place
