#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nps/core/types.hpp"

namespace nps {

enum class PipelineRule {
  EmptyPipeline,
  DuplicateStageId,
  InvalidStageId,
  InvalidParameter,
  InvalidTrigger,
  UnknownEdgeEndpoint,
  SelfLoop,
  DuplicateEdge,
  CycleDetected,
  NoSink,
  MultipleSinks,
  SinkMismatch,
  UnknownBindingStage,
  BindingOnNonEntry,
  UnboundEntry,
  UnreachableStage,
  FunnelWithoutInput,
  BarrierArityMismatch,
  NonFunnelFanIn,
};

std::string_view to_string(PipelineRule rule);

struct PipelineViolation {
  PipelineRule rule;
  std::string subject;  // stage id or "a->b" edge
  std::string detail;
};

/// Every broken PipelineSpec invariant, in a deterministic order.
/// An empty result means the pipeline is usable by placement and the
/// simulator.
std::vector<PipelineViolation> validate_pipeline(const PipelineSpec& p);

/// Index view over a validated pipeline. Construction throws
/// ValidationError if validate_pipeline reports anything.
class PipelineGraph {
 public:
  explicit PipelineGraph(PipelineSpec spec);

  const PipelineSpec& spec() const { return spec_; }
  std::size_t size() const { return spec_.stages.size(); }
  const StageSpec& stage(std::size_t i) const { return spec_.stages[i]; }
  std::size_t index_of(const StageId& id) const;

  const std::vector<std::size_t>& preds(std::size_t i) const { return preds_[i]; }
  const std::vector<std::size_t>& succs(std::size_t i) const { return succs_[i]; }
  /// Kahn order; ties resolved by position in the stage list.
  const std::vector<std::size_t>& topo_order() const { return topo_; }
  const std::vector<std::size_t>& entries() const { return entries_; }
  std::size_t sink() const { return sink_; }
  bool is_entry(std::size_t i) const { return preds_[i].empty(); }

  /// Entry stages from which stage i is reachable (sorted indices).
  const std::vector<std::size_t>& upstream_entries(std::size_t i) const { return upstream_[i]; }

 private:
  PipelineSpec spec_;
  std::vector<std::vector<std::size_t>> preds_;
  std::vector<std::vector<std::size_t>> succs_;
  std::vector<std::vector<std::size_t>> upstream_;
  std::vector<std::size_t> topo_;
  std::vector<std::size_t> entries_;
  std::size_t sink_ = 0;
};

/// Partitions `model.layers` into k contiguous, count-balanced groups and
/// returns the chain pipeline of the groups. Earlier groups absorb the
/// remainder. Stage ids are "<model>.s<i>" (1-based). With privacy_split the
/// first and last stages are pinned to the publisher. The entry stage is
/// bound to `entry_filter`.
///
/// Throws Error{SplitArity} unless 1 <= k <= |layers|.
PipelineSpec split_model(const ModelDescriptor& model, std::uint32_t k, bool privacy_split,
                         const TopicFilter& entry_filter = TopicFilter{"#"});

}  // namespace nps
