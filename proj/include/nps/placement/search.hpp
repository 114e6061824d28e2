#pragma once

#include <cstdint>
#include <set>

#include "nps/placement/cost.hpp"

namespace nps::place {

/// Largest |up nodes|^|unpinned stages| the oracle will enumerate.
inline constexpr std::uint64_t kOracleLimit = 1'000'000;

/// Exhaustive search over every assignment of unpinned stages to up nodes.
/// The winner minimizes the objective; ties go to the assignment whose
/// stages (in stage-list order) sit closer to their publisher, then to the
/// smaller node ids. Candidates are scored in parallel; the result is
/// identical to place_oracle_serial for any thread count.
///
/// Throws Error{SearchSpaceTooLarge} and Error{NoFeasiblePlacement}.
Placement place_oracle(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                       const Objective& o, const Endpoints& ends);
Placement place_oracle(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                       const Objective& o, const NodeId& publisher, const NodeId& subscriber);

/// Single-threaded reference for place_oracle.
Placement place_oracle_serial(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                              const Objective& o, const Endpoints& ends);

struct UpstreamOptions {
  /// Stages whose node is already decided; kept as given.
  std::map<StageId, NodeId> fixed;
};

/// Greedy most-upstream placement along publisher -> subscriber routes,
/// refined by single-stage moves that strictly lower the objective.
///
/// Throws Error{NoFeasiblePlacement}.
Placement place_upstream(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                         const Objective& o, const Endpoints& ends,
                         const UpstreamOptions& options = {});
Placement place_upstream(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                         const Objective& o, const NodeId& publisher, const NodeId& subscriber);

/// Every unpinned stage on the subscriber; pins honored where they resolve.
Placement place_baseline_subscriber(const PipelineSpec& p, const Topology& t,
                                    const Endpoints& ends);
Placement place_baseline_subscriber(const PipelineSpec& p, const Topology& t,
                                    const NodeId& publisher, const NodeId& subscriber);

/// Re-places the stages hosted on `failed` nodes, keeping every other
/// assignment. `t` may or may not already mark the failed nodes down.
///
/// Throws Error{InstanceTerminated} when a publisher or the subscriber
/// failed, Error{NoFeasiblePlacement} when no repair exists.
Placement replan(const Placement& pl, const std::set<NodeId>& failed, const PipelineSpec& p,
                 const Topology& t, const WorkloadSpec& w, const Objective& o,
                 const Endpoints& ends);
Placement replan(const Placement& pl, const std::set<NodeId>& failed, const PipelineSpec& p,
                 const Topology& t, const WorkloadSpec& w, const Objective& o,
                 const NodeId& publisher, const NodeId& subscriber);

}  // namespace nps::place
