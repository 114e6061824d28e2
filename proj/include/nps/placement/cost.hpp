#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nps/core/pipeline.hpp"
#include "nps/core/routing.hpp"
#include "nps/core/types.hpp"

namespace nps::place {

/// J = alpha * latency_ms + beta * bytes_kb.
struct Objective {
  Rational alpha{1};
  Rational beta{1, 10};
};

/// Throws Error{InvalidArgument} on negative weights or alpha = beta = 0.
void check_objective(const Objective& o);

struct TopicLoad {
  std::uint64_t size_bytes = 1;
  Rational rate_per_s{1};
};

/// Input size and rate per published topic.
struct WorkloadSpec {
  std::map<std::string, TopicLoad> topics;
};

struct Placement {
  std::map<StageId, NodeId> assignment;
  friend bool operator==(const Placement&, const Placement&) = default;
};

/// Where data enters and leaves one pipeline instance.
struct Endpoints {
  /// Entry stage -> publishing node.
  std::map<StageId, NodeId> publishers;
  NodeId subscriber;

  /// Every entry of `p` fed by the same publisher.
  static Endpoints single(const PipelineSpec& p, const NodeId& publisher, const NodeId& subscriber);
};

enum class PlacementRule {
  Unassigned,
  UnknownNode,
  NodeDown,
  MemoryExceeded,
  CpuExceeded,
  AcceleratorMissing,
  PinViolated,
  NoRoute,
};

std::string_view to_string(PlacementRule rule);

struct PlacementViolation {
  PlacementRule rule;
  std::string subject;
  std::string detail;
};

struct CostReport {
  Rational latency_ms{0};
  Rational bytes_kb{0};
  Rational objective_value{0};
  bool feasible = true;
  std::vector<PlacementViolation> violations;
};

/// Output bytes of every stage for a uniform entry size.
std::map<StageId, std::uint64_t> stage_sizes(const PipelineSpec& p, std::uint64_t input_size);
/// Output bytes of every stage given per-entry input sizes.
std::map<StageId, std::uint64_t> stage_sizes(const PipelineSpec& p,
                                             const std::map<StageId, std::uint64_t>& entry_sizes);

CostReport cost(const Placement& pl, const PipelineSpec& p, const Topology& t,
                const WorkloadSpec& w, const Objective& o, const Endpoints& ends);
CostReport cost(const Placement& pl, const PipelineSpec& p, const Topology& t,
                const WorkloadSpec& w, const Objective& o, const NodeId& publisher,
                const NodeId& subscriber);

std::vector<PlacementViolation> feasible(const Placement& pl, const PipelineSpec& p,
                                         const Topology& t, const WorkloadSpec& w,
                                         const Endpoints& ends);
std::vector<PlacementViolation> feasible(const Placement& pl, const PipelineSpec& p,
                                         const Topology& t, const WorkloadSpec& w,
                                         const NodeId& publisher, const NodeId& subscriber);

/// Index-compiled form of one placement problem. Every search evaluates
/// candidate assignments through this class; `cost` and `feasible` are thin
/// wrappers over it. All query methods are const and safe to call from
/// several threads at once.
class CostModel {
 public:
  CostModel(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w, const Objective& o,
            const Endpoints& ends);
  CostModel(const CostModel&) = delete;
  CostModel& operator=(const CostModel&) = delete;

  static constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);

  const PipelineGraph& graph() const { return graph_; }
  std::size_t stage_count() const { return graph_.size(); }
  /// Every topology node, sorted by id.
  const std::vector<NodeId>& nodes() const { return nodes_; }
  std::size_t node_index(const NodeId& id) const;
  bool node_up(std::size_t n) const { return up_[n]; }
  std::uint64_t node_mem(std::size_t n) const { return node_mem_[n]; }
  const Rational& node_capacity(std::size_t n) const { return node_cap_[n]; }
  bool node_accelerator(std::size_t n) const { return node_accel_[n]; }

  /// Node a pinned stage must occupy, or nullopt for unpinned stages and
  /// for pins that cannot be resolved (AtPublisher on a stage fed by
  /// several publishers, AtNode on an unknown node).
  std::optional<std::size_t> pin_target(std::size_t stage) const;
  bool pinned(std::size_t stage) const { return is_pinned(graph_.stage(stage).pin); }
  /// Publisher node of the lowest-index entry upstream of `stage`.
  std::size_t primary_publisher(std::size_t stage) const { return primary_pub_[stage]; }
  std::size_t entry_publisher(std::size_t entry_stage) const { return entry_pub_[entry_stage]; }
  std::size_t subscriber() const { return subscriber_; }

  const RouteInfo* route(std::size_t from, std::size_t to) const {
    return routes_[from * nodes_.size() + to];
  }

  std::uint64_t output_bytes(std::size_t stage) const { return out_bytes_[stage]; }
  /// Compute-units per ms the stage demands at the workload rate.
  const Rational& load(std::size_t stage) const { return load_[stage]; }

  /// Full report for an index assignment (kUnassigned allowed).
  CostReport evaluate(std::span<const std::size_t> assign) const;
  /// Objective value when the assignment is feasible, nullopt otherwise.
  std::optional<Rational> objective_if_feasible(std::span<const std::size_t> assign) const;
  std::vector<PlacementViolation> violations(std::span<const std::size_t> assign) const;

  std::vector<std::size_t> to_indices(const Placement& pl) const;
  Placement to_placement(std::span<const std::size_t> assign) const;

 private:
  struct Flow {
    std::size_t from_stage;  // kUnassigned for an entry flow
    std::size_t to_stage;    // kUnassigned for the delivery flow
    std::uint64_t bytes;
  };

  bool resources_ok(std::span<const std::size_t> assign,
                    std::vector<PlacementViolation>* out) const;
  // Returns false when some transfer has no route.
  bool latency_and_bytes(std::span<const std::size_t> assign, Rational& latency,
                         Rational& bytes_kb, std::vector<PlacementViolation>* out) const;

  PipelineGraph graph_;
  Objective objective_;
  std::vector<NodeId> nodes_;
  std::map<NodeId, std::size_t> node_index_;
  std::vector<bool> up_;
  std::vector<std::uint64_t> node_mem_;
  std::vector<Rational> node_cap_;
  std::vector<bool> node_accel_;
  std::vector<const RouteInfo*> routes_;
  RouteTable table_;

  std::vector<std::size_t> entry_pub_;    // per stage; kUnassigned for non-entries
  std::vector<std::size_t> primary_pub_;  // per stage
  std::vector<std::optional<std::size_t>> pin_target_;
  std::size_t subscriber_ = kUnassigned;
  std::vector<std::uint64_t> entry_bytes_;  // input bytes for entries
  std::vector<std::uint64_t> out_bytes_;
  std::vector<Rational> load_;
  std::vector<Rational> compute_ms_;  // [stage * N + node]
  std::vector<Flow> flows_;
};

}  // namespace nps::place
