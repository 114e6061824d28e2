#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "nps/core/types.hpp"
#include "nps/operators/operators.hpp"
#include "nps/placement/merge.hpp"
#include "nps/placement/search.hpp"

namespace nps::broker {

inline constexpr std::size_t kDefaultBufferCapacity = 128;

/// Scenario-declared fact that `publisher` emits on `topic`.
struct TopicBinding {
  Topic topic;
  NodeId publisher;
};

enum class PlacementPolicy { Upstream, Baseline, Oracle };

/// The world a broker resolves against. `topology` is the live,
/// multi-domain topology; the broker restricts it per instance.
struct Context {
  const Topology& topology;
  const place::WorkloadSpec& workload;
  const place::Objective& objective;
  const std::vector<TopicBinding>& bindings;
  PlacementPolicy policy = PlacementPolicy::Upstream;
};

/// Run an entry stage on `pub` at `node`.
struct StageTask {
  std::string exec_key;
  NodeId node;
  Publication pub;
};

/// Hand `pub` to a subscriber, travelling from node `from`.
struct Delivery {
  SubId sub_id;
  NodeId subscriber;
  Publication pub;
  NodeId from;
};

using Action = std::variant<StageTask, Delivery>;

class Broker;

struct PeerLink {
  DomainId domain;
  /// Link between the two border nodes.
  LinkDescriptor bridge;
  const Broker* peer = nullptr;
};

struct RepairPlan {
  std::vector<InstanceId> affected;
  std::map<InstanceId, place::Placement> placements;
  std::vector<InstanceId> suspended;
  std::vector<InstanceId> resumed;
  /// Unacked buffer contents, per subscription, to send again.
  std::map<SubId, std::vector<Publication>> replay;

  bool empty() const {
    return affected.empty() && resumed.empty() && replay.empty();
  }
};

struct DiscoverQuery {
  std::optional<TaskTag> task;
  std::optional<ModelId> model_id;
};

/// What changed in the topology. Used by on_topology_event to decide which
/// instances and buffers are affected.
struct TopologyEvent {
  enum class Kind { NodeDown, NodeUp, LinkDown, LinkUp };
  Kind kind;
  NodeId a;
  NodeId b;  // link events only
};

struct TrainingOutcome {
  bool stale = false;
  std::optional<ops::ModelUpdate> aggregated;
  std::vector<Delivery> deliveries;
};

/// Per-domain broker. Every public method is one state transition; callers
/// serialize access.
class Broker {
 public:
  Broker(DomainId domain, NodeId node, std::size_t buffer_capacity = kDefaultBufferCapacity);

  const DomainId& domain() const { return domain_; }
  const NodeId& node() const { return node_; }

  // -- model registry -------------------------------------------------------

  /// Adds or upgrades a model. An upgrade produces one update delivery per
  /// ModelUpdate subscription whose min_version it satisfies.
  /// Throws Error{StaleVersion} unless the version is new and higher.
  std::vector<Delivery> register_model(ModelDescriptor m, SimTime now = SimTime{0});
  std::vector<ModelDescriptor> discover(const DiscoverQuery& q) const;
  const ModelDescriptor* model(const ModelId& id) const;

  // -- subscriptions --------------------------------------------------------

  /// Records the subscription. Inference subscriptions are resolved into a
  /// placed pipeline instance immediately; ModelUpdate subscriptions get the
  /// current version if it is recent enough.
  ///
  /// Throws Error{DuplicateSubscription}, Error{UnknownModel},
  /// Error{NoPublisher}, Error{AmbiguousPublisher},
  /// Error{NoFeasiblePlacement}, Error{BrokerUnavailable}.
  std::vector<Delivery> subscribe(const Subscription& sub, const Context& ctx);

  /// Data deliveries and entry stage tasks for one publication. A repeated
  /// or older (source, topic, seq) yields nothing.
  std::vector<Action> on_publish(const Publication& p);

  /// Cumulative ack across every stream of the subscription.
  /// Throws Error{UnknownSubscription}.
  void on_ack(const SubId& sub, std::uint64_t seq);
  /// Cumulative ack of one (source, topic) stream up to key.seq.
  void on_ack(const SubId& sub, const PublicationKey& key);

  /// Throws Error{DuplicatePeer}.
  void link_peer(PeerLink peer);
  const std::vector<PeerLink>& peers() const { return peers_; }

  /// Builds (without recording) an instance for a model that only a peer
  /// holds. Throws Error{UnknownModel} when no reachable peer has it.
  place::PipelineInstance resolve_remote(const Subscription& sub, const Context& ctx) const;

  // -- robustness -----------------------------------------------------------

  /// Repairs every instance that had a stage on `failed` or routed through
  /// it; instances that cannot be repaired are suspended.
  RepairPlan on_node_failure(const NodeId& failed, const Context& ctx);
  /// General form covering recoveries and link changes. ctx.topology must
  /// already reflect the event.
  RepairPlan on_topology_event(const TopologyEvent& ev, const Context& ctx);

  /// Where a replayed publication re-enters: the entry stage of the
  /// subscription's instance, or a direct delivery for other kinds.
  std::vector<Action> replay_actions(const SubId& sub, const Publication& p) const;

  /// A broker whose node is down resolves nothing until it is back.
  bool available() const { return available_; }
  void set_available(bool up) { available_ = up; }

  // -- training -------------------------------------------------------------

  /// Declares the nodes whose updates are averaged into each new version.
  void expect_trainers(const ModelId& model, std::set<NodeId> trainers);
  /// Buffers one trainer's delta. Once every expected trainer has offered
  /// the same version, the mean is applied to the params and registered.
  /// Versions at or below the registry's are counted and ignored.
  TrainingOutcome on_training_update(const NodeId& trainer, const ops::ModelUpdate& u,
                                     SimTime now = SimTime{0});

  // -- inspection -----------------------------------------------------------

  const std::map<SubId, Subscription>& subscriptions() const { return subs_; }
  const std::map<InstanceId, place::PipelineInstance>& instances() const { return instances_; }
  const place::PipelineInstance* instance_for(const SubId& sub) const;
  const place::ExecutionGraph& exec_graph() const { return graph_; }
  std::vector<Publication> buffer(const SubId& sub) const;
  std::uint64_t dropped(const SubId& sub) const;
  /// Every buffer eviction so far, in order.
  const std::vector<std::pair<SubId, PublicationKey>>& evictions() const { return evictions_; }
  std::uint64_t stale_updates() const { return stale_updates_; }
  const std::vector<ops::ModelUpdate>& aggregation_log() const { return aggregation_log_; }

  static Topic update_topic(const ModelId& model);

 private:
  struct SubState {
    std::deque<Publication> buffer;
    std::uint64_t dropped = 0;
    std::uint64_t last_version = 0;
  };

  place::PipelineInstance build_instance(const Subscription& sub, const ModelDescriptor& m,
                                         const DomainId& home, const NodeId& home_node,
                                         const Context& ctx) const;
  place::Placement place_instance(const place::PipelineInstance& inst, const Topology& t,
                                  const Context& ctx) const;
  Topology instance_topology(const place::PipelineInstance& inst, const Topology& t) const;
  bool instance_uses(const place::PipelineInstance& inst, const Topology& t,
                     const TopologyEvent& ev) const;
  bool data_sub_uses(const SubId& sub, const Topology& t, const TopologyEvent& ev) const;
  void buffer_publication(const SubId& sub, const Publication& p);
  Delivery update_delivery(const SubId& sub, const Subscription& s, const ModelDescriptor& m,
                           SimTime now);
  void rebuild_graph();

  DomainId domain_;
  NodeId node_;
  std::size_t capacity_;
  bool available_ = true;

  std::map<ModelId, ModelDescriptor> models_;
  std::map<SubId, Subscription> subs_;
  std::map<SubId, SubState> sub_state_;
  std::map<InstanceId, place::PipelineInstance> instances_;
  std::map<SubId, InstanceId> instance_of_;
  std::vector<PeerLink> peers_;
  std::map<std::pair<std::string, std::string>, std::uint64_t> watermarks_;
  place::ExecutionGraph graph_;
  std::vector<std::pair<SubId, PublicationKey>> evictions_;

  std::map<ModelId, std::set<NodeId>> trainers_;
  std::map<ModelId, std::map<std::uint64_t, std::map<NodeId, ops::ModelUpdate>>> pending_updates_;
  std::vector<ops::ModelUpdate> aggregation_log_;
  std::uint64_t stale_updates_ = 0;
};

}  // namespace nps::broker
