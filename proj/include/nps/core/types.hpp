#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nps/core/rational.hpp"
#include "nps/core/topic.hpp"

namespace nps {

using NodeId = std::string;
using DomainId = std::string;
using StageId = std::string;
using ModelId = std::string;
using SubId = std::string;
using InstanceId = std::string;

/// Simulated time. The event core works in whole microseconds.
using SimTime = std::chrono::microseconds;

constexpr SimTime from_ms(std::int64_t ms) { return std::chrono::milliseconds(ms); }

enum class PayloadTag { Raw, Derived };

struct Publication {
  Topic topic{"_"};
  std::string source;
  std::uint64_t seq = 0;
  SimTime ts{0};
  std::uint64_t size_bytes = 1;
  std::vector<double> payload;
  PayloadTag tag = PayloadTag::Raw;
  std::optional<std::string> semantic_tag;

  friend bool operator==(const Publication&, const Publication&) = default;
};

/// (source, topic, seq) identifies a publication for dedup and acks.
struct PublicationKey {
  std::string source;
  std::string topic;
  std::uint64_t seq = 0;

  friend auto operator<=>(const PublicationKey&, const PublicationKey&) = default;
};

PublicationKey key_of(const Publication& p);

enum class TaskTag { Text, Aural, Visual, Telemetry };

struct LayerSpec {
  Rational compute_cost{0};
  std::uint64_t mem_mb = 0;
  Rational selectivity{1};
  bool needs_accelerator = false;
};

/// Names a catalog function plus its numeric parameters, e.g.
/// {"affine", {{"a", 2}, {"b", 1}}}.
struct FnSpec {
  std::string name = "identity";
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }

  friend bool operator==(const FnSpec&, const FnSpec&) = default;
};

struct BarrierPolicy {
  std::vector<StageId> inputs;
  friend bool operator==(const BarrierPolicy&, const BarrierPolicy&) = default;
};
struct CountWindowPolicy {
  std::uint32_t n = 1;
  friend bool operator==(const CountWindowPolicy&, const CountWindowPolicy&) = default;
};
struct TimeWindowPolicy {
  std::int64_t delta_ms = 1;
  friend bool operator==(const TimeWindowPolicy&, const TimeWindowPolicy&) = default;
};
using TriggerPolicy = std::variant<BarrierPolicy, CountWindowPolicy, TimeWindowPolicy>;

struct MappingKind {
  FnSpec fn;
  friend bool operator==(const MappingKind&, const MappingKind&) = default;
};
struct FunnelKind {
  FnSpec fn;
  TriggerPolicy trigger;
  friend bool operator==(const FunnelKind&, const FunnelKind&) = default;
};
struct FilterKind {
  FnSpec predicate;
  friend bool operator==(const FilterKind&, const FilterKind&) = default;
};
using StageKind = std::variant<MappingKind, FunnelKind, FilterKind>;

struct Unpinned {
  friend bool operator==(const Unpinned&, const Unpinned&) = default;
};
struct AtPublisher {
  friend bool operator==(const AtPublisher&, const AtPublisher&) = default;
};
struct AtSubscriber {
  friend bool operator==(const AtSubscriber&, const AtSubscriber&) = default;
};
struct AtNode {
  NodeId node;
  friend bool operator==(const AtNode&, const AtNode&) = default;
};
using Pin = std::variant<Unpinned, AtPublisher, AtSubscriber, AtNode>;

inline bool is_pinned(const Pin& p) { return !std::holds_alternative<Unpinned>(p); }

struct StageSpec {
  StageId id;
  StageKind kind = MappingKind{};
  Rational compute_cost{0};
  std::uint64_t mem_mb = 0;
  Rational selectivity{1};
  bool needs_accelerator = false;
  Pin pin = Unpinned{};

  bool is_funnel() const { return std::holds_alternative<FunnelKind>(kind); }
  bool is_filter() const { return std::holds_alternative<FilterKind>(kind); }

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct PipelineSpec {
  std::vector<StageSpec> stages;
  std::vector<std::pair<StageId, StageId>> edges;
  /// Entry stage -> filter of the publications it consumes.
  std::map<StageId, TopicFilter> source_bindings;
  StageId sink;

  const StageSpec* find(const StageId& id) const;
};

struct ModelDescriptor {
  ModelId id;
  std::uint64_t version = 0;
  TaskTag task = TaskTag::Telemetry;
  std::vector<LayerSpec> layers;
  std::vector<double> params;
  /// Models of AI-powered applications ship a ready-made component graph
  /// instead of being split layer-wise.
  std::optional<PipelineSpec> application;
};

enum class Tier { Device, Edge, Cloud };

struct NodeDescriptor {
  NodeId id;
  Tier tier = Tier::Edge;
  Rational cpu_capacity{1};  // compute units per ms
  std::uint64_t mem_mb = 0;
  bool has_accelerator = false;
  DomainId domain = "default";
};

enum class LinkState { Up, Down };

struct LinkDescriptor {
  NodeId a;
  NodeId b;
  Rational latency_ms{0};
  Rational bandwidth_kb_per_ms{1};
  LinkState state = LinkState::Up;

  bool connects(const NodeId& x, const NodeId& y) const {
    return (a == x && b == y) || (a == y && b == x);
  }
};

using LinkKey = std::pair<NodeId, NodeId>;
/// Canonical (smaller, larger) key for an undirected link.
LinkKey link_key(const NodeId& x, const NodeId& y);

/// Continuum graph plus runtime liveness. Links are stored under their
/// canonical key, so at most one link exists per node pair.
class Topology {
 public:
  void add_node(NodeDescriptor node);
  void add_link(LinkDescriptor link);

  bool has_node(const NodeId& id) const { return nodes_.count(id) != 0; }
  const NodeDescriptor& node(const NodeId& id) const;
  const std::map<NodeId, NodeDescriptor>& nodes() const { return nodes_; }
  const std::map<LinkKey, LinkDescriptor>& links() const { return links_; }
  const LinkDescriptor* link(const NodeId& x, const NodeId& y) const;

  bool node_up(const NodeId& id) const { return has_node(id) && down_.count(id) == 0; }
  void set_node_up(const NodeId& id, bool up);
  /// A link is usable when its state is up and both endpoints are up.
  bool link_usable(const LinkDescriptor& l) const;
  void set_link_state(const NodeId& x, const NodeId& y, LinkState state);

  std::vector<NodeId> up_nodes() const;
  std::set<DomainId> domains() const;
  bool is_bridge(const LinkDescriptor& l) const;

  /// Subgraph induced by the nodes of the given domains.
  Topology restricted_to(const std::set<DomainId>& domains) const;

 private:
  std::map<NodeId, NodeDescriptor> nodes_;
  std::map<LinkKey, LinkDescriptor> links_;
  std::set<NodeId> down_;
};

struct DataSub {
  TopicFilter filter{"#"};
};
struct InferenceSub {
  ModelId model;
  TopicFilter filter{"#"};
  bool privacy_split = false;
  std::uint32_t k = 1;
};
struct ModelUpdateSub {
  ModelId model;
  std::uint64_t min_version = 0;
};
using SubscriptionKind = std::variant<DataSub, InferenceSub, ModelUpdateSub>;

struct Subscription {
  SubId id;
  NodeId subscriber;
  SubscriptionKind kind;
};

std::string_view to_string(Tier t);
std::string_view to_string(TaskTag t);
std::string_view to_string(PayloadTag t);
Tier parse_tier(std::string_view s);
TaskTag parse_task_tag(std::string_view s);

}  // namespace nps
