#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nps/broker/broker.hpp"
#include "nps/core/types.hpp"
#include "nps/placement/cost.hpp"

namespace nps::sim {

/// How one concrete topic is published.
struct TopicWorkload {
  std::uint64_t size_bytes = 1;
  Rational rate_per_s{1};
  /// Fixed period 1/rate instead of Poisson arrivals.
  bool periodic = false;
  std::int64_t start_ms = 0;
  std::optional<std::uint64_t> count;
  std::uint32_t payload_len = 4;
};

/// Trainers that each send one delta per round; the model's home broker
/// averages a round once every trainer's delta has arrived.
struct TrainingPlan {
  ModelId model;
  std::vector<NodeId> trainers;
  std::int64_t start_ms = 0;
  std::int64_t period_ms = 1000;
  std::uint32_t rounds = 1;
  std::uint32_t delta_len = 0;  // 0: length of the model params
  /// From the second round on, the first trainer also re-sends its delta
  /// of the previous round.
  bool resend_stale = false;
};

struct FaultEvent {
  enum class Kind { NodeDown, NodeUp, LinkDown, LinkUp };
  std::int64_t at_ms = 0;
  Kind kind = Kind::NodeDown;
  NodeId a;
  NodeId b;  // link events only
};

struct BrokerSite {
  DomainId domain;
  NodeId node;
};

struct ScenarioModel {
  ModelDescriptor model;
  /// Domains whose broker registers the model.
  std::set<DomainId> domains;
};

struct SimConfig {
  std::int64_t duration_ms = 1000;
  std::uint64_t seed = 0;
  std::int64_t heartbeat_ms = 50;
  std::uint32_t heartbeat_misses = 3;
  std::size_t buffer_capacity = broker::kDefaultBufferCapacity;
  broker::PlacementPolicy placement = broker::PlacementPolicy::Upstream;
};

struct Scenario {
  Topology topology;
  std::vector<BrokerSite> brokers;
  std::vector<ScenarioModel> models;
  std::vector<broker::TopicBinding> bindings;
  std::vector<Subscription> subscriptions;
  std::map<std::string, TopicWorkload> workload;
  std::vector<TrainingPlan> training;
  std::vector<FaultEvent> faults;
  place::Objective objective;
  SimConfig sim;

  place::WorkloadSpec workload_spec() const;
  const BrokerSite* broker_for(const DomainId& domain) const;
  const ScenarioModel* find_model(const ModelId& id) const;
};

/// Parses and validates a scenario document.
/// Throws ParseError{line} for malformed JSON and ValidationError{path}
/// for everything else.
Scenario load_scenario(std::string_view text);
Scenario load_scenario_file(const std::string& path);

/// Re-checks the referential rules on a scenario built in code.
/// Throws ValidationError.
void validate_scenario(const Scenario& sc);

std::string to_string(broker::PlacementPolicy p);
broker::PlacementPolicy parse_policy(std::string_view s);

}  // namespace nps::sim
