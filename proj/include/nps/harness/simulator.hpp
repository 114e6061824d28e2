#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nps/harness/metrics.hpp"
#include "nps/harness/scenario.hpp"

namespace nps::sim {

/// One link traversal, recorded when the hop starts.
struct TraceEntry {
  std::int64_t t_us = 0;
  NodeId from;
  NodeId to;
  PayloadTag tag = PayloadTag::Raw;
  std::uint64_t bytes = 0;
  std::string topic;
};

/// A broker repair triggered by a topology change.
struct RepairRecord {
  DomainId domain;
  InstanceId instance;
  std::int64_t fault_us = 0;
  std::int64_t repair_us = 0;
};

struct RunOptions {
  /// Overrides the scenario's placement policy.
  std::optional<broker::PlacementPolicy> policy;
  bool trace = false;
};

struct RunDetail {
  MetricsReport report;
  std::vector<TraceEntry> trace;
  /// Per subscription: every injected matching publication and its time.
  std::map<SubId, std::vector<std::pair<PublicationKey, std::int64_t>>> injected;
  /// Per subscription: publications in the order they first reached it.
  std::map<SubId, std::vector<PublicationKey>> first_seen;
  std::vector<RepairRecord> repairs;
  /// Averaged updates the brokers applied, in order, and the stale
  /// training deltas they ignored.
  std::vector<ops::ModelUpdate> aggregations;
  std::uint64_t stale_updates = 0;
  /// Placement of each instance at t = 0 and at the end.
  std::map<InstanceId, place::Placement> initial_placements;
  std::map<InstanceId, place::Placement> final_placements;
};

/// Deterministic discrete-event run. Equal (scenario, seed) give equal
/// reports, bit for bit. Throws nps::Error when a subscription cannot be
/// resolved at start-up.
MetricsReport run(const Scenario& sc, std::uint64_t seed);
RunDetail run_detailed(const Scenario& sc, std::uint64_t seed, const RunOptions& options = {});

/// An instance as resolved at start-up, priced on the full topology.
struct PlannedInstance {
  DomainId domain;
  place::PipelineInstance instance;
  place::CostReport cost;
};

/// Resolves every subscription at t = 0 under `policy` without running.
/// Throws nps::Error like run().
std::vector<PlannedInstance> plan(const Scenario& sc, broker::PlacementPolicy policy);

struct Comparison {
  MetricsReport upstream;
  MetricsReport baseline;
};

/// The same scenario and seed, once per placement policy.
Comparison compare(const Scenario& sc, std::uint64_t seed);

/// One report per seed, runs spread over OpenMP threads. Identical to
/// run_sweep_serial.
std::vector<MetricsReport> run_sweep(const Scenario& sc, std::span<const std::uint64_t> seeds);
std::vector<MetricsReport> run_sweep_serial(const Scenario& sc, std::span<const std::uint64_t> seeds);

}  // namespace nps::sim
