#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nps/core/types.hpp"

namespace nps::sim {

struct SubscriptionMetrics {
  SubId id;
  /// Deliveries that carried at least one publication not seen before.
  std::uint64_t delivered = 0;
  std::uint64_t duplicates_suppressed = 0;
  /// Publications evicted from the retransmit buffer and never delivered.
  std::uint64_t dropped = 0;
  /// Publications discarded by a filter or replaced inside a barrier.
  std::uint64_t filtered = 0;
  /// Matching publications injected while the subscription existed.
  std::uint64_t injected = 0;
  /// Distinct injected publications that reached the subscriber.
  std::uint64_t inputs_delivered = 0;
  std::uint64_t in_flight_at_end = 0;
  double latency_mean_ms = 0;
  double latency_p95_ms = 0;
  /// Model versions applied, in application order.
  std::vector<std::uint64_t> applied_versions;

  friend bool operator==(const SubscriptionMetrics&, const SubscriptionMetrics&) = default;
};

struct LinkMetrics {
  NodeId a;
  NodeId b;
  std::uint64_t bytes = 0;
  bool bridge = false;

  double kb() const { return static_cast<double>(bytes) / 1000.0; }
  friend bool operator==(const LinkMetrics&, const LinkMetrics&) = default;
};

struct NodeMetrics {
  NodeId id;
  std::int64_t busy_us = 0;
  double utilization = 0;

  double busy_ms() const { return static_cast<double>(busy_us) / 1000.0; }
  friend bool operator==(const NodeMetrics&, const NodeMetrics&) = default;
};

struct StageMetrics {
  std::string key;
  ModelId model;
  StageId stage;
  NodeId node;
  std::uint64_t executions = 0;

  friend bool operator==(const StageMetrics&, const StageMetrics&) = default;
};

struct InstanceMetrics {
  InstanceId id;
  SubId sub;
  std::uint32_t repairs = 0;
  bool suspended = false;
  /// Fault to first fresh delivery after the repair; 0 if never affected.
  double recovery_time_ms = 0;
  /// Fault to the start of the broker's repair; 0 if never affected.
  double repair_delay_ms = 0;

  friend bool operator==(const InstanceMetrics&, const InstanceMetrics&) = default;
};

struct Totals {
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t duplicates_suppressed = 0;
  std::uint64_t dropped = 0;
  std::uint64_t filtered = 0;
  std::uint64_t link_bytes = 0;
  std::uint64_t bridge_bytes = 0;
  std::uint64_t stage_executions = 0;
  std::uint64_t repairs = 0;
  std::uint64_t suspended = 0;
  std::uint64_t lost_in_transit = 0;

  friend bool operator==(const Totals&, const Totals&) = default;
};

struct MetricsReport {
  std::int64_t duration_ms = 0;
  std::uint64_t seed = 0;
  std::vector<SubscriptionMetrics> subscriptions;
  std::vector<LinkMetrics> links;
  std::vector<NodeMetrics> nodes;
  std::vector<StageMetrics> stages;
  std::vector<InstanceMetrics> instances;
  Totals totals;

  /// Recomputes `totals` from the per-entity parts.
  void sum_totals(std::uint64_t injected, std::uint64_t lost_in_transit);

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

enum class Format { Json, Csv };
Format parse_format(std::string_view s);

std::string to_json(const MetricsReport& r);
/// Throws ParseError on malformed input.
MetricsReport report_from_json(std::string_view text);
/// One section per entity class (subscription, link, node, totals), each
/// opened by a "# <class>" line and an "entity,..." header row.
std::string to_csv(const MetricsReport& r);
std::string emit(const MetricsReport& r, Format f);

}  // namespace nps::sim
