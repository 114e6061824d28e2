#include "nps/harness/metrics.hpp"

#include <sstream>

#include "json.hpp"

#include "nps/core/error.hpp"

namespace nps::sim {

using json = nlohmann::ordered_json;

void MetricsReport::sum_totals(std::uint64_t injected, std::uint64_t lost_in_transit) {
  totals = Totals{};
  totals.injected = injected;
  totals.lost_in_transit = lost_in_transit;
  for (const auto& s : subscriptions) {
    totals.delivered += s.delivered;
    totals.duplicates_suppressed += s.duplicates_suppressed;
    totals.dropped += s.dropped;
    totals.filtered += s.filtered;
  }
  for (const auto& l : links) {
    totals.link_bytes += l.bytes;
    if (l.bridge) totals.bridge_bytes += l.bytes;
  }
  for (const auto& s : stages) totals.stage_executions += s.executions;
  for (const auto& i : instances) {
    totals.repairs += i.repairs;
    totals.suspended += i.suspended;
  }
}

Format parse_format(std::string_view s) {
  if (s == "json") return Format::Json;
  if (s == "csv") return Format::Csv;
  throw Error(ErrorCode::InvalidArgument, "unknown format '" + std::string(s) + "'");
}

std::string to_json(const MetricsReport& r) {
  json doc;
  doc["duration_ms"] = r.duration_ms;
  doc["seed"] = r.seed;
  doc["subscriptions"] = json::array();
  for (const auto& s : r.subscriptions)
    doc["subscriptions"].push_back({{"id", s.id},
                                    {"delivered", s.delivered},
                                    {"duplicates_suppressed", s.duplicates_suppressed},
                                    {"dropped", s.dropped},
                                    {"filtered", s.filtered},
                                    {"injected", s.injected},
                                    {"inputs_delivered", s.inputs_delivered},
                                    {"in_flight_at_end", s.in_flight_at_end},
                                    {"latency_mean_ms", s.latency_mean_ms},
                                    {"latency_p95_ms", s.latency_p95_ms},
                                    {"applied_versions", s.applied_versions}});
  doc["links"] = json::array();
  for (const auto& l : r.links)
    doc["links"].push_back({{"a", l.a}, {"b", l.b}, {"bytes", l.bytes}, {"kb", l.kb()}, {"bridge", l.bridge}});
  doc["nodes"] = json::array();
  for (const auto& n : r.nodes)
    doc["nodes"].push_back(
        {{"id", n.id}, {"busy_us", n.busy_us}, {"busy_ms", n.busy_ms()}, {"utilization", n.utilization}});
  doc["stages"] = json::array();
  for (const auto& s : r.stages)
    doc["stages"].push_back({{"key", s.key},
                             {"model", s.model},
                             {"stage", s.stage},
                             {"node", s.node},
                             {"executions", s.executions}});
  doc["instances"] = json::array();
  for (const auto& i : r.instances)
    doc["instances"].push_back({{"id", i.id},
                                {"sub", i.sub},
                                {"repairs", i.repairs},
                                {"suspended", i.suspended},
                                {"recovery_time_ms", i.recovery_time_ms},
                                {"repair_delay_ms", i.repair_delay_ms}});
  const auto& t = r.totals;
  doc["totals"] = {{"injected", t.injected},
                   {"delivered", t.delivered},
                   {"duplicates_suppressed", t.duplicates_suppressed},
                   {"dropped", t.dropped},
                   {"filtered", t.filtered},
                   {"link_bytes", t.link_bytes},
                   {"link_kb", static_cast<double>(t.link_bytes) / 1000.0},
                   {"bridge_bytes", t.bridge_bytes},
                   {"bridge_kb", static_cast<double>(t.bridge_bytes) / 1000.0},
                   {"stage_executions", t.stage_executions},
                   {"repairs", t.repairs},
                   {"suspended", t.suspended},
                   {"lost_in_transit", t.lost_in_transit}};
  return doc.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(1 + static_cast<std::size_t>(std::count(text.begin(),
                                                             text.begin() + static_cast<std::ptrdiff_t>(std::min(e.byte, text.size())),
                                                             '\n')),
                     e.what());
  }
  try {
    MetricsReport r;
    r.duration_ms = doc.at("duration_ms").get<std::int64_t>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& s : doc.at("subscriptions")) {
      SubscriptionMetrics m;
      m.id = s.at("id").get<std::string>();
      m.delivered = s.at("delivered").get<std::uint64_t>();
      m.duplicates_suppressed = s.at("duplicates_suppressed").get<std::uint64_t>();
      m.dropped = s.at("dropped").get<std::uint64_t>();
      m.filtered = s.at("filtered").get<std::uint64_t>();
      m.injected = s.at("injected").get<std::uint64_t>();
      m.inputs_delivered = s.at("inputs_delivered").get<std::uint64_t>();
      m.in_flight_at_end = s.at("in_flight_at_end").get<std::uint64_t>();
      m.latency_mean_ms = s.at("latency_mean_ms").get<double>();
      m.latency_p95_ms = s.at("latency_p95_ms").get<double>();
      m.applied_versions = s.at("applied_versions").get<std::vector<std::uint64_t>>();
      r.subscriptions.push_back(std::move(m));
    }
    for (const auto& l : doc.at("links"))
      r.links.push_back({l.at("a").get<std::string>(), l.at("b").get<std::string>(),
                         l.at("bytes").get<std::uint64_t>(), l.at("bridge").get<bool>()});
    for (const auto& n : doc.at("nodes"))
      r.nodes.push_back({n.at("id").get<std::string>(), n.at("busy_us").get<std::int64_t>(),
                         n.at("utilization").get<double>()});
    for (const auto& s : doc.at("stages"))
      r.stages.push_back({s.at("key").get<std::string>(), s.at("model").get<std::string>(),
                          s.at("stage").get<std::string>(), s.at("node").get<std::string>(),
                          s.at("executions").get<std::uint64_t>()});
    for (const auto& i : doc.at("instances"))
      r.instances.push_back({i.at("id").get<std::string>(), i.at("sub").get<std::string>(),
                             i.at("repairs").get<std::uint32_t>(), i.at("suspended").get<bool>(),
                             i.at("recovery_time_ms").get<double>(), i.at("repair_delay_ms").get<double>()});
    const auto& t = doc.at("totals");
    r.totals.injected = t.at("injected").get<std::uint64_t>();
    r.totals.delivered = t.at("delivered").get<std::uint64_t>();
    r.totals.duplicates_suppressed = t.at("duplicates_suppressed").get<std::uint64_t>();
    r.totals.dropped = t.at("dropped").get<std::uint64_t>();
    r.totals.filtered = t.at("filtered").get<std::uint64_t>();
    r.totals.link_bytes = t.at("link_bytes").get<std::uint64_t>();
    r.totals.bridge_bytes = t.at("bridge_bytes").get<std::uint64_t>();
    r.totals.stage_executions = t.at("stage_executions").get<std::uint64_t>();
    r.totals.repairs = t.at("repairs").get<std::uint64_t>();
    r.totals.suspended = t.at("suspended").get<std::uint64_t>();
    r.totals.lost_in_transit = t.at("lost_in_transit").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("metrics document: ") + e.what());
  }
}

namespace {

// Shortest text that reads back as the same double.
std::string num(double v) { return json(v).dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "# subscription\n"
     << "entity,delivered,duplicates_suppressed,dropped,filtered,injected,inputs_delivered,"
        "in_flight_at_end,latency_mean_ms,latency_p95_ms,applied_versions\n";
  for (const auto& s : r.subscriptions) {
    std::string versions;
    for (std::size_t i = 0; i < s.applied_versions.size(); ++i)
      versions += (i ? ";" : "") + std::to_string(s.applied_versions[i]);
    os << csv_field(s.id) << ',' << s.delivered << ',' << s.duplicates_suppressed << ',' << s.dropped
       << ',' << s.filtered << ',' << s.injected << ',' << s.inputs_delivered << ','
       << s.in_flight_at_end << ',' << num(s.latency_mean_ms) << ',' << num(s.latency_p95_ms) << ','
       << versions << '\n';
  }
  os << "# link\nentity,bytes,kb,bridge\n";
  for (const auto& l : r.links)
    os << csv_field(l.a + "-" + l.b) << ',' << l.bytes << ',' << num(l.kb()) << ','
       << (l.bridge ? "true" : "false") << '\n';
  os << "# node\nentity,busy_ms,utilization\n";
  for (const auto& n : r.nodes) os << csv_field(n.id) << ',' << num(n.busy_ms()) << ',' << num(n.utilization) << '\n';
  const auto& t = r.totals;
  os << "# totals\n"
     << "entity,injected,delivered,duplicates_suppressed,dropped,filtered,link_kb,bridge_kb,"
        "stage_executions,repairs,suspended,lost_in_transit\n"
     << "totals," << t.injected << ',' << t.delivered << ',' << t.duplicates_suppressed << ','
     << t.dropped << ',' << t.filtered << ',' << num(static_cast<double>(t.link_bytes) / 1000.0) << ','
     << num(static_cast<double>(t.bridge_bytes) / 1000.0) << ',' << t.stage_executions << ','
     << t.repairs << ',' << t.suspended << ',' << t.lost_in_transit << '\n';
  return os.str();
}

std::string emit(const MetricsReport& r, Format f) { return f == Format::Json ? to_json(r) : to_csv(r); }

}  // namespace nps::sim
