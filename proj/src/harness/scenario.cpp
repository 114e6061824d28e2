#include "nps/harness/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

#include "nps/core/error.hpp"
#include "nps/core/pipeline.hpp"
#include "nps/core/routing.hpp"
#include "nps/operators/operators.hpp"

namespace nps::sim {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& rule) {
  throw ValidationError(path, rule);
}

std::string field(const std::string& path, std::string_view key) {
  return path + "." + std::string(key);
}
std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

/// Checks that `j` is an object holding every required key and nothing
/// outside required + optional.
void expect_keys(const json& j, const std::string& path,
                 std::initializer_list<std::string_view> required,
                 std::initializer_list<std::string_view> optional = {}) {
  if (!j.is_object()) fail(path, "expected an object");
  for (auto k : required)
    if (!j.contains(std::string(k))) fail(field(path, k), "required key missing");
  for (const auto& [k, v] : j.items()) {
    auto known = [&](std::initializer_list<std::string_view> ks) {
      return std::find(ks.begin(), ks.end(), k) != ks.end();
    };
    if (!known(required) && !known(optional)) fail(field(path, k), "unknown key");
  }
}

const json& array_at(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  return j;
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected a boolean");
  return j.get<bool>();
}

std::uint64_t get_u64(const json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
    fail(path, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::int64_t get_i64(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

/// A number, or a string "n/d" for values without a short decimal form.
Rational get_rational(const json& j, const std::string& path) {
  try {
    if (j.is_number_integer()) return Rational{j.get<std::int64_t>()};
    if (j.is_number_float()) return Rational::from_double(j.get<double>());
    if (j.is_string()) return Rational::parse(j.get<std::string>());
  } catch (const std::exception&) {
    fail(path, "not representable as an exact rational");
  }
  fail(path, "expected a number or an \"n/d\" string");
}

template <class T>
T opt(const json& j, std::string_view key, const std::string& path, T fallback,
      T (*get)(const json&, const std::string&)) {
  auto it = j.find(std::string(key));
  return it == j.end() ? fallback : get(*it, field(path, key));
}

Topic get_topic(const json& j, const std::string& path) {
  try {
    return Topic(get_string(j, path));
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

TopicFilter get_filter(const json& j, const std::string& path) {
  try {
    return TopicFilter(get_string(j, path));
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

FnSpec get_fn(const json& j, const std::string& path) {
  FnSpec fn;
  if (j.is_string()) {
    fn.name = j.get<std::string>();
    return fn;
  }
  expect_keys(j, path, {"name"}, {"params"});
  fn.name = get_string(j["name"], field(path, "name"));
  if (j.contains("params")) {
    const auto p = field(path, "params");
    if (!j["params"].is_object()) fail(p, "expected an object");
    for (const auto& [k, v] : j["params"].items()) {
      if (!v.is_number()) fail(field(p, k), "expected a number");
      fn.params[k] = v.get<double>();
    }
  }
  return fn;
}

// -- topology ---------------------------------------------------------------

NodeDescriptor parse_node(const json& j, const std::string& path) {
  expect_keys(j, path, {"id", "cpu_capacity"}, {"tier", "mem_mb", "has_accelerator", "domain"});
  NodeDescriptor n;
  n.id = get_string(j["id"], field(path, "id"));
  if (j.contains("tier")) {
    try {
      n.tier = parse_tier(get_string(j["tier"], field(path, "tier")));
    } catch (const Error& e) {
      fail(field(path, "tier"), e.what());
    }
  }
  n.cpu_capacity = get_rational(j["cpu_capacity"], field(path, "cpu_capacity"));
  n.mem_mb = opt<std::uint64_t>(j, "mem_mb", path, 0, get_u64);
  n.has_accelerator = opt<bool>(j, "has_accelerator", path, false, get_bool);
  n.domain = opt<std::string>(j, "domain", path, "default", get_string);
  return n;
}

LinkDescriptor parse_link(const json& j, const std::string& path) {
  expect_keys(j, path, {"a", "b", "latency_ms", "bandwidth_kb_per_ms"}, {"state"});
  LinkDescriptor l;
  l.a = get_string(j["a"], field(path, "a"));
  l.b = get_string(j["b"], field(path, "b"));
  l.latency_ms = get_rational(j["latency_ms"], field(path, "latency_ms"));
  l.bandwidth_kb_per_ms = get_rational(j["bandwidth_kb_per_ms"], field(path, "bandwidth_kb_per_ms"));
  if (j.contains("state")) {
    auto s = get_string(j["state"], field(path, "state"));
    if (s == "up") l.state = LinkState::Up;
    else if (s == "down") l.state = LinkState::Down;
    else fail(field(path, "state"), "expected \"up\" or \"down\"");
  }
  return l;
}

void parse_topology(const json& j, const std::string& path, Scenario& sc) {
  expect_keys(j, path, {"nodes", "links", "brokers"});
  const auto np = field(path, "nodes");
  const auto& nodes = array_at(j["nodes"], np);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto n = parse_node(nodes[i], index(np, i));
    try {
      sc.topology.add_node(std::move(n));
    } catch (const Error& e) {
      fail(index(np, i), e.what());
    }
  }
  const auto lp = field(path, "links");
  const auto& links = array_at(j["links"], lp);
  for (std::size_t i = 0; i < links.size(); ++i) {
    auto l = parse_link(links[i], index(lp, i));
    for (const auto* end : {"a", "b"}) {
      const auto& id = std::string_view(end) == "a" ? l.a : l.b;
      if (!sc.topology.has_node(id)) fail(field(index(lp, i), end), "unknown node '" + id + "'");
    }
    try {
      sc.topology.add_link(std::move(l));
    } catch (const Error& e) {
      fail(index(lp, i), e.what());
    }
  }
  const auto bp = field(path, "brokers");
  const auto& brokers = array_at(j["brokers"], bp);
  for (std::size_t i = 0; i < brokers.size(); ++i) {
    const auto p = index(bp, i);
    expect_keys(brokers[i], p, {"domain", "node"});
    sc.brokers.push_back({get_string(brokers[i]["domain"], field(p, "domain")),
                          get_string(brokers[i]["node"], field(p, "node"))});
  }
}

// -- models -----------------------------------------------------------------

Pin parse_pin(const json& j, const std::string& path) {
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "unpinned") return Unpinned{};
    if (s == "publisher") return AtPublisher{};
    if (s == "subscriber") return AtSubscriber{};
    fail(path, "expected unpinned, publisher, subscriber or {\"node\": id}");
  }
  expect_keys(j, path, {"node"});
  return AtNode{get_string(j["node"], field(path, "node"))};
}

TriggerPolicy parse_trigger(const json& j, const std::string& path) {
  if (!j.is_object() || j.size() != 1) fail(path, "expected exactly one of barrier, count, time_ms");
  if (j.contains("barrier")) {
    BarrierPolicy b;
    const auto p = field(path, "barrier");
    const auto& a = array_at(j["barrier"], p);
    for (std::size_t i = 0; i < a.size(); ++i) b.inputs.push_back(get_string(a[i], index(p, i)));
    return b;
  }
  if (j.contains("count")) {
    auto n = get_u64(j["count"], field(path, "count"));
    if (n < 1 || n > UINT32_MAX) fail(field(path, "count"), "must be in [1, 2^32)");
    return CountWindowPolicy{static_cast<std::uint32_t>(n)};
  }
  if (j.contains("time_ms")) return TimeWindowPolicy{get_i64(j["time_ms"], field(path, "time_ms"))};
  fail(path, "expected exactly one of barrier, count, time_ms");
}

StageSpec parse_stage(const json& j, const std::string& path) {
  expect_keys(j, path, {"id", "kind"},
              {"fn", "trigger", "predicate", "compute_cost", "mem_mb", "selectivity",
               "needs_accelerator", "pin"});
  StageSpec s;
  s.id = get_string(j["id"], field(path, "id"));
  const auto kind = get_string(j["kind"], field(path, "kind"));
  FnSpec fn;
  if (j.contains("fn")) fn = get_fn(j["fn"], field(path, "fn"));
  if (kind == "mapping") {
    s.kind = MappingKind{fn};
  } else if (kind == "funnel") {
    if (!j.contains("trigger")) fail(field(path, "trigger"), "required for funnels");
    s.kind = FunnelKind{fn, parse_trigger(j["trigger"], field(path, "trigger"))};
  } else if (kind == "filter") {
    if (!j.contains("predicate")) fail(field(path, "predicate"), "required for filters");
    s.kind = FilterKind{get_fn(j["predicate"], field(path, "predicate"))};
  } else {
    fail(field(path, "kind"), "expected mapping, funnel or filter");
  }
  if (j.contains("compute_cost")) s.compute_cost = get_rational(j["compute_cost"], field(path, "compute_cost"));
  s.mem_mb = opt<std::uint64_t>(j, "mem_mb", path, 0, get_u64);
  if (j.contains("selectivity")) s.selectivity = get_rational(j["selectivity"], field(path, "selectivity"));
  s.needs_accelerator = opt<bool>(j, "needs_accelerator", path, false, get_bool);
  if (j.contains("pin")) s.pin = parse_pin(j["pin"], field(path, "pin"));
  return s;
}

PipelineSpec parse_pipeline(const json& j, const std::string& path) {
  expect_keys(j, path, {"stages", "sources", "sink"}, {"edges"});
  PipelineSpec p;
  const auto sp = field(path, "stages");
  const auto& stages = array_at(j["stages"], sp);
  for (std::size_t i = 0; i < stages.size(); ++i) p.stages.push_back(parse_stage(stages[i], index(sp, i)));
  if (j.contains("edges")) {
    const auto ep = field(path, "edges");
    const auto& edges = array_at(j["edges"], ep);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto e = index(ep, i);
      if (!edges[i].is_array() || edges[i].size() != 2) fail(e, "expected [from, to]");
      p.edges.emplace_back(get_string(edges[i][0], index(e, 0)), get_string(edges[i][1], index(e, 1)));
    }
  }
  const auto bp = field(path, "sources");
  if (!j["sources"].is_object()) fail(bp, "expected an object");
  for (const auto& [stage, filter] : j["sources"].items())
    p.source_bindings.emplace(stage, get_filter(filter, field(bp, stage)));
  p.sink = get_string(j["sink"], field(path, "sink"));
  return p;
}

ScenarioModel parse_model(const json& j, const std::string& path) {
  expect_keys(j, path, {"id"}, {"version", "task", "layers", "params", "application", "domains"});
  ScenarioModel sm;
  auto& m = sm.model;
  m.id = get_string(j["id"], field(path, "id"));
  m.version = opt<std::uint64_t>(j, "version", path, 1, get_u64);
  if (j.contains("task")) {
    try {
      m.task = parse_task_tag(get_string(j["task"], field(path, "task")));
    } catch (const Error& e) {
      fail(field(path, "task"), e.what());
    }
  }
  if (j.contains("layers")) {
    const auto lp = field(path, "layers");
    const auto& layers = array_at(j["layers"], lp);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = index(lp, i);
      expect_keys(layers[i], p, {"compute_cost"}, {"mem_mb", "selectivity", "needs_accelerator"});
      LayerSpec l;
      l.compute_cost = get_rational(layers[i]["compute_cost"], field(p, "compute_cost"));
      l.mem_mb = opt<std::uint64_t>(layers[i], "mem_mb", p, 0, get_u64);
      if (layers[i].contains("selectivity"))
        l.selectivity = get_rational(layers[i]["selectivity"], field(p, "selectivity"));
      l.needs_accelerator = opt<bool>(layers[i], "needs_accelerator", p, false, get_bool);
      m.layers.push_back(l);
    }
  }
  if (j.contains("params")) {
    const auto pp = field(path, "params");
    const auto& params = array_at(j["params"], pp);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].is_number()) fail(index(pp, i), "expected a number");
      m.params.push_back(params[i].get<double>());
    }
  }
  if (j.contains("application")) m.application = parse_pipeline(j["application"], field(path, "application"));
  if (j.contains("domains")) {
    const auto dp = field(path, "domains");
    const auto& ds = array_at(j["domains"], dp);
    for (std::size_t i = 0; i < ds.size(); ++i) sm.domains.insert(get_string(ds[i], index(dp, i)));
  }
  return sm;
}

// -- subscriptions, workload, faults ---------------------------------------

Subscription parse_subscription(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind")) fail(field(path, "kind"), "required key missing");
  const auto kind = get_string(j["kind"], field(path, "kind"));
  Subscription s;
  if (kind == "data") {
    expect_keys(j, path, {"id", "subscriber", "kind", "filter"});
    s.kind = DataSub{get_filter(j["filter"], field(path, "filter"))};
  } else if (kind == "inference") {
    expect_keys(j, path, {"id", "subscriber", "kind", "model"}, {"filter", "privacy_split", "k"});
    InferenceSub inf;
    inf.model = get_string(j["model"], field(path, "model"));
    if (j.contains("filter")) inf.filter = get_filter(j["filter"], field(path, "filter"));
    inf.privacy_split = opt<bool>(j, "privacy_split", path, false, get_bool);
    auto k = opt<std::uint64_t>(j, "k", path, 1, get_u64);
    if (k > UINT32_MAX) fail(field(path, "k"), "too large");
    inf.k = static_cast<std::uint32_t>(k);
    s.kind = inf;
  } else if (kind == "model_update") {
    expect_keys(j, path, {"id", "subscriber", "kind", "model"}, {"min_version"});
    s.kind = ModelUpdateSub{get_string(j["model"], field(path, "model")),
                            opt<std::uint64_t>(j, "min_version", path, 0, get_u64)};
  } else {
    fail(field(path, "kind"), "expected data, inference or model_update");
  }
  s.id = get_string(j["id"], field(path, "id"));
  s.subscriber = get_string(j["subscriber"], field(path, "subscriber"));
  return s;
}

void parse_workload(const json& j, const std::string& path, Scenario& sc) {
  expect_keys(j, path, {"topics"}, {"training"});
  const auto tp = field(path, "topics");
  if (!j["topics"].is_object()) fail(tp, "expected an object");
  for (const auto& [topic, spec] : j["topics"].items()) {
    const auto p = field(tp, topic);
    get_topic(json(topic), p);
    expect_keys(spec, p, {"size_bytes", "rate_per_s"}, {"periodic", "start_ms", "count", "payload_len"});
    TopicWorkload w;
    w.size_bytes = get_u64(spec["size_bytes"], field(p, "size_bytes"));
    w.rate_per_s = get_rational(spec["rate_per_s"], field(p, "rate_per_s"));
    w.periodic = opt<bool>(spec, "periodic", p, false, get_bool);
    w.start_ms = opt<std::int64_t>(spec, "start_ms", p, 0, get_i64);
    if (spec.contains("count")) w.count = get_u64(spec["count"], field(p, "count"));
    auto len = opt<std::uint64_t>(spec, "payload_len", p, 4, get_u64);
    if (len > 1024) fail(field(p, "payload_len"), "must be <= 1024");
    w.payload_len = static_cast<std::uint32_t>(len);
    sc.workload.emplace(topic, w);
  }
  if (!j.contains("training")) return;
  const auto rp = field(path, "training");
  const auto& plans = array_at(j["training"], rp);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto p = index(rp, i);
    expect_keys(plans[i], p, {"model", "trainers"},
                {"start_ms", "period_ms", "rounds", "delta_len", "resend_stale"});
    TrainingPlan t;
    t.model = get_string(plans[i]["model"], field(p, "model"));
    const auto trp = field(p, "trainers");
    const auto& trainers = array_at(plans[i]["trainers"], trp);
    for (std::size_t k = 0; k < trainers.size(); ++k) t.trainers.push_back(get_string(trainers[k], index(trp, k)));
    t.start_ms = opt<std::int64_t>(plans[i], "start_ms", p, 0, get_i64);
    t.period_ms = opt<std::int64_t>(plans[i], "period_ms", p, 1000, get_i64);
    t.rounds = static_cast<std::uint32_t>(opt<std::uint64_t>(plans[i], "rounds", p, 1, get_u64));
    t.delta_len = static_cast<std::uint32_t>(opt<std::uint64_t>(plans[i], "delta_len", p, 0, get_u64));
    t.resend_stale = opt<bool>(plans[i], "resend_stale", p, false, get_bool);
    sc.training.push_back(std::move(t));
  }
}

FaultEvent parse_fault(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind")) fail(field(path, "kind"), "required key missing");
  const auto kind = get_string(j["kind"], field(path, "kind"));
  FaultEvent f;
  using K = FaultEvent::Kind;
  if (kind == "node_down" || kind == "node_up") {
    expect_keys(j, path, {"at_ms", "kind", "node"});
    f.kind = kind == "node_down" ? K::NodeDown : K::NodeUp;
    f.a = get_string(j["node"], field(path, "node"));
  } else if (kind == "link_down" || kind == "link_up") {
    expect_keys(j, path, {"at_ms", "kind", "a", "b"});
    f.kind = kind == "link_down" ? K::LinkDown : K::LinkUp;
    f.a = get_string(j["a"], field(path, "a"));
    f.b = get_string(j["b"], field(path, "b"));
  } else {
    fail(field(path, "kind"), "expected node_down, node_up, link_down or link_up");
  }
  f.at_ms = get_i64(j["at_ms"], field(path, "at_ms"));
  return f;
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

// ---------------------------------------------------------------------------

place::WorkloadSpec Scenario::workload_spec() const {
  place::WorkloadSpec w;
  for (const auto& [topic, t] : workload) w.topics[topic] = place::TopicLoad{t.size_bytes, t.rate_per_s};
  return w;
}

const BrokerSite* Scenario::broker_for(const DomainId& domain) const {
  for (const auto& b : brokers)
    if (b.domain == domain) return &b;
  return nullptr;
}

const ScenarioModel* Scenario::find_model(const ModelId& id) const {
  for (const auto& m : models)
    if (m.model.id == id) return &m;
  return nullptr;
}

std::string to_string(broker::PlacementPolicy p) {
  switch (p) {
    case broker::PlacementPolicy::Upstream: return "upstream";
    case broker::PlacementPolicy::Baseline: return "baseline";
    case broker::PlacementPolicy::Oracle: return "oracle";
  }
  return "?";
}

broker::PlacementPolicy parse_policy(std::string_view s) {
  if (s == "upstream") return broker::PlacementPolicy::Upstream;
  if (s == "baseline") return broker::PlacementPolicy::Baseline;
  if (s == "oracle") return broker::PlacementPolicy::Oracle;
  throw Error(ErrorCode::InvalidArgument, "unknown placement policy '" + std::string(s) + "'");
}

Scenario load_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(line_of(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }

  const std::string root = "$";
  expect_keys(doc, root,
              {"topology", "models", "bindings", "subscriptions", "workload", "faults", "objective", "sim"});
  Scenario sc;
  parse_topology(doc["topology"], field(root, "topology"), sc);

  const auto mp = field(root, "models");
  const auto& models = array_at(doc["models"], mp);
  for (std::size_t i = 0; i < models.size(); ++i) sc.models.push_back(parse_model(models[i], index(mp, i)));

  const auto bp = field(root, "bindings");
  const auto& bindings = array_at(doc["bindings"], bp);
  for (std::size_t i = 0; i < bindings.size(); ++i) {
    const auto p = index(bp, i);
    expect_keys(bindings[i], p, {"topic", "publisher"});
    sc.bindings.push_back({get_topic(bindings[i]["topic"], field(p, "topic")),
                           get_string(bindings[i]["publisher"], field(p, "publisher"))});
  }

  const auto sp = field(root, "subscriptions");
  const auto& subs = array_at(doc["subscriptions"], sp);
  for (std::size_t i = 0; i < subs.size(); ++i) sc.subscriptions.push_back(parse_subscription(subs[i], index(sp, i)));

  parse_workload(doc["workload"], field(root, "workload"), sc);

  const auto fp = field(root, "faults");
  const auto& faults = array_at(doc["faults"], fp);
  for (std::size_t i = 0; i < faults.size(); ++i) sc.faults.push_back(parse_fault(faults[i], index(fp, i)));

  const auto op = field(root, "objective");
  expect_keys(doc["objective"], op, {"alpha", "beta"});
  sc.objective.alpha = get_rational(doc["objective"]["alpha"], field(op, "alpha"));
  sc.objective.beta = get_rational(doc["objective"]["beta"], field(op, "beta"));

  const auto simp = field(root, "sim");
  const auto& sim = doc["sim"];
  expect_keys(sim, simp, {"duration_ms", "seed"},
              {"heartbeat_ms", "heartbeat_misses", "buffer_capacity", "placement"});
  sc.sim.duration_ms = get_i64(sim["duration_ms"], field(simp, "duration_ms"));
  sc.sim.seed = get_u64(sim["seed"], field(simp, "seed"));
  sc.sim.heartbeat_ms = opt<std::int64_t>(sim, "heartbeat_ms", simp, 50, get_i64);
  sc.sim.heartbeat_misses =
      static_cast<std::uint32_t>(opt<std::uint64_t>(sim, "heartbeat_misses", simp, 3, get_u64));
  sc.sim.buffer_capacity = opt<std::uint64_t>(sim, "buffer_capacity", simp, broker::kDefaultBufferCapacity, get_u64);
  if (sim.contains("placement")) {
    try {
      sc.sim.placement = parse_policy(get_string(sim["placement"], field(simp, "placement")));
    } catch (const Error& e) {
      fail(field(simp, "placement"), e.what());
    }
  }

  validate_scenario(sc);
  return sc;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open scenario file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

// ---------------------------------------------------------------------------
// Referential validation
// ---------------------------------------------------------------------------

void validate_scenario(const Scenario& sc) {
  const auto& t = sc.topology;
  auto require_node = [&](const NodeId& id, const std::string& path) {
    if (!t.has_node(id)) fail(path, "unknown node '" + id + "'");
  };

  if (t.nodes().empty()) fail("$.topology.nodes", "at least one node is required");
  for (const auto& [id, n] : t.nodes()) {
    if (!n.cpu_capacity.is_positive()) fail("$.topology.nodes", id + ": cpu_capacity must be > 0");
  }

  // One broker per domain, hosted inside it.
  std::set<DomainId> broker_domains;
  for (std::size_t i = 0; i < sc.brokers.size(); ++i) {
    const auto p = index("$.topology.brokers", i);
    const auto& b = sc.brokers[i];
    require_node(b.node, field(p, "node"));
    if (t.node(b.node).domain != b.domain) fail(field(p, "node"), "broker node lies outside domain '" + b.domain + "'");
    if (!broker_domains.insert(b.domain).second) fail(field(p, "domain"), "second broker for domain '" + b.domain + "'");
  }
  for (const auto& d : t.domains())
    if (!broker_domains.count(d)) fail("$.topology.brokers", "domain '" + d + "' has no broker");

  // Each domain starts connected over up links.
  for (const auto& d : t.domains()) {
    Topology sub = t.restricted_to({d});
    RouteTable table(sub);
    const auto& first = sub.nodes().begin()->first;
    for (const auto& [id, n] : sub.nodes())
      if (!table.find(first, id)) fail("$.topology.links", "domain '" + d + "' is not connected: " + first + " cannot reach " + id);
  }

  std::set<ModelId> model_ids;
  for (std::size_t i = 0; i < sc.models.size(); ++i) {
    const auto p = index("$.models", i);
    const auto& m = sc.models[i].model;
    if (m.id.empty()) fail(field(p, "id"), "must be nonempty");
    if (!model_ids.insert(m.id).second) fail(field(p, "id"), "duplicate model '" + m.id + "'");
    if (m.layers.empty() && !m.application) fail(field(p, "layers"), "a model needs layers or an application");
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
      if (m.layers[k].compute_cost.is_negative()) fail(index(field(p, "layers"), k), "compute_cost must be >= 0");
      if (!m.layers[k].selectivity.is_positive()) fail(index(field(p, "layers"), k), "selectivity must be > 0");
    }
    if (m.application) {
      auto v = validate_pipeline(*m.application);
      if (!v.empty())
        fail(field(p, "application"), std::string(to_string(v.front().rule)) + " at " + v.front().subject);
      for (std::size_t k = 0; k < m.application->stages.size(); ++k) {
        const auto& s = m.application->stages[k];
        const auto sp = index(field(field(p, "application"), "stages"), k);
        const FnSpec* fn = nullptr;
        if (const auto* mk = std::get_if<MappingKind>(&s.kind)) fn = &mk->fn;
        if (const auto* fk = std::get_if<FunnelKind>(&s.kind)) fn = &fk->fn;
        if (fn && !ops::is_known_fn(fn->name)) fail(field(sp, "fn"), "unknown function '" + fn->name + "'");
        if (const auto* f = std::get_if<FilterKind>(&s.kind); f && !ops::is_known_predicate(f->predicate.name))
          fail(field(sp, "predicate"), "unknown predicate '" + f->predicate.name + "'");
        if (const auto* pin = std::get_if<AtNode>(&s.pin)) require_node(pin->node, field(sp, "pin"));
      }
    }
    for (const auto& d : sc.models[i].domains)
      if (!broker_domains.count(d)) fail(field(p, "domains"), "unknown domain '" + d + "'");
  }

  for (std::size_t i = 0; i < sc.bindings.size(); ++i)
    require_node(sc.bindings[i].publisher, field(index("$.bindings", i), "publisher"));

  std::set<SubId> sub_ids;
  for (std::size_t i = 0; i < sc.subscriptions.size(); ++i) {
    const auto p = index("$.subscriptions", i);
    const auto& s = sc.subscriptions[i];
    if (s.id.empty()) fail(field(p, "id"), "must be nonempty");
    if (!sub_ids.insert(s.id).second) fail(field(p, "id"), "duplicate subscription '" + s.id + "'");
    require_node(s.subscriber, field(p, "subscriber"));
    if (const auto* inf = std::get_if<InferenceSub>(&s.kind)) {
      const auto* m = sc.find_model(inf->model);
      if (!m) fail(field(p, "model"), "unknown model '" + inf->model + "'");
      if (!m->model.application && (inf->k < 1 || inf->k > m->model.layers.size()))
        fail(field(p, "k"), "must be in [1, " + std::to_string(m->model.layers.size()) + "]");
      std::size_t publishers = 0;
      for (const auto& b : sc.bindings) publishers += match_filter(inf->filter, b.topic);
      if (!m->model.application && publishers == 0) fail(field(p, "filter"), "no binding matches");
    } else if (const auto* mu = std::get_if<ModelUpdateSub>(&s.kind)) {
      if (!sc.find_model(mu->model)) fail(field(p, "model"), "unknown model '" + mu->model + "'");
    }
  }

  for (const auto& [topic, w] : sc.workload) {
    const auto p = field("$.workload.topics", topic);
    if (w.size_bytes < 1) fail(field(p, "size_bytes"), "must be >= 1");
    if (!w.rate_per_s.is_positive()) fail(field(p, "rate_per_s"), "must be > 0");
    if (w.start_ms < 0) fail(field(p, "start_ms"), "must be >= 0");
    const Topic tp(topic);
    if (std::none_of(sc.bindings.begin(), sc.bindings.end(), [&](const auto& b) { return b.topic == tp; }))
      fail(p, "no binding names this topic's publisher");
  }

  for (std::size_t i = 0; i < sc.training.size(); ++i) {
    const auto p = index("$.workload.training", i);
    const auto& tr = sc.training[i];
    const auto* m = sc.find_model(tr.model);
    if (!m) fail(field(p, "model"), "unknown model '" + tr.model + "'");
    if (m->domains.size() > 1 || (m->domains.empty() && sc.brokers.size() > 1)) fail(field(p, "model"), "a trained model must live in exactly one domain");
    if (tr.trainers.empty()) fail(field(p, "trainers"), "at least one trainer is required");
    for (std::size_t k = 0; k < tr.trainers.size(); ++k) require_node(tr.trainers[k], index(field(p, "trainers"), k));
    if (tr.period_ms < 1) fail(field(p, "period_ms"), "must be >= 1");
    if (tr.start_ms < 0) fail(field(p, "start_ms"), "must be >= 0");
    if (tr.delta_len != 0 && tr.delta_len != m->model.params.size())
      fail(field(p, "delta_len"), "must equal the model's params length");
  }

  for (std::size_t i = 0; i < sc.faults.size(); ++i) {
    const auto p = index("$.faults", i);
    const auto& f = sc.faults[i];
    if (f.at_ms < 0) fail(field(p, "at_ms"), "must be >= 0");
    if (f.kind == FaultEvent::Kind::NodeDown || f.kind == FaultEvent::Kind::NodeUp) {
      require_node(f.a, field(p, "node"));
    } else if (!t.link(f.a, f.b)) {
      fail(p, "unknown link " + f.a + "-" + f.b);
    }
  }

  if (sc.objective.alpha.is_negative()) fail("$.objective.alpha", "must be >= 0");
  if (sc.objective.beta.is_negative()) fail("$.objective.beta", "must be >= 0");
  if (sc.sim.duration_ms <= 0) fail("$.sim.duration_ms", "must be > 0");
  if (sc.sim.heartbeat_ms <= 0) fail("$.sim.heartbeat_ms", "must be > 0");
  if (sc.sim.heartbeat_misses < 1) fail("$.sim.heartbeat_misses", "must be >= 1");
  if (sc.sim.buffer_capacity < 1) fail("$.sim.buffer_capacity", "must be >= 1");
}

}  // namespace nps::sim
