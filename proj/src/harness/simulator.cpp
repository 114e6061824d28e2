#include "nps/harness/simulator.hpp"

#include <algorithm>
#include <memory>
#include <queue>
#include <set>
#include <variant>

#include <omp.h>

#include "nps/core/error.hpp"
#include "nps/core/routing.hpp"
#include "nps/harness/rng.hpp"
#include "nps/operators/operators.hpp"

namespace nps::sim {
namespace {

using broker::Action;
using broker::Broker;
using broker::Delivery;
using broker::StageTask;

// Input name an entry funnel uses for publications straight from the publisher.
const StageId kSourceInput = "@source";

struct Lineage {
  /// Injected publications this message derives from; sorted, unique.
  std::vector<PublicationKey> roots;
  std::int64_t origin_us = 0;

  static Lineage of(const Publication& p) {
    return {{key_of(p)}, std::chrono::duration_cast<std::chrono::microseconds>(p.ts).count()};
  }
  void absorb(const Lineage& o) {
    std::vector<PublicationKey> merged;
    std::set_union(roots.begin(), roots.end(), o.roots.begin(), o.roots.end(), std::back_inserter(merged));
    roots = std::move(merged);
    origin_us = std::min(origin_us, o.origin_us);
  }
};

struct ToStage {
  DomainId domain;
  std::string key;
  StageId input;
};
struct ToSubscriber {
  SubId sub;
};
struct ToBroker {
  DomainId domain;
  NodeId trainer;
  ops::ModelUpdate update;
};
struct Shipment {};
using Target = std::variant<ToStage, ToSubscriber, ToBroker, Shipment>;

struct Message {
  Publication pub;
  Lineage lineage;
  Target target;
  std::vector<NodeId> path;
};

struct Job {
  DomainId domain;
  std::string key;
  Publication pub;
  Lineage lineage;
  /// Funnel emissions are already combined; the job only charges compute.
  bool emission = false;
};

struct PublishDue {
  std::string topic;
};
struct TrainingRound {
  std::size_t plan;
  std::uint32_t round;
};
struct FaultDue {
  std::size_t index;
};
struct HopArrive {
  std::uint64_t msg;
  std::size_t hop;
};
struct ComputeDone {
  NodeId node;
  std::uint64_t epoch;
  std::uint64_t job;
};
struct FunnelTimer {
  DomainId domain;
  std::string key;
};
struct HeartbeatCheck {};
using Payload = std::variant<PublishDue, TrainingRound, FaultDue, HopArrive, ComputeDone, FunnelTimer, HeartbeatCheck>;

struct Event {
  std::int64_t t_us;
  std::uint64_t seq;
  Payload payload;
};
struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.t_us != b.t_us ? a.t_us > b.t_us : a.seq > b.seq;
  }
};

struct FunnelRuntime {
  ops::FunnelState state;
  /// Parallel to state.pending.
  std::vector<Lineage> lineage;
  bool timer_armed = false;
};

struct NodeRuntime {
  std::int64_t busy_until = 0;
  std::int64_t busy_us = 0;
  std::uint64_t epoch = 0;
  std::int64_t last_seen = 0;
  std::optional<std::int64_t> down_since;
  bool failure_reported = true;
};

struct SubRuntime {
  DomainId domain;
  std::set<PublicationKey> seen;
  std::set<PublicationKey> filtered;
  std::vector<std::int64_t> latencies_us;
  std::uint64_t delivered = 0;
  std::uint64_t duplicates = 0;
  std::optional<std::uint64_t> last_applied;
  std::vector<std::uint64_t> applied;
};

struct InstanceRuntime {
  std::optional<std::int64_t> pending_fault_us;
  double recovery_ms = 0;
  double repair_delay_ms = 0;
};

std::int64_t ceil_us(const Rational& us) { return us.ceil(); }

class Simulator {
 public:
  Simulator(const Scenario& sc, std::uint64_t seed, const RunOptions& options)
      : sc_(sc),
        seed_(seed),
        options_(options),
        topology_(sc.topology),
        workload_(sc.workload_spec()),
        policy_(options.policy.value_or(sc.sim.placement)),
        duration_us_(sc.sim.duration_ms * 1000) {}

  RunDetail run() {
    setup();
    while (!queue_.empty() && queue_.top().t_us <= duration_us_) {
      Event ev = queue_.top();
      queue_.pop();
      now_ = ev.t_us;
      std::visit([&](auto& p) { handle(p); }, ev.payload);
    }
    now_ = duration_us_;
    return finish();
  }

  std::vector<PlannedInstance> plan() {
    setup();
    std::vector<PlannedInstance> out;
    for (const auto& [domain, b] : brokers_)
      for (const auto& [id, inst] : b.instances())
        out.push_back({domain, inst,
                       place::cost(inst.placement, inst.pipeline, topology_, workload_, sc_.objective,
                                   inst.endpoints)});
    return out;
  }

 private:
  // -------------------------------------------------------------------------
  // Setup
  // -------------------------------------------------------------------------

  broker::Context ctx() const { return broker::Context{topology_, workload_, sc_.objective, sc_.bindings, policy_}; }

  std::set<DomainId> model_domains(const ScenarioModel& m) const {
    if (!m.domains.empty()) return m.domains;
    std::set<DomainId> all;
    for (const auto& b : sc_.brokers) all.insert(b.domain);
    return all;
  }

  void setup() {
    for (const auto& [id, n] : topology_.nodes()) nodes_[id];
    for (const auto& b : sc_.brokers) {
      brokers_.emplace(std::piecewise_construct, std::forward_as_tuple(b.domain),
                       std::forward_as_tuple(b.domain, b.node, sc_.sim.buffer_capacity));
      broker_nodes_[b.node] = b.domain;
    }
    // Peer every pair of domains joined by a bridge, over the first bridge
    // link in key order.
    for (const auto& [key, l] : topology_.links()) {
      const auto& da = topology_.node(l.a).domain;
      const auto& db = topology_.node(l.b).domain;
      if (da == db || !brokers_.count(da) || !brokers_.count(db)) continue;
      auto& ba = brokers_.at(da);
      if (std::any_of(ba.peers().begin(), ba.peers().end(), [&](const auto& p) { return p.domain == db; }))
        continue;
      ba.link_peer({db, l, &brokers_.at(db)});
      brokers_.at(db).link_peer({da, l, &ba});
    }

    for (const auto& m : sc_.models)
      for (const auto& d : model_domains(m)) brokers_.at(d).register_model(m.model);
    for (std::size_t i = 0; i < sc_.training.size(); ++i) {
      const auto& plan = sc_.training[i];
      const auto home = *model_domains(*sc_.find_model(plan.model)).begin();
      brokers_.at(home).expect_trainers(plan.model, {plan.trainers.begin(), plan.trainers.end()});
      schedule(plan.start_ms * 1000, TrainingRound{i, 1});
    }

    for (const auto& s : sc_.subscriptions) {
      const auto& domain = topology_.node(s.subscriber).domain;
      auto& b = brokers_.at(domain);
      subs_[s.id].domain = domain;
      auto deliveries = b.subscribe(s, ctx());
      for (const auto& d : deliveries) dispatch(domain, Action{d}, Lineage::of(d.pub));
    }
    for (auto& [domain, b] : brokers_) {
      for (const auto& [id, inst] : b.instances()) {
        detail_.initial_placements[id] = inst.placement;
        instances_[id];
        ship_partitions(inst, nullptr);
      }
      note_stages(domain);
    }

    for (const auto& [topic, w] : sc_.workload) {
      publishers_[topic] = publisher_of(topic);
      arrivals_.emplace(topic, Stream(seed_, "arrivals/" + topic));
      payloads_.emplace(topic, Stream(seed_, "payload/" + topic));
      schedule(w.start_ms * 1000, PublishDue{topic});
    }
    for (std::size_t i = 0; i < sc_.faults.size(); ++i) schedule(sc_.faults[i].at_ms * 1000, FaultDue{i});
    schedule(0, HeartbeatCheck{});
  }

  NodeId publisher_of(const std::string& topic) const {
    const Topic t(topic);
    for (const auto& b : sc_.bindings)
      if (b.topic == t) return b.publisher;
    throw Error(ErrorCode::NoPublisher, topic);
  }

  template <class P>
  void schedule(std::int64_t t_us, P payload) {
    queue_.push(Event{t_us, next_event_++, Payload{std::move(payload)}});
  }

  // -------------------------------------------------------------------------
  // Network
  // -------------------------------------------------------------------------

  const RouteTable& routes() {
    if (!routes_ || routes_version_ != topology_version_) {
      routes_ = std::make_unique<RouteTable>(topology_);
      routes_version_ = topology_version_;
    }
    return *routes_;
  }

  void send(const NodeId& from, const NodeId& to, Publication pub, Lineage lineage, Target target) {
    if (!topology_.node_up(from)) {
      ++lost_;
      return;
    }
    std::vector<NodeId> path{from};
    if (from != to) {
      const auto* r = routes().find(from, to);
      if (!r) {
        ++lost_;
        return;
      }
      path = r->path;
    }
    const auto id = next_msg_++;
    messages_.emplace(id, Message{std::move(pub), std::move(lineage), std::move(target), std::move(path)});
    schedule(now_, HopArrive{id, 0});
  }

  void handle(const HopArrive& h) {
    auto it = messages_.find(h.msg);
    auto& m = it->second;
    const auto& here = m.path[h.hop];
    if (!topology_.node_up(here)) {
      ++lost_;
      messages_.erase(it);
      return;
    }
    if (h.hop + 1 == m.path.size()) {
      Message done = std::move(m);
      messages_.erase(it);
      arrive(done);
      return;
    }
    const auto& next = m.path[h.hop + 1];
    const auto* l = topology_.link(here, next);
    if (!l || !topology_.link_usable(*l)) {
      ++lost_;
      messages_.erase(it);
      return;
    }
    const auto bytes = m.pub.size_bytes;
    link_bytes_[link_key(here, next)] += bytes;
    if (options_.trace)
      detail_.trace.push_back({now_, here, next, m.pub.tag, bytes, m.pub.topic.str()});
    const auto hop_us = ceil_us(l->latency_ms * Rational(1000)) +
                        ceil_us(Rational(static_cast<std::int64_t>(bytes)) / l->bandwidth_kb_per_ms);
    schedule(now_ + hop_us, HopArrive{h.msg, h.hop + 1});
  }

  void arrive(Message& m) {
    if (auto* s = std::get_if<ToStage>(&m.target)) {
      stage_input(*s, m.path.back(), std::move(m.pub), std::move(m.lineage));
    } else if (auto* d = std::get_if<ToSubscriber>(&m.target)) {
      receive(d->sub, m.pub, m.lineage);
    } else if (auto* t = std::get_if<ToBroker>(&m.target)) {
      auto& b = brokers_.at(t->domain);
      auto out = b.on_training_update(t->trainer, t->update, SimTime{now_});
      for (auto& d : out.deliveries) dispatch(t->domain, Action{d}, Lineage::of(d.pub));
    }
  }

  void dispatch(const DomainId& domain, const Action& a, const Lineage& lineage) {
    if (const auto* task = std::get_if<StageTask>(&a)) {
      send(task->pub.source, task->node, task->pub, lineage, ToStage{domain, task->exec_key, kSourceInput});
    } else {
      const auto& d = std::get<Delivery>(a);
      send(d.from, d.subscriber, d.pub, lineage, ToSubscriber{d.sub_id});
    }
  }

  // -------------------------------------------------------------------------
  // Stages
  // -------------------------------------------------------------------------

  static std::string gkey(const DomainId& domain, const std::string& key) { return domain + "|" + key; }

  const place::ExecStage* stage(const DomainId& domain, const std::string& key) const {
    return brokers_.at(domain).exec_graph().find(key);
  }

  void note_stages(const DomainId& domain) {
    for (const auto& [key, s] : brokers_.at(domain).exec_graph().stages) {
      auto& m = stage_metrics_[gkey(domain, key)];
      m.key = gkey(domain, key);
      m.model = s.model_id;
      m.stage = s.spec.id;
      m.node = s.node;
    }
  }

  void stage_input(const ToStage& to, const NodeId& at, Publication pub, Lineage lineage) {
    const auto* s = stage(to.domain, to.key);
    if (!s || s->node != at) {  // the stage moved while the message travelled
      ++lost_;
      return;
    }
    if (!s->spec.is_funnel()) {
      enqueue(Job{to.domain, to.key, std::move(pub), std::move(lineage), false}, s->node, s->spec);
      return;
    }
    auto& f = funnel(to.domain, *s);
    // A barrier keeps the newest publication per input; the one it replaces
    // is discarded. Lineage stays index-aligned with pending.
    bool replaced = false;
    if (std::holds_alternative<BarrierPolicy>(f.state.policy)) {
      for (std::size_t i = 0; i < f.state.pending.size(); ++i)
        if (f.state.pending[i].input == to.input) {
          discard(to.domain, *s, f.lineage[i]);
          f.lineage[i] = lineage;
          replaced = true;
          break;
        }
    }
    if (!replaced) f.lineage.push_back(lineage);
    auto step = ops::funnel_offer(std::move(f.state), to.input, pub, SimTime{now_});
    f.state = std::move(step.state);
    if (step.emitted) {
      emit_funnel(to.domain, *s, f, std::move(*step.emitted));
    } else if (f.state.window_open_ts && !f.timer_armed) {
      const auto& w = std::get<TimeWindowPolicy>(f.state.policy);
      f.timer_armed = true;
      schedule(f.state.window_open_ts->count() + w.delta_ms * 1000, FunnelTimer{to.domain, to.key});
    }
  }

  FunnelRuntime& funnel(const DomainId& domain, const place::ExecStage& s) {
    const auto g = gkey(domain, s.key);
    auto it = funnels_.find(g);
    if (it != funnels_.end()) return it->second;
    std::vector<StageId> inputs;
    const auto& graph = brokers_.at(domain).exec_graph();
    for (const auto& p : s.pred_keys) inputs.push_back(graph.stages.at(p).spec.id);
    if (inputs.empty()) inputs.push_back(kSourceInput);
    auto state = ops::make_funnel_state(s.spec, std::move(inputs),
                                        Topic("derived/" + s.model_id + "/" + s.spec.id));
    return funnels_.emplace(g, FunnelRuntime{std::move(state), {}, false}).first->second;
  }

  void emit_funnel(const DomainId& domain, const place::ExecStage& s, FunnelRuntime& f, Publication out) {
    Lineage merged = f.lineage.front();
    for (std::size_t i = 1; i < f.lineage.size(); ++i) merged.absorb(f.lineage[i]);
    f.lineage.clear();
    enqueue(Job{domain, s.key, std::move(out), std::move(merged), true}, s.node, s.spec);
  }

  void handle(const FunnelTimer& t) {
    auto it = funnels_.find(gkey(t.domain, t.key));
    if (it == funnels_.end()) return;
    auto& f = it->second;
    f.timer_armed = false;
    const auto* s = stage(t.domain, t.key);
    if (!s || !topology_.node_up(s->node)) return;
    auto step = ops::funnel_tick(std::move(f.state), SimTime{now_});
    f.state = std::move(step.state);
    if (step.emitted) emit_funnel(t.domain, *s, f, std::move(*step.emitted));
  }

  void enqueue(Job job, const NodeId& node, const StageSpec& spec) {
    auto& n = nodes_.at(node);
    const auto dur = ceil_us(spec.compute_cost / topology_.node(node).cpu_capacity * Rational(1000));
    const auto start = std::max(now_, n.busy_until);
    n.busy_until = start + dur;
    n.busy_us += std::max<std::int64_t>(0, std::min(n.busy_until, duration_us_) - std::min(start, duration_us_));
    const auto id = next_job_++;
    jobs_.emplace(id, std::move(job));
    schedule(n.busy_until, ComputeDone{node, n.epoch, id});
  }

  void handle(const ComputeDone& c) {
    auto it = jobs_.find(c.job);
    Job job = std::move(it->second);
    jobs_.erase(it);
    if (nodes_.at(c.node).epoch != c.epoch) {
      ++lost_;
      return;
    }
    const auto* s = stage(job.domain, job.key);
    if (!s || s->node != c.node) {
      ++lost_;
      return;
    }
    ++stage_metrics_[gkey(job.domain, job.key)].executions;

    Publication out;
    if (job.emission) {
      out = std::move(job.pub);
    } else if (std::holds_alternative<MappingKind>(s->spec.kind)) {
      out = ops::apply_mapping(s->spec, job.pub);
    } else {
      auto kept = ops::inference_filter(s->spec, job.pub);
      if (!kept) {
        discard(job.domain, *s, job.lineage);
        return;
      }
      out = std::move(*kept);
    }
    out.topic = Topic("derived/" + s->model_id + "/" + s->spec.id);
    out.source = c.node;
    out.seq = ++stage_seq_[gkey(job.domain, job.key)];
    out.ts = SimTime{now_};
    out.tag = PayloadTag::Derived;
    forward(job.domain, *s, out, job.lineage);
  }

  void forward(const DomainId& domain, const place::ExecStage& s, const Publication& out, const Lineage& lineage) {
    const auto& b = brokers_.at(domain);
    for (const auto& succ : s.succ_keys)
      send(s.node, b.exec_graph().stages.at(succ).node, out, lineage, ToStage{domain, succ, s.spec.id});
    for (const auto& inst_id : s.deliveries) {
      const auto& inst = b.instances().at(inst_id);
      send(s.node, inst.endpoints.subscriber, out, lineage, ToSubscriber{inst.sub_id});
    }
  }

  /// A filter rejected these publications or a barrier replaced them: every
  /// subscription running through the stage will never see them.
  void discard(const DomainId& domain, const place::ExecStage& s, const Lineage& lineage) {
    auto& b = brokers_.at(domain);
    for (const auto& inst_id : s.members) {
      const auto& sub = b.instances().at(inst_id).sub_id;
      auto& rt = subs_.at(sub);
      rt.filtered.insert(lineage.roots.begin(), lineage.roots.end());
      ack(sub, lineage);
    }
  }

  // -------------------------------------------------------------------------
  // Subscribers
  // -------------------------------------------------------------------------

  void ack(const SubId& sub, const Lineage& lineage) {
    // Cumulative per stream: one ack at the highest seq of each (source, topic).
    std::map<std::pair<std::string, std::string>, std::uint64_t> top;
    for (const auto& k : lineage.roots) {
      auto& v = top[{k.source, k.topic}];
      v = std::max(v, k.seq);
    }
    auto& b = brokers_.at(subs_.at(sub).domain);
    for (const auto& [stream, seq] : top) b.on_ack(sub, PublicationKey{stream.first, stream.second, seq});
  }

  void receive(const SubId& sub, const Publication& pub, const Lineage& lineage) {
    auto& rt = subs_.at(sub);
    std::vector<PublicationKey> fresh;
    for (const auto& k : lineage.roots)
      if (!rt.seen.count(k)) fresh.push_back(k);
    ack(sub, lineage);
    if (fresh.empty()) {
      ++rt.duplicates;
      return;
    }
    ++rt.delivered;
    rt.latencies_us.push_back(now_ - lineage.origin_us);
    for (const auto& k : fresh) {
      rt.seen.insert(k);
      detail_.first_seen[sub].push_back(k);
    }
    if (pub.topic.segments().size() == 3 && pub.topic.segments()[0] == "models" &&
        pub.topic.segments()[2] == "updates") {
      if (!rt.last_applied || pub.seq > *rt.last_applied) {
        rt.last_applied = pub.seq;
        rt.applied.push_back(pub.seq);
      }
    }
    const auto* inst = brokers_.at(rt.domain).instance_for(sub);
    if (inst) {
      auto& ir = instances_[inst->id];
      if (ir.pending_fault_us) {
        ir.recovery_ms = static_cast<double>(now_ - *ir.pending_fault_us) / 1000.0;
        ir.pending_fault_us.reset();
      }
    }
  }

  // -------------------------------------------------------------------------
  // Workload
  // -------------------------------------------------------------------------

  bool matches(const SubId& id, const Subscription& s, const Publication& p) const {
    if (const auto* d = std::get_if<DataSub>(&s.kind)) return match_filter(d->filter, p.topic);
    if (!std::holds_alternative<InferenceSub>(s.kind)) return false;
    const auto* inst = brokers_.at(subs_.at(id).domain).instance_for(id);
    if (!inst) return false;
    for (const auto& [stage, filter] : inst->pipeline.source_bindings)
      if (inst->endpoints.publishers.at(stage) == p.source && match_filter(filter, p.topic)) return true;
    return false;
  }

  void handle(const PublishDue& due) {
    const auto& w = sc_.workload.at(due.topic);
    auto& generated = generated_[due.topic];
    ++generated;
    const auto& publisher = publishers_.at(due.topic);
    if (topology_.node_up(publisher)) {
      Publication p;
      p.topic = Topic(due.topic);
      p.source = publisher;
      p.seq = ++pub_seq_[due.topic];
      p.ts = SimTime{now_};
      p.size_bytes = w.size_bytes;
      auto& rng = payloads_.at(due.topic);
      for (std::uint32_t i = 0; i < w.payload_len; ++i) p.payload.push_back(static_cast<double>(rng.below(10)));
      ++injected_;
      const auto key = key_of(p);
      for (const auto& s : sc_.subscriptions)
        if (matches(s.id, s, p)) detail_.injected[s.id].emplace_back(key, now_);
      const auto lineage = Lineage::of(p);
      for (auto& [domain, b] : brokers_)
        for (const auto& a : b.on_publish(p)) dispatch(domain, a, lineage);
    }
    if (w.count && generated >= *w.count) return;
    const auto gap = w.periodic ? ceil_us(Rational(1'000'000) / w.rate_per_s)
                                : arrivals_.at(due.topic).exponential_us(w.rate_per_s);
    schedule(now_ + gap, PublishDue{due.topic});
  }

  void handle(const TrainingRound& r) {
    const auto& plan = sc_.training[r.plan];
    const auto& model = *sc_.find_model(plan.model);
    const auto home = *model_domains(model).begin();
    const auto& broker_node = brokers_.at(home).node();
    const std::size_t len = plan.delta_len ? plan.delta_len : model.model.params.size();
    const auto version = model.model.version + r.round;
    for (const auto& trainer : plan.trainers) {
      auto& rng = training_rng(plan.model, trainer);
      ops::ModelUpdate u{plan.model, version, {}};
      for (std::size_t i = 0; i < len; ++i) u.delta.push_back(static_cast<double>(rng.below(10)));
      auto& last = last_delta_[{plan.model, trainer}];
      upload(home, broker_node, trainer, u);
      if (plan.resend_stale && r.round >= 2 && trainer == plan.trainers.front()) upload(home, broker_node, trainer, last);
      last = u;
    }
    if (r.round < plan.rounds) schedule(now_ + plan.period_ms * 1000, TrainingRound{r.plan, r.round + 1});
  }

  Stream& training_rng(const ModelId& model, const NodeId& trainer) {
    auto key = "train/" + model + "/" + trainer;
    auto it = training_rngs_.find(key);
    if (it == training_rngs_.end()) it = training_rngs_.emplace(key, Stream(seed_, key)).first;
    return it->second;
  }

  void upload(const DomainId& home, const NodeId& broker_node, const NodeId& trainer, const ops::ModelUpdate& u) {
    Publication p;
    p.topic = Topic("models/" + u.model_id + "/training");
    p.source = trainer;
    p.seq = u.version;
    p.ts = SimTime{now_};
    p.size_bytes = std::max<std::uint64_t>(1, 8 * u.delta.size());
    p.payload = u.delta;
    p.tag = PayloadTag::Derived;
    auto lineage = Lineage::of(p);
    send(trainer, broker_node, std::move(p), std::move(lineage), ToBroker{home, trainer, u});
  }

  // Stages of a cross-domain instance that run outside the model's home
  // domain need their partition shipped there first.
  void ship_partitions(const place::PipelineInstance& inst, const place::Placement* before) {
    if (!inst.remote_domain || inst.model_source.empty()) return;
    const auto& home = topology_.node(inst.model_source).domain;
    for (const auto& s : inst.pipeline.stages) {
      const auto& node = inst.placement.assignment.at(s.id);
      if (topology_.node(node).domain == home) continue;
      if (before && before->assignment.at(s.id) == node) continue;
      Publication p;
      p.topic = Topic("models/" + inst.model_id + "/partition");
      p.source = inst.model_source;
      p.seq = ++shipments_;
      p.ts = SimTime{now_};
      p.size_bytes = std::max<std::uint64_t>(1, s.mem_mb * 1'000'000);
      p.tag = PayloadTag::Derived;
      auto lineage = Lineage::of(p);
      send(inst.model_source, node, std::move(p), std::move(lineage), Shipment{});
    }
  }

  // -------------------------------------------------------------------------
  // Faults
  // -------------------------------------------------------------------------

  void handle(const FaultDue& f) {
    const auto& fault = sc_.faults[f.index];
    using K = FaultEvent::Kind;
    using TK = broker::TopologyEvent::Kind;
    ++topology_version_;
    switch (fault.kind) {
      case K::NodeDown: {
        if (!topology_.node_up(fault.a)) return;
        topology_.set_node_up(fault.a, false);
        auto& n = nodes_.at(fault.a);
        ++n.epoch;
        n.busy_until = now_;
        n.down_since = now_;
        n.failure_reported = false;
        drop_funnels_on(fault.a);
        if (auto it = broker_nodes_.find(fault.a); it != broker_nodes_.end()) brokers_.at(it->second).set_available(false);
        return;
      }
      case K::NodeUp: {
        if (topology_.node_up(fault.a)) return;
        topology_.set_node_up(fault.a, true);
        auto& n = nodes_.at(fault.a);
        const auto since = n.down_since.value_or(now_);
        n.down_since.reset();
        n.failure_reported = true;
        n.last_seen = now_;
        if (auto it = broker_nodes_.find(fault.a); it != broker_nodes_.end()) {
          auto& b = brokers_.at(it->second);
          b.set_available(true);
          auto pending = std::move(deferred_[it->second]);
          deferred_[it->second].clear();
          for (const auto& [ev, at] : pending) notify_one(it->second, ev, at);
        }
        notify({TK::NodeUp, fault.a, {}}, since);
        return;
      }
      case K::LinkDown:
        topology_.set_link_state(fault.a, fault.b, LinkState::Down);
        notify({TK::LinkDown, fault.a, fault.b}, now_);
        return;
      case K::LinkUp:
        topology_.set_link_state(fault.a, fault.b, LinkState::Up);
        notify({TK::LinkUp, fault.a, fault.b}, now_);
        return;
    }
  }

  void drop_funnels_on(const NodeId& node) {
    for (auto& [domain, b] : brokers_)
      for (const auto& [key, s] : b.exec_graph().stages)
        if (s.node == node) funnels_.erase(gkey(domain, key));
  }

  void handle(const HeartbeatCheck&) {
    const auto limit = static_cast<std::int64_t>(sc_.sim.heartbeat_misses) * sc_.sim.heartbeat_ms * 1000;
    for (auto& [id, n] : nodes_) {
      if (topology_.node_up(id)) {
        n.last_seen = now_;
        continue;
      }
      if (n.failure_reported || now_ - n.last_seen < limit) continue;
      n.failure_reported = true;
      notify({broker::TopologyEvent::Kind::NodeDown, id, {}}, *n.down_since);
    }
    schedule(now_ + sc_.sim.heartbeat_ms * 1000, HeartbeatCheck{});
  }

  void notify(const broker::TopologyEvent& ev, std::int64_t fault_us) {
    for (auto& [domain, b] : brokers_) {
      if (!b.available()) {
        deferred_[domain].emplace_back(ev, fault_us);
        continue;
      }
      notify_one(domain, ev, fault_us);
    }
  }

  void notify_one(const DomainId& domain, const broker::TopologyEvent& ev, std::int64_t fault_us) {
    auto& b = brokers_.at(domain);
    std::map<InstanceId, place::Placement> before;
    for (const auto& [id, inst] : b.instances()) before[id] = inst.placement;
    auto plan = b.on_topology_event(ev, ctx());
    note_stages(domain);

    std::set<InstanceId> touched(plan.affected.begin(), plan.affected.end());
    touched.insert(plan.resumed.begin(), plan.resumed.end());
    for (const auto& id : touched) {
      const auto& inst = b.instances().at(id);
      auto& ir = instances_[id];
      if (plan.placements.count(id)) {
        detail_.repairs.push_back({domain, id, fault_us, now_});
        ir.repair_delay_ms = static_cast<double>(now_ - fault_us) / 1000.0;
        ship_partitions(inst, &before.at(id));
      }
      if (!inst.suspended) ir.pending_fault_us = fault_us;
    }
    for (const auto& [sub, pubs] : plan.replay)
      for (const auto& p : pubs)
        for (const auto& a : b.replay_actions(sub, p)) dispatch(domain, a, Lineage::of(p));
  }

  // -------------------------------------------------------------------------
  // Report
  // -------------------------------------------------------------------------

  RunDetail finish() {
    auto& r = detail_.report;
    r.duration_ms = sc_.sim.duration_ms;
    r.seed = seed_;

    std::map<SubId, std::set<PublicationKey>> evicted;
    for (const auto& [domain, b] : brokers_)
      for (const auto& [sub, key] : b.evictions()) evicted[sub].insert(key);

    std::vector<SubId> ids;
    for (const auto& s : sc_.subscriptions) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      const auto& rt = subs_.at(id);
      SubscriptionMetrics m;
      m.id = id;
      m.delivered = rt.delivered;
      m.duplicates_suppressed = rt.duplicates;
      m.applied_versions = rt.applied;
      m.inputs_delivered = rt.seen.size();
      std::uint64_t reached = 0;
      for (const auto& [key, t] : detail_.injected[id]) {
        ++m.injected;
        if (rt.seen.count(key)) ++reached;
        else if (rt.filtered.count(key)) ++m.filtered;
        else if (evicted[id].count(key)) ++m.dropped;
      }
      m.in_flight_at_end = m.injected - reached - m.filtered - m.dropped;
      if (!rt.latencies_us.empty()) {
        auto lat = rt.latencies_us;
        std::sort(lat.begin(), lat.end());
        std::int64_t sum = 0;
        for (auto v : lat) sum += v;
        m.latency_mean_ms = static_cast<double>(sum) / static_cast<double>(lat.size()) / 1000.0;
        const auto rank = (95 * lat.size() + 99) / 100;  // nearest rank
        m.latency_p95_ms = static_cast<double>(lat[rank - 1]) / 1000.0;
      }
      r.subscriptions.push_back(std::move(m));
    }

    for (const auto& [key, l] : topology_.links()) {
      auto it = link_bytes_.find(key);
      r.links.push_back({key.first, key.second, it == link_bytes_.end() ? 0 : it->second, topology_.is_bridge(l)});
    }
    for (const auto& [id, n] : nodes_)
      r.nodes.push_back({id, n.busy_us, static_cast<double>(n.busy_us) / static_cast<double>(duration_us_)});
    for (const auto& [key, s] : stage_metrics_) r.stages.push_back(s);

    for (const auto& [domain, b] : brokers_) {
      for (const auto& [id, inst] : b.instances()) {
        const auto& ir = instances_[id];
        r.instances.push_back({id, inst.sub_id, inst.repairs, inst.suspended, ir.recovery_ms, ir.repair_delay_ms});
        detail_.final_placements[id] = inst.placement;
      }
      detail_.aggregations.insert(detail_.aggregations.end(), b.aggregation_log().begin(),
                                  b.aggregation_log().end());
      detail_.stale_updates += b.stale_updates();
    }
    r.sum_totals(injected_, lost_);
    return std::move(detail_);
  }

  const Scenario& sc_;
  std::uint64_t seed_;
  RunOptions options_;
  Topology topology_;
  place::WorkloadSpec workload_;
  broker::PlacementPolicy policy_;
  std::int64_t duration_us_;
  std::int64_t now_ = 0;

  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t next_event_ = 0;
  std::map<std::uint64_t, Message> messages_;
  std::uint64_t next_msg_ = 0;
  std::map<std::uint64_t, Job> jobs_;
  std::uint64_t next_job_ = 0;

  std::map<DomainId, Broker> brokers_;
  std::map<NodeId, DomainId> broker_nodes_;
  std::map<DomainId, std::vector<std::pair<broker::TopologyEvent, std::int64_t>>> deferred_;

  std::unique_ptr<RouteTable> routes_;
  std::uint64_t routes_version_ = 0;
  std::uint64_t topology_version_ = 0;

  std::map<NodeId, NodeRuntime> nodes_;
  std::map<SubId, SubRuntime> subs_;
  std::map<InstanceId, InstanceRuntime> instances_;
  std::map<std::string, FunnelRuntime> funnels_;
  std::map<std::string, std::uint64_t> stage_seq_;
  std::map<std::string, StageMetrics> stage_metrics_;
  std::map<LinkKey, std::uint64_t> link_bytes_;

  std::map<std::string, NodeId> publishers_;
  std::map<std::string, Stream> arrivals_;
  std::map<std::string, Stream> payloads_;
  std::map<std::string, std::uint64_t> pub_seq_;
  std::map<std::string, std::uint64_t> generated_;
  std::map<std::string, Stream> training_rngs_;
  std::map<std::pair<ModelId, NodeId>, ops::ModelUpdate> last_delta_;
  std::uint64_t shipments_ = 0;

  std::uint64_t injected_ = 0;
  std::uint64_t lost_ = 0;
  RunDetail detail_;
};

}  // namespace

RunDetail run_detailed(const Scenario& sc, std::uint64_t seed, const RunOptions& options) {
  return Simulator(sc, seed, options).run();
}

std::vector<PlannedInstance> plan(const Scenario& sc, broker::PlacementPolicy policy) {
  RunOptions options;
  options.policy = policy;
  return Simulator(sc, sc.sim.seed, options).plan();
}

MetricsReport run(const Scenario& sc, std::uint64_t seed) { return run_detailed(sc, seed).report; }

Comparison compare(const Scenario& sc, std::uint64_t seed) {
  RunOptions up, base;
  up.policy = broker::PlacementPolicy::Upstream;
  base.policy = broker::PlacementPolicy::Baseline;
  return {run_detailed(sc, seed, up).report, run_detailed(sc, seed, base).report};
}

std::vector<MetricsReport> run_sweep_serial(const Scenario& sc, std::span<const std::uint64_t> seeds) {
  std::vector<MetricsReport> out;
  out.reserve(seeds.size());
  for (auto s : seeds) out.push_back(run(sc, s));
  return out;
}

std::vector<MetricsReport> run_sweep(const Scenario& sc, std::span<const std::uint64_t> seeds) {
  std::vector<MetricsReport> out(seeds.size());
  const auto n = static_cast<std::int64_t>(seeds.size());
  // Runs share nothing but the read-only scenario.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = run(sc, seeds[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace nps::sim
