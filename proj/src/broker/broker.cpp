#include "nps/broker/broker.hpp"

#include <algorithm>

#include "nps/core/error.hpp"
#include "nps/core/routing.hpp"

namespace nps::broker {
namespace {

bool path_uses(const std::vector<NodeId>& path, const TopologyEvent& ev) {
  using K = TopologyEvent::Kind;
  if (ev.kind == K::NodeDown || ev.kind == K::NodeUp)
    return std::find(path.begin(), path.end(), ev.a) != path.end();
  for (std::size_t i = 1; i < path.size(); ++i)
    if ((path[i - 1] == ev.a && path[i] == ev.b) || (path[i - 1] == ev.b && path[i] == ev.a))
      return true;
  return false;
}

bool is_down_event(const TopologyEvent& ev) {
  return ev.kind == TopologyEvent::Kind::NodeDown || ev.kind == TopologyEvent::Kind::LinkDown;
}

// The topology as it was before a down event (or is after an up event):
// the element in question is live.
Topology with_element_up(const Topology& t, const TopologyEvent& ev) {
  Topology out = t;
  using K = TopologyEvent::Kind;
  if (ev.kind == K::NodeDown || ev.kind == K::NodeUp) {
    if (out.has_node(ev.a)) out.set_node_up(ev.a, true);
  } else if (out.link(ev.a, ev.b)) {
    out.set_link_state(ev.a, ev.b, LinkState::Up);
  }
  return out;
}

}  // namespace

Broker::Broker(DomainId domain, NodeId node, std::size_t buffer_capacity)
    : domain_(std::move(domain)), node_(std::move(node)), capacity_(buffer_capacity) {
  if (capacity_ == 0) throw Error(ErrorCode::InvalidArgument, "buffer capacity must be >= 1");
}

Topic Broker::update_topic(const ModelId& model) { return Topic("models/" + model + "/updates"); }

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

std::vector<Delivery> Broker::register_model(ModelDescriptor m, SimTime now) {
  if (m.layers.empty() && !m.application)
    throw Error(ErrorCode::InvalidArgument, "model " + m.id + " has no layers");
  auto it = models_.find(m.id);
  const bool upgrade = it != models_.end();
  if (upgrade && m.version <= it->second.version)
    throw Error(ErrorCode::StaleVersion, m.id + " v" + std::to_string(m.version) +
                                             " is not newer than v" +
                                             std::to_string(it->second.version));
  const auto& stored = models_[m.id] = std::move(m);
  std::vector<Delivery> out;
  for (const auto& [id, sub] : subs_) {
    const auto* mu = std::get_if<ModelUpdateSub>(&sub.kind);
    if (!mu || mu->model != stored.id || stored.version < mu->min_version) continue;
    if (stored.version <= sub_state_[id].last_version) continue;
    out.push_back(update_delivery(id, sub, stored, now));
  }
  return out;
}

std::vector<ModelDescriptor> Broker::discover(const DiscoverQuery& q) const {
  std::vector<ModelDescriptor> out;
  for (const auto& [id, m] : models_) {
    if (q.task && m.task != *q.task) continue;
    if (q.model_id && id != *q.model_id) continue;
    out.push_back(m);
  }
  return out;
}

const ModelDescriptor* Broker::model(const ModelId& id) const {
  auto it = models_.find(id);
  return it == models_.end() ? nullptr : &it->second;
}

Delivery Broker::update_delivery(const SubId& sub, const Subscription& s, const ModelDescriptor& m,
                                 SimTime now) {
  Publication p;
  p.topic = update_topic(m.id);
  p.source = node_;
  p.seq = m.version;
  p.ts = now;
  p.size_bytes = std::max<std::uint64_t>(1, 8 * m.params.size());
  p.payload = m.params;
  p.tag = PayloadTag::Derived;
  sub_state_[sub].last_version = m.version;
  buffer_publication(sub, p);
  return Delivery{sub, s.subscriber, std::move(p), node_};
}

// ---------------------------------------------------------------------------
// Subscriptions
// ---------------------------------------------------------------------------

std::vector<Delivery> Broker::subscribe(const Subscription& sub, const Context& ctx) {
  if (!available_) throw Error(ErrorCode::BrokerUnavailable, "broker " + node_ + " is down");
  if (subs_.count(sub.id)) throw Error(ErrorCode::DuplicateSubscription, sub.id);
  const auto& sub_domain = ctx.topology.node(sub.subscriber).domain;
  if (sub_domain != domain_ &&
      std::none_of(peers_.begin(), peers_.end(),
                   [&](const PeerLink& p) { return p.domain == sub_domain; }))
    throw Error(ErrorCode::InvalidArgument,
                "subscriber " + sub.subscriber + " is outside this and every peer domain");

  std::vector<Delivery> out;
  if (const auto* inf = std::get_if<InferenceSub>(&sub.kind)) {
    if (inf->k < 1) throw Error(ErrorCode::SplitArity, "k must be >= 1");
    place::PipelineInstance inst;
    if (const auto* m = model(inf->model))
      inst = build_instance(sub, *m, domain_, node_, ctx);
    else
      inst = resolve_remote(sub, ctx);
    subs_.emplace(sub.id, sub);
    sub_state_[sub.id];
    instance_of_[sub.id] = inst.id;
    instances_.emplace(inst.id, std::move(inst));
    rebuild_graph();
  } else if (const auto* mu = std::get_if<ModelUpdateSub>(&sub.kind)) {
    subs_.emplace(sub.id, sub);
    sub_state_[sub.id];
    if (const auto* m = model(mu->model); m && m->version >= mu->min_version)
      out.push_back(update_delivery(sub.id, subs_.at(sub.id), *m, SimTime{0}));
  } else {
    subs_.emplace(sub.id, sub);
    sub_state_[sub.id];
  }
  return out;
}

place::PipelineInstance Broker::build_instance(const Subscription& sub, const ModelDescriptor& m,
                                               const DomainId& home, const NodeId& home_node,
                                               const Context& ctx) const {
  const auto& inf = std::get<InferenceSub>(sub.kind);
  place::PipelineInstance inst;
  inst.id = "i-" + sub.id;
  inst.sub_id = sub.id;
  inst.model_id = m.id;
  inst.privacy_split = inf.privacy_split;
  inst.model_source = home_node;
  inst.pipeline = m.application ? *m.application
                                : split_model(m, inf.k, inf.privacy_split, inf.filter);
  inst.endpoints.subscriber = sub.subscriber;

  inst.domains = {domain_, home, ctx.topology.node(sub.subscriber).domain};
  for (const auto& [stage, filter] : inst.pipeline.source_bindings) {
    std::set<NodeId> publishers;
    for (const auto& b : ctx.bindings)
      if (match_filter(filter, b.topic)) publishers.insert(b.publisher);
    if (publishers.empty())
      throw Error(ErrorCode::NoPublisher, "no binding matches '" + filter.str() + "'");
    if (publishers.size() > 1)
      throw Error(ErrorCode::AmbiguousPublisher,
                  "several publishers match '" + filter.str() + "': " + *publishers.begin() +
                      ", " + *std::next(publishers.begin()));
    inst.endpoints.publishers[stage] = *publishers.begin();
    inst.domains.insert(ctx.topology.node(*publishers.begin()).domain);
  }
  for (const auto& d : inst.domains)
    if (d != domain_) {
      inst.remote_domain = d;
      break;
    }

  const Topology t = instance_topology(inst, ctx.topology);

  // Reuse the prefix of a compatible live instance so it executes once.
  if (ctx.policy == PlacementPolicy::Upstream) {
    const place::PipelineInstance* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& [id, other] : instances_) {
      if (other.suspended || other.model_id != inst.model_id ||
          other.endpoints.publishers != inst.endpoints.publishers || other.domains != inst.domains)
        continue;
      const auto len = place::common_prefix(other.pipeline, inst.pipeline).size();
      if (len > best_len) {
        best = &other;
        best_len = len;
      }
    }
    if (best) {
      place::UpstreamOptions options;
      for (const auto& id : place::common_prefix(best->pipeline, inst.pipeline))
        options.fixed[id] = best->placement.assignment.at(id);
      try {
        inst.placement = place::place_upstream(inst.pipeline, t, ctx.workload, ctx.objective,
                                               inst.endpoints, options);
        return inst;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoFeasiblePlacement) throw;
      }
    }
  }
  inst.placement = place_instance(inst, t, ctx);
  return inst;
}

place::Placement Broker::place_instance(const place::PipelineInstance& inst, const Topology& t,
                                        const Context& ctx) const {
  switch (ctx.policy) {
    case PlacementPolicy::Baseline:
      return place::place_baseline_subscriber(inst.pipeline, t, inst.endpoints);
    case PlacementPolicy::Oracle:
      try {
        return place::place_oracle(inst.pipeline, t, ctx.workload, ctx.objective, inst.endpoints);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SearchSpaceTooLarge) throw;
      }
      [[fallthrough]];
    case PlacementPolicy::Upstream:
      break;
  }
  return place::place_upstream(inst.pipeline, t, ctx.workload, ctx.objective, inst.endpoints);
}

Topology Broker::instance_topology(const place::PipelineInstance& inst, const Topology& t) const {
  return t.restricted_to(inst.domains);
}

place::PipelineInstance Broker::resolve_remote(const Subscription& sub, const Context& ctx) const {
  const auto& inf = std::get<InferenceSub>(sub.kind);
  std::vector<const PeerLink*> order;
  for (const auto& p : peers_) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](const PeerLink* a, const PeerLink* b) { return a->domain < b->domain; });
  for (const auto* peer : order) {
    if (!peer->peer) continue;
    const auto* m = peer->peer->model(inf.model);
    if (!m) continue;
    const auto* bridge = ctx.topology.link(peer->bridge.a, peer->bridge.b);
    if (!bridge || !ctx.topology.link_usable(*bridge) || !peer->peer->available()) continue;
    return build_instance(sub, *m, peer->domain, peer->peer->node(), ctx);
  }
  throw Error(ErrorCode::UnknownModel, "model " + inf.model + " is not registered locally or at any reachable peer");
}

void Broker::link_peer(PeerLink peer) {
  for (const auto& p : peers_)
    if (p.domain == peer.domain) throw Error(ErrorCode::DuplicatePeer, "already linked to " + peer.domain);
  if (peer.domain == domain_) throw Error(ErrorCode::InvalidArgument, "cannot peer with own domain");
  peers_.push_back(std::move(peer));
}

const place::PipelineInstance* Broker::instance_for(const SubId& sub) const {
  auto it = instance_of_.find(sub);
  return it == instance_of_.end() ? nullptr : &instances_.at(it->second);
}

void Broker::rebuild_graph() {
  std::vector<place::PipelineInstance> live;
  for (const auto& [id, inst] : instances_) live.push_back(inst);
  graph_ = place::merge_shared_prefix(live);
}

// ---------------------------------------------------------------------------
// Data plane
// ---------------------------------------------------------------------------

void Broker::buffer_publication(const SubId& sub, const Publication& p) {
  auto& st = sub_state_[sub];
  st.buffer.push_back(p);
  while (st.buffer.size() > capacity_) {
    evictions_.emplace_back(sub, key_of(st.buffer.front()));
    st.buffer.pop_front();
    ++st.dropped;
  }
}

std::vector<Action> Broker::on_publish(const Publication& p) {
  auto& mark = watermarks_[{p.source, p.topic.str()}];
  if (p.seq <= mark) return {};
  mark = p.seq;

  std::vector<Action> out;
  for (const auto& [id, sub] : subs_) {
    const auto* data = std::get_if<DataSub>(&sub.kind);
    if (!data || !match_filter(data->filter, p.topic)) continue;
    buffer_publication(id, p);
    out.push_back(Delivery{id, sub.subscriber, p, p.source});
  }
  std::set<SubId> buffered;
  for (const auto* entry : graph_.entries()) {
    if (entry->publisher != p.source || !match_filter(*entry->entry_filter, p.topic)) continue;
    out.push_back(StageTask{entry->key, entry->node, p});
    for (const auto& inst : entry->members) {
      const auto& sub = instances_.at(inst).sub_id;
      if (buffered.insert(sub).second) buffer_publication(sub, p);
    }
  }
  return out;
}

void Broker::on_ack(const SubId& sub, std::uint64_t seq) {
  auto it = sub_state_.find(sub);
  if (it == sub_state_.end()) throw Error(ErrorCode::UnknownSubscription, sub);
  auto& buf = it->second.buffer;
  buf.erase(std::remove_if(buf.begin(), buf.end(), [&](const Publication& p) { return p.seq <= seq; }),
            buf.end());
}

void Broker::on_ack(const SubId& sub, const PublicationKey& key) {
  auto it = sub_state_.find(sub);
  if (it == sub_state_.end()) throw Error(ErrorCode::UnknownSubscription, sub);
  auto& buf = it->second.buffer;
  buf.erase(std::remove_if(buf.begin(), buf.end(),
                           [&](const Publication& p) {
                             return p.source == key.source && p.topic.str() == key.topic &&
                                    p.seq <= key.seq;
                           }),
            buf.end());
}

std::vector<Publication> Broker::buffer(const SubId& sub) const {
  auto it = sub_state_.find(sub);
  if (it == sub_state_.end()) throw Error(ErrorCode::UnknownSubscription, sub);
  return {it->second.buffer.begin(), it->second.buffer.end()};
}

std::uint64_t Broker::dropped(const SubId& sub) const {
  auto it = sub_state_.find(sub);
  if (it == sub_state_.end()) throw Error(ErrorCode::UnknownSubscription, sub);
  return it->second.dropped;
}

// ---------------------------------------------------------------------------
// Robustness
// ---------------------------------------------------------------------------

bool Broker::instance_uses(const place::PipelineInstance& inst, const Topology& t,
                           const TopologyEvent& ev) const {
  const auto& assign = inst.placement.assignment;
  RouteTable table(t);
  auto check = [&](const NodeId& from, const NodeId& to) {
    if (from == to) return path_uses({from}, ev);
    const auto* r = table.find(from, to);
    return r && path_uses(r->path, ev);
  };
  for (const auto& [stage, pub] : inst.endpoints.publishers)
    if (check(pub, assign.at(stage))) return true;
  for (const auto& [a, b] : inst.pipeline.edges)
    if (check(assign.at(a), assign.at(b))) return true;
  return check(assign.at(inst.pipeline.sink), inst.endpoints.subscriber);
}

bool Broker::data_sub_uses(const SubId& sub, const Topology& t, const TopologyEvent& ev) const {
  const auto& s = subs_.at(sub);
  const auto& buf = sub_state_.at(sub).buffer;
  if (buf.empty()) return false;
  RouteTable table(t);
  std::set<NodeId> sources;
  for (const auto& p : buf) sources.insert(std::holds_alternative<ModelUpdateSub>(s.kind) ? node_ : p.source);
  for (const auto& src : sources) {
    if (!t.has_node(src)) continue;
    if (src == s.subscriber) {
      if (path_uses({src}, ev)) return true;
      continue;
    }
    const auto* r = table.find(src, s.subscriber);
    if (r && path_uses(r->path, ev)) return true;
  }
  return false;
}

RepairPlan Broker::on_node_failure(const NodeId& failed, const Context& ctx) {
  return on_topology_event({TopologyEvent::Kind::NodeDown, failed, {}}, ctx);
}

RepairPlan Broker::on_topology_event(const TopologyEvent& ev, const Context& ctx) {
  using K = TopologyEvent::Kind;
  RepairPlan plan;
  const Topology live = with_element_up(ctx.topology, ev);  // element up: before a down, after an up

  auto replay = [&](const SubId& sub) {
    const auto& buf = sub_state_.at(sub).buffer;
    if (!buf.empty()) plan.replay[sub] = {buf.begin(), buf.end()};
  };
  auto endpoints_up = [&](const place::PipelineInstance& inst) {
    if (!ctx.topology.node_up(inst.endpoints.subscriber)) return false;
    for (const auto& [stage, pub] : inst.endpoints.publishers)
      if (!ctx.topology.node_up(pub)) return false;
    return true;
  };

  for (auto& [id, inst] : instances_) {
    if (inst.suspended) {
      if (is_down_event(ev) || !endpoints_up(inst)) continue;
      try {
        inst.placement = place_instance(inst, instance_topology(inst, ctx.topology), ctx);
      } catch (const Error&) {
        continue;
      }
      inst.suspended = false;
      ++inst.repairs;
      plan.resumed.push_back(id);
      plan.placements[id] = inst.placement;
      replay(inst.sub_id);
      continue;
    }

    if (ev.kind == K::NodeDown && !endpoints_up(inst)) {
      inst.suspended = true;
      plan.affected.push_back(id);
      plan.suspended.push_back(id);
      continue;
    }
    if (!instance_uses(inst, instance_topology(inst, live), ev)) continue;
    plan.affected.push_back(id);

    if (is_down_event(ev)) {
      const Topology now = instance_topology(inst, ctx.topology);
      try {
        const bool hosts = ev.kind == K::NodeDown &&
                           std::any_of(inst.placement.assignment.begin(), inst.placement.assignment.end(),
                                       [&](const auto& kv) { return kv.second == ev.a; });
        place::Placement next = inst.placement;
        if (hosts) {
          next = place::replan(inst.placement, {ev.a}, inst.pipeline, now, ctx.workload,
                               ctx.objective, inst.endpoints);
        } else if (!place::cost(inst.placement, inst.pipeline, now, ctx.workload, ctx.objective,
                                inst.endpoints)
                        .feasible) {
          next = place_instance(inst, now, ctx);
        }
        inst.placement = std::move(next);
        ++inst.repairs;
        plan.placements[id] = inst.placement;
      } catch (const Error&) {
        inst.suspended = true;
        plan.suspended.push_back(id);
        continue;
      }
    }
    replay(inst.sub_id);
  }

  for (const auto& [id, sub] : subs_) {
    if (std::holds_alternative<InferenceSub>(sub.kind)) continue;
    if (!ctx.topology.node_up(sub.subscriber)) continue;
    if (data_sub_uses(id, live, ev)) replay(id);
  }
  rebuild_graph();
  return plan;
}

std::vector<Action> Broker::replay_actions(const SubId& sub, const Publication& p) const {
  const auto& s = subs_.at(sub);
  if (std::holds_alternative<DataSub>(s.kind)) return {Delivery{sub, s.subscriber, p, p.source}};
  if (std::holds_alternative<ModelUpdateSub>(s.kind)) return {Delivery{sub, s.subscriber, p, node_}};
  const auto* inst = instance_for(sub);
  std::vector<Action> out;
  if (!inst || inst->suspended) return out;
  const auto& keys = graph_.stage_keys.at(inst->id);
  for (const auto& [stage, filter] : inst->pipeline.source_bindings) {
    if (inst->endpoints.publishers.at(stage) != p.source || !match_filter(filter, p.topic)) continue;
    const auto& key = keys.at(stage);
    out.push_back(StageTask{key, graph_.stages.at(key).node, p});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void Broker::expect_trainers(const ModelId& model, std::set<NodeId> trainers) {
  if (trainers.empty()) throw Error(ErrorCode::InvalidArgument, "no trainers for " + model);
  trainers_[model] = std::move(trainers);
}

TrainingOutcome Broker::on_training_update(const NodeId& trainer, const ops::ModelUpdate& u,
                                           SimTime now) {
  TrainingOutcome out;
  const auto* m = model(u.model_id);
  if (!m) throw Error(ErrorCode::UnknownModel, u.model_id);
  auto expected = trainers_.find(u.model_id);
  if (expected == trainers_.end() || !expected->second.count(trainer))
    throw Error(ErrorCode::InvalidArgument, trainer + " is not a trainer of " + u.model_id);
  if (u.version <= m->version) {
    ++stale_updates_;
    out.stale = true;
    return out;
  }
  auto& versions = pending_updates_[u.model_id];
  auto& offers = versions[u.version];
  offers.insert_or_assign(trainer, u);
  if (offers.size() < expected->second.size()) return out;

  std::vector<ops::ModelUpdate> batch;
  for (const auto& [node, update] : offers) batch.push_back(update);
  auto mean = ops::aggregate_updates(batch);
  ModelDescriptor next = *m;
  if (mean.delta.size() != next.params.size())
    throw Error(ErrorCode::LengthMismatch, "update length differs from params of " + next.id);
  for (std::size_t i = 0; i < next.params.size(); ++i) next.params[i] += mean.delta[i];
  next.version = mean.version;
  versions.erase(versions.begin(), versions.upper_bound(mean.version));
  aggregation_log_.push_back(mean);
  out.aggregated = std::move(mean);
  out.deliveries = register_model(std::move(next), now);
  return out;
}

}  // namespace nps::broker
