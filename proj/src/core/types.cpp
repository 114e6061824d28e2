#include "nps/core/types.hpp"

#include "nps/core/error.hpp"

namespace nps {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidTopic: return "InvalidTopic";
    case ErrorCode::InvalidFilter: return "InvalidFilter";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SplitArity: return "SplitArity";
    case ErrorCode::NoRoute: return "NoRoute";
    case ErrorCode::UnknownFn: return "UnknownFn";
    case ErrorCode::UnknownPredicate: return "UnknownPredicate";
    case ErrorCode::UnexpectedInput: return "UnexpectedInput";
    case ErrorCode::MixedVersions: return "MixedVersions";
    case ErrorCode::MixedModels: return "MixedModels";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SearchSpaceTooLarge: return "SearchSpaceTooLarge";
    case ErrorCode::NoFeasiblePlacement: return "NoFeasiblePlacement";
    case ErrorCode::InstanceTerminated: return "InstanceTerminated";
    case ErrorCode::StaleVersion: return "StaleVersion";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::NoPublisher: return "NoPublisher";
    case ErrorCode::AmbiguousPublisher: return "AmbiguousPublisher";
    case ErrorCode::UnknownSubscription: return "UnknownSubscription";
    case ErrorCode::DuplicateSubscription: return "DuplicateSubscription";
    case ErrorCode::DuplicatePeer: return "DuplicatePeer";
    case ErrorCode::BrokerUnavailable: return "BrokerUnavailable";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

PublicationKey key_of(const Publication& p) { return {p.source, p.topic.str(), p.seq}; }

const StageSpec* PipelineSpec::find(const StageId& id) const {
  for (const auto& s : stages)
    if (s.id == id) return &s;
  return nullptr;
}

LinkKey link_key(const NodeId& x, const NodeId& y) {
  return x < y ? LinkKey{x, y} : LinkKey{y, x};
}

void Topology::add_node(NodeDescriptor node) {
  if (node.id.empty()) throw Error(ErrorCode::InvalidArgument, "node id must be nonempty");
  if (!node.cpu_capacity.is_positive())
    throw Error(ErrorCode::InvalidArgument, "node " + node.id + ": cpu_capacity must be > 0");
  if (nodes_.count(node.id)) throw Error(ErrorCode::InvalidArgument, "duplicate node " + node.id);
  auto id = node.id;
  nodes_.emplace(std::move(id), std::move(node));
}

void Topology::add_link(LinkDescriptor link) {
  if (link.a == link.b) throw Error(ErrorCode::InvalidArgument, "self-loop link at " + link.a);
  if (!has_node(link.a) || !has_node(link.b))
    throw Error(ErrorCode::InvalidArgument, "link " + link.a + "-" + link.b + " names unknown node");
  if (link.latency_ms.is_negative())
    throw Error(ErrorCode::InvalidArgument, "link latency must be >= 0");
  if (!link.bandwidth_kb_per_ms.is_positive())
    throw Error(ErrorCode::InvalidArgument, "link bandwidth must be > 0");
  auto key = link_key(link.a, link.b);
  if (links_.count(key))
    throw Error(ErrorCode::InvalidArgument, "duplicate link " + key.first + "-" + key.second);
  links_.emplace(key, std::move(link));
}

const NodeDescriptor& Topology::node(const NodeId& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::InvalidArgument, "unknown node " + id);
  return it->second;
}

const LinkDescriptor* Topology::link(const NodeId& x, const NodeId& y) const {
  auto it = links_.find(link_key(x, y));
  return it == links_.end() ? nullptr : &it->second;
}

void Topology::set_node_up(const NodeId& id, bool up) {
  if (!has_node(id)) throw Error(ErrorCode::InvalidArgument, "unknown node " + id);
  if (up)
    down_.erase(id);
  else
    down_.insert(id);
}

bool Topology::link_usable(const LinkDescriptor& l) const {
  return l.state == LinkState::Up && node_up(l.a) && node_up(l.b);
}

void Topology::set_link_state(const NodeId& x, const NodeId& y, LinkState state) {
  auto it = links_.find(link_key(x, y));
  if (it == links_.end()) throw Error(ErrorCode::InvalidArgument, "unknown link " + x + "-" + y);
  it->second.state = state;
}

std::vector<NodeId> Topology::up_nodes() const {
  std::vector<NodeId> out;
  for (const auto& [id, n] : nodes_)
    if (!down_.count(id)) out.push_back(id);
  return out;
}

std::set<DomainId> Topology::domains() const {
  std::set<DomainId> out;
  for (const auto& [id, n] : nodes_) out.insert(n.domain);
  return out;
}

bool Topology::is_bridge(const LinkDescriptor& l) const {
  return node(l.a).domain != node(l.b).domain;
}

Topology Topology::restricted_to(const std::set<DomainId>& domains) const {
  Topology out;
  for (const auto& [id, n] : nodes_)
    if (domains.count(n.domain)) out.nodes_.emplace(id, n);
  for (const auto& [key, l] : links_)
    if (out.has_node(l.a) && out.has_node(l.b)) out.links_.emplace(key, l);
  for (const auto& id : down_)
    if (out.has_node(id)) out.down_.insert(id);
  return out;
}

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::Device: return "device";
    case Tier::Edge: return "edge";
    case Tier::Cloud: return "cloud";
  }
  return "edge";
}

std::string_view to_string(TaskTag t) {
  switch (t) {
    case TaskTag::Text: return "text";
    case TaskTag::Aural: return "aural";
    case TaskTag::Visual: return "visual";
    case TaskTag::Telemetry: return "telemetry";
  }
  return "telemetry";
}

std::string_view to_string(PayloadTag t) { return t == PayloadTag::Raw ? "raw" : "derived"; }

Tier parse_tier(std::string_view s) {
  if (s == "device") return Tier::Device;
  if (s == "edge") return Tier::Edge;
  if (s == "cloud") return Tier::Cloud;
  throw Error(ErrorCode::InvalidArgument, "unknown tier '" + std::string(s) + "'");
}

TaskTag parse_task_tag(std::string_view s) {
  if (s == "text") return TaskTag::Text;
  if (s == "aural") return TaskTag::Aural;
  if (s == "visual") return TaskTag::Visual;
  if (s == "telemetry") return TaskTag::Telemetry;
  throw Error(ErrorCode::InvalidArgument, "unknown task tag '" + std::string(s) + "'");
}

}  // namespace nps
