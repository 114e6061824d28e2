#include "nps/operators/operators.hpp"

#include <algorithm>
#include <tuple>

#include "nps/core/error.hpp"

namespace nps::ops {
namespace {

std::vector<double> concatenated(std::span<const std::vector<double>> inputs) {
  std::vector<double> out;
  for (const auto& v : inputs) out.insert(out.end(), v.begin(), v.end());
  return out;
}

bool canonical_less(const PendingInput& a, const PendingInput& b) {
  return std::make_tuple(a.publication.topic.str(), std::cref(a.publication.source), a.publication.seq,
                         std::cref(a.input)) <
         std::make_tuple(b.publication.topic.str(), std::cref(b.publication.source), b.publication.seq,
                         std::cref(b.input));
}

// Combines everything pending into one emission and clears the buffer.
FunnelStep emit_all(FunnelState s, SimTime now) {
  FunnelStep step;
  auto consumed = std::move(s.pending);
  s.pending.clear();
  std::sort(consumed.begin(), consumed.end(), canonical_less);

  std::vector<std::vector<double>> payloads;
  std::uint64_t total = 0;
  for (const auto& in : consumed) {
    payloads.push_back(in.publication.payload);
    total += in.publication.size_bytes;
  }

  Publication out;
  out.topic = s.output_topic;
  out.source = s.stage_id;
  out.seq = s.next_seq++;
  out.ts = now;
  out.size_bytes = scaled_size(total, s.selectivity);
  out.payload = apply_fn(s.fn, payloads);
  out.tag = PayloadTag::Derived;

  step.state = std::move(s);
  step.emitted = std::move(out);
  step.consumed = std::move(consumed);
  return step;
}

}  // namespace

bool is_known_fn(const std::string& name) {
  return name == "identity" || name == "scale" || name == "affine" || name == "concat" ||
         name == "mean";
}

bool is_known_predicate(const std::string& name) { return name == "threshold"; }

std::vector<double> apply_fn(const FnSpec& fn, std::span<const std::vector<double>> inputs) {
  if (fn.name == "identity" || fn.name == "concat") return concatenated(inputs);
  if (fn.name == "scale") {
    auto v = concatenated(inputs);
    const double ratio = fn.param("ratio", 1.0);
    for (auto& x : v) x *= ratio;
    return v;
  }
  if (fn.name == "affine") {
    auto v = concatenated(inputs);
    const double a = fn.param("a", 1.0);
    const double b = fn.param("b", 0.0);
    for (auto& x : v) x = a * x + b;
    return v;
  }
  if (fn.name == "mean") {
    std::size_t width = 0;
    for (const auto& v : inputs) width = std::max(width, v.size());
    std::vector<double> sum(width, 0.0);
    std::vector<std::size_t> count(width, 0);
    for (const auto& v : inputs)
      for (std::size_t i = 0; i < v.size(); ++i) {
        sum[i] += v[i];
        ++count[i];
      }
    for (std::size_t i = 0; i < width; ++i) sum[i] /= static_cast<double>(count[i]);
    return sum;
  }
  throw Error(ErrorCode::UnknownFn, "'" + fn.name + "' is not in the function catalog");
}

bool eval_predicate(const FnSpec& predicate, const std::vector<double>& payload) {
  if (predicate.name != "threshold")
    throw Error(ErrorCode::UnknownPredicate, "'" + predicate.name + "' is not a known predicate");
  const double raw_index = predicate.param("index", 0.0);
  if (raw_index < 0) return false;
  const auto index = static_cast<std::size_t>(raw_index);
  if (index >= payload.size()) return false;
  return payload[index] >= predicate.param("min", 0.0);
}

std::uint64_t scaled_size(std::uint64_t bytes, const Rational& selectivity) {
  return std::max<std::uint64_t>(1, selectivity.ceil_mul(bytes));
}

Publication apply_mapping(const StageSpec& stage, const Publication& p) {
  const auto* mapping = std::get_if<MappingKind>(&stage.kind);
  if (!mapping) throw Error(ErrorCode::InvalidArgument, "stage " + stage.id + " is not a mapping");
  Publication out = p;
  std::vector<double> inputs[] = {p.payload};
  out.payload = apply_fn(mapping->fn, inputs);
  out.size_bytes = scaled_size(p.size_bytes, stage.selectivity);
  out.tag = PayloadTag::Derived;
  return out;
}

std::optional<Publication> inference_filter(const StageSpec& stage, const Publication& p) {
  const auto* filter = std::get_if<FilterKind>(&stage.kind);
  if (!filter) throw Error(ErrorCode::InvalidArgument, "stage " + stage.id + " is not a filter");
  if (!eval_predicate(filter->predicate, p.payload)) return std::nullopt;
  Publication out = p;
  out.size_bytes = scaled_size(p.size_bytes, stage.selectivity);
  out.tag = PayloadTag::Derived;
  return out;
}

FunnelState make_funnel_state(const StageSpec& stage, std::vector<StageId> inputs,
                              Topic output_topic) {
  const auto* funnel = std::get_if<FunnelKind>(&stage.kind);
  if (!funnel) throw Error(ErrorCode::InvalidArgument, "stage " + stage.id + " is not a funnel");
  if (!is_known_fn(funnel->fn.name))
    throw Error(ErrorCode::UnknownFn, "'" + funnel->fn.name + "' is not in the function catalog");
  FunnelState s;
  s.stage_id = stage.id;
  s.output_topic = std::move(output_topic);
  s.fn = funnel->fn;
  s.selectivity = stage.selectivity;
  s.policy = funnel->trigger;
  std::sort(inputs.begin(), inputs.end());
  s.inputs = std::move(inputs);
  return s;
}

FunnelStep funnel_offer(FunnelState s, const StageId& input, const Publication& p, SimTime now) {
  if (!std::binary_search(s.inputs.begin(), s.inputs.end(), input))
    throw Error(ErrorCode::UnexpectedInput,
                "funnel " + s.stage_id + " has no input edge from '" + input + "'");

  if (const auto* barrier = std::get_if<BarrierPolicy>(&s.policy)) {
    if (std::find(barrier->inputs.begin(), barrier->inputs.end(), input) == barrier->inputs.end())
      throw Error(ErrorCode::UnexpectedInput,
                  "barrier " + s.stage_id + " does not expect input '" + input + "'");
    auto same = std::find_if(s.pending.begin(), s.pending.end(),
                             [&](const PendingInput& e) { return e.input == input; });
    if (same != s.pending.end())
      same->publication = p;  // newest wins
    else
      s.pending.push_back({input, p});
    if (s.pending.size() == barrier->inputs.size()) return emit_all(std::move(s), now);
    return FunnelStep{std::move(s), std::nullopt, {}};
  }

  s.pending.push_back({input, p});
  if (const auto* count = std::get_if<CountWindowPolicy>(&s.policy)) {
    if (s.pending.size() >= count->n) return emit_all(std::move(s), now);
    return FunnelStep{std::move(s), std::nullopt, {}};
  }
  if (!s.window_open_ts) s.window_open_ts = now;
  return FunnelStep{std::move(s), std::nullopt, {}};
}

FunnelStep funnel_tick(FunnelState s, SimTime now) {
  const auto* window = std::get_if<TimeWindowPolicy>(&s.policy);
  if (!window || !s.window_open_ts || s.pending.empty())
    return FunnelStep{std::move(s), std::nullopt, {}};
  if (now < *s.window_open_ts + from_ms(window->delta_ms))
    return FunnelStep{std::move(s), std::nullopt, {}};
  s.window_open_ts.reset();
  return emit_all(std::move(s), now);
}

ModelUpdate aggregate_updates(std::span<const ModelUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::InvalidArgument, "no updates to aggregate");
  const auto& first = updates.front();
  for (const auto& u : updates) {
    if (u.model_id != first.model_id)
      throw Error(ErrorCode::MixedModels, first.model_id + " vs " + u.model_id);
    if (u.version != first.version)
      throw Error(ErrorCode::MixedVersions,
                  std::to_string(first.version) + " vs " + std::to_string(u.version));
    if (u.delta.size() != first.delta.size())
      throw Error(ErrorCode::LengthMismatch, "delta lengths differ for " + first.model_id);
  }
  // Sum in a canonical order so the mean is permutation-invariant bit for bit.
  std::vector<const ModelUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::sort(order.begin(), order.end(),
            [](const ModelUpdate* a, const ModelUpdate* b) { return a->delta < b->delta; });

  // Accumulating offsets from a pivot keeps identical inputs exact.
  const auto& pivot = order.front()->delta;
  ModelUpdate out{first.model_id, first.version, pivot};
  const double n = static_cast<double>(updates.size());
  for (std::size_t i = 0; i < pivot.size(); ++i) {
    double offset = 0.0;
    for (const auto* u : order) offset += u->delta[i] - pivot[i];
    out.delta[i] = pivot[i] + offset / n;
  }
  return out;
}

}  // namespace nps::ops
