#pragma once

#include <optional>
#include <span>
#include <vector>

#include "nps/core/types.hpp"

namespace nps::ops {

// ---------------------------------------------------------------------------
// Function catalog
//
// Closed set of deterministic stand-ins for AI operators. Functions receive
// the payloads of their inputs in canonical (topic, source, seq) order; a
// mapping stage passes exactly one.
//
//   identity          concatenation of inputs (the payload itself for one input)
//   scale{ratio}      elementwise multiply of the concatenation by ratio
//   affine{a, b}      elementwise a*x + b of the concatenation
//   concat            concatenation
//   mean              elementwise mean across inputs (ragged tails averaged
//                     over the inputs that have them)
//   threshold{index, min}   predicate: payload[index] >= min
// ---------------------------------------------------------------------------

bool is_known_fn(const std::string& name);
bool is_known_predicate(const std::string& name);

/// Throws Error{UnknownFn}.
std::vector<double> apply_fn(const FnSpec& fn, std::span<const std::vector<double>> inputs);
/// Throws Error{UnknownPredicate}. Out-of-range indices evaluate to false.
bool eval_predicate(const FnSpec& predicate, const std::vector<double>& payload);

/// max(1, ceil(bytes * selectivity)): the size law every operator obeys.
std::uint64_t scaled_size(std::uint64_t bytes, const Rational& selectivity);

/// Throws Error{InvalidArgument} if the stage is not a mapping and
/// Error{UnknownFn} for a function outside the catalog.
Publication apply_mapping(const StageSpec& stage, const Publication& p);

/// Returns the retagged, resized publication when the predicate holds and
/// nothing otherwise. Throws Error{UnknownPredicate}.
std::optional<Publication> inference_filter(const StageSpec& stage, const Publication& p);

// ---------------------------------------------------------------------------
// Funnels
// ---------------------------------------------------------------------------

struct PendingInput {
  StageId input;
  Publication publication;

  friend bool operator==(const PendingInput&, const PendingInput&) = default;
};

struct FunnelState {
  StageId stage_id;
  Topic output_topic{"_"};
  FnSpec fn;
  Rational selectivity{1};
  TriggerPolicy policy = CountWindowPolicy{1};
  /// Edges the funnel accepts offers from.
  std::vector<StageId> inputs;
  std::vector<PendingInput> pending;
  std::optional<SimTime> window_open_ts;
  std::uint64_t next_seq = 1;

  friend bool operator==(const FunnelState&, const FunnelState&) = default;
};

/// Fresh state for a funnel stage fed by `inputs`. Throws
/// Error{InvalidArgument} if the stage is not a funnel.
FunnelState make_funnel_state(const StageSpec& stage, std::vector<StageId> inputs,
                              Topic output_topic);

struct FunnelStep {
  FunnelState state;
  std::optional<Publication> emitted;
  /// Publications folded into `emitted`, in combination order.
  std::vector<PendingInput> consumed;
};

/// Buffers `p` arriving over edge `input` and emits when the trigger fires.
/// Barrier keeps the newest publication per input; CountWindow fires on the
/// n-th buffered publication; TimeWindow only opens its window here.
///
/// Throws Error{UnexpectedInput} for an edge the funnel does not consume.
FunnelStep funnel_offer(FunnelState s, const StageId& input, const Publication& p, SimTime now);

/// Closes an open time window once now >= open + delta and emits everything
/// pending. A no-op for other policies and before the boundary.
FunnelStep funnel_tick(FunnelState s, SimTime now);

// ---------------------------------------------------------------------------
// Model updates
// ---------------------------------------------------------------------------

struct ModelUpdate {
  ModelId model_id;
  std::uint64_t version = 0;
  std::vector<double> delta;

  friend bool operator==(const ModelUpdate&, const ModelUpdate&) = default;
};

/// Elementwise mean of the deltas. Throws Error{InvalidArgument} on an empty
/// list, Error{MixedModels}, Error{MixedVersions} or Error{LengthMismatch}.
ModelUpdate aggregate_updates(std::span<const ModelUpdate> updates);

}  // namespace nps::ops
