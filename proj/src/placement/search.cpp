#include "nps/placement/search.hpp"

#include <algorithm>
#include <cstdint>
#include <tuple>

#include "nps/core/error.hpp"

namespace nps::place {
namespace {

constexpr auto kNone = CostModel::kUnassigned;

// Dense rank of every node by route distance (latency, then hops) from each
// node; unreachable nodes rank last.
std::vector<std::size_t> distance_ranks(const CostModel& m) {
  const std::size_t n = m.nodes().size();
  std::vector<std::size_t> ranks(n * n, n);
  for (std::size_t from = 0; from < n; ++from) {
    std::vector<std::size_t> order;
    for (std::size_t to = 0; to < n; ++to)
      if (m.route(from, to)) order.push_back(to);
    auto dist = [&](std::size_t to) {
      const auto* r = m.route(from, to);
      return std::make_tuple(r->latency_ms, r->hops());
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return dist(x) < dist(y); });
    std::size_t rank = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i > 0 && dist(order[i]) != dist(order[i - 1])) ++rank;
      ranks[from * n + order[i]] = rank;
    }
  }
  return ranks;
}

struct Candidate {
  std::optional<Rational> objective;
  std::vector<std::size_t> assign;
};

class OracleSearch {
 public:
  OracleSearch(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
               const Objective& o, const Endpoints& ends)
      : model_(p, t, w, o, ends), ranks_(distance_ranks(model_)) {
    const std::size_t n_stages = model_.stage_count();
    base_.assign(n_stages, kNone);
    for (std::size_t i = 0; i < n_stages; ++i) {
      if (!model_.pinned(i)) {
        free_.push_back(i);
        continue;
      }
      auto target = model_.pin_target(i);
      if (!target)
        throw Error(ErrorCode::NoFeasiblePlacement,
                    "pin of stage " + model_.graph().stage(i).id + " cannot be resolved");
      base_[i] = *target;
    }
    for (std::size_t m = 0; m < model_.nodes().size(); ++m)
      if (model_.node_up(m)) up_.push_back(m);

    total_ = 1;
    for (std::size_t k = 0; k < free_.size(); ++k) {
      if (up_.empty()) {
        total_ = 0;
        break;
      }
      if (total_ > kOracleLimit / up_.size())
        throw Error(ErrorCode::SearchSpaceTooLarge,
                    std::to_string(up_.size()) + "^" + std::to_string(free_.size()) +
                        " assignments exceed the oracle limit");
      total_ *= up_.size();
    }
  }

  std::uint64_t total() const { return total_; }

  void decode(std::uint64_t index, std::vector<std::size_t>& assign) const {
    // The last free stage is the fastest-moving digit, so enumeration runs in
    // lexicographic order of the node vector.
    for (std::size_t k = free_.size(); k-- > 0;) {
      assign[free_[k]] = up_[index % up_.size()];
      index /= up_.size();
    }
  }

  std::vector<std::size_t> base() const { return base_; }

  void consider(Candidate& best, const std::vector<std::size_t>& assign) const {
    auto obj = model_.objective_if_feasible(assign);
    if (!obj) return;
    if (!best.objective || better(*obj, assign, *best.objective, best.assign)) {
      best.objective = std::move(obj);
      best.assign = assign;
    }
  }

  void merge(Candidate& into, const Candidate& other) const {
    if (!other.objective) return;
    if (!into.objective || better(*other.objective, other.assign, *into.objective, into.assign))
      into = other;
  }

  Placement finish(const Candidate& best) const {
    if (!best.objective)
      throw Error(ErrorCode::NoFeasiblePlacement, "no assignment satisfies every constraint");
    return model_.to_placement(best.assign);
  }

 private:
  bool better(const Rational& oa, const std::vector<std::size_t>& a, const Rational& ob,
              const std::vector<std::size_t>& b) const {
    if (oa != ob) return oa < ob;
    const std::size_t n = model_.nodes().size();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto pub = model_.primary_publisher(i);
      const auto ra = ranks_[pub * n + a[i]];
      const auto rb = ranks_[pub * n + b[i]];
      if (ra != rb) return ra < rb;
    }
    return a < b;
  }

  CostModel model_;
  std::vector<std::size_t> ranks_;
  std::vector<std::size_t> base_;
  std::vector<std::size_t> free_;
  std::vector<std::size_t> up_;
  std::uint64_t total_ = 0;
};

}  // namespace

Placement place_oracle(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                       const Objective& o, const Endpoints& ends) {
  OracleSearch search(p, t, w, o, ends);
  const auto total = static_cast<std::int64_t>(search.total());
  Candidate best;
#pragma omp parallel
  {
    Candidate local;
    auto assign = search.base();
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
      search.decode(static_cast<std::uint64_t>(i), assign);
      search.consider(local, assign);
    }
    // `better` is a strict total order, so the merge order does not matter.
#pragma omp critical(nps_oracle_merge)
    search.merge(best, local);
  }
  return search.finish(best);
}

Placement place_oracle(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                       const Objective& o, const NodeId& publisher, const NodeId& subscriber) {
  return place_oracle(p, t, w, o, Endpoints::single(p, publisher, subscriber));
}

Placement place_oracle_serial(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                              const Objective& o, const Endpoints& ends) {
  OracleSearch search(p, t, w, o, ends);
  Candidate best;
  auto assign = search.base();
  for (std::uint64_t i = 0; i < search.total(); ++i) {
    search.decode(i, assign);
    search.consider(best, assign);
  }
  return search.finish(best);
}

// ---------------------------------------------------------------------------
// Balanced upstream heuristic
// ---------------------------------------------------------------------------

namespace {

class UpstreamSearch {
 public:
  UpstreamSearch(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                 const Objective& o, const Endpoints& ends, const UpstreamOptions& options)
      : model_(p, t, w, o, ends), graph_(model_.graph()) {
    const std::size_t n = model_.nodes().size();
    const auto sub = model_.subscriber();
    if (!model_.node_up(sub))
      throw Error(ErrorCode::NoFeasiblePlacement, "subscriber " + ends.subscriber + " is down");
    on_route_.assign(n, std::vector<bool>(n, false));
    for (std::size_t m = 0; m < n; ++m)
      if (const auto* r = model_.route(m, sub))
        for (const auto& id : r->path) on_route_[m][model_.node_index(id)] = true;

    assign_.assign(graph_.size(), kNone);
    fixed_.assign(graph_.size(), false);
    for (std::size_t i = 0; i < graph_.size(); ++i) {
      const auto& id = graph_.stage(i).id;
      if (auto f = options.fixed.find(id); f != options.fixed.end()) {
        assign_[i] = model_.node_index(f->second);
        fixed_[i] = true;
      } else if (model_.pinned(i)) {
        auto target = model_.pin_target(i);
        if (!target)
          throw Error(ErrorCode::NoFeasiblePlacement, "pin of stage " + id + " cannot be resolved");
        assign_[i] = *target;
        fixed_[i] = true;
      }
    }
  }

  Placement run() {
    greedy();
    local_search();
    auto report = model_.evaluate(assign_);
    if (!report.feasible) {
      const auto& v = report.violations.front();
      throw Error(ErrorCode::NoFeasiblePlacement,
                  std::string(to_string(v.rule)) + " on " + v.subject + ": " + v.detail);
    }
    return model_.to_placement(assign_);
  }

 private:
  // Larger route distance to the subscriber is further upstream; equal
  // distances fall back to the lower node id.
  bool more_upstream(std::size_t a, std::size_t b) const {
    const auto* ra = model_.route(a, model_.subscriber());
    const auto* rb = model_.route(b, model_.subscriber());
    if (ra->latency_ms != rb->latency_ms) return ra->latency_ms > rb->latency_ms;
    if (ra->hops() != rb->hops()) return ra->hops() > rb->hops();
    return a < b;
  }

  // Entry stages sit on the route from their publisher; every other stage
  // on the routes onward from all of its inputs.
  bool allowed(std::size_t i, std::size_t m, const std::vector<std::size_t>& assign) const {
    if (!model_.node_up(m)) return false;
    if (graph_.is_entry(i)) return on_route_[model_.entry_publisher(i)][m];
    for (auto j : graph_.preds(i))
      if (assign[j] == kNone || !on_route_[assign[j]][m]) return false;
    return true;
  }

  std::vector<std::size_t> candidates(std::size_t i, const std::vector<std::size_t>& assign) const {
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < model_.nodes().size(); ++m)
      if (allowed(i, m, assign)) out.push_back(m);
    std::sort(out.begin(), out.end(),
              [&](std::size_t a, std::size_t b) { return more_upstream(a, b); });
    return out;
  }

  bool order_respected(const std::vector<std::size_t>& assign) const {
    for (std::size_t i = 0; i < graph_.size(); ++i)
      if (!fixed_[i] && !allowed(i, assign[i], assign)) return false;
    return true;
  }

  // Resource check for putting stage i on m next to what is already placed.
  bool fits(std::size_t i, std::size_t m) const {
    if (graph_.stage(i).needs_accelerator && !model_.node_accelerator(m)) return false;
    std::uint64_t mem = graph_.stage(i).mem_mb;
    Rational load = model_.load(i);
    for (std::size_t j = 0; j < graph_.size(); ++j) {
      if (j == i || assign_[j] != m) continue;
      mem += graph_.stage(j).mem_mb;
      load += model_.load(j);
    }
    return mem <= model_.node_mem(m) && load <= model_.node_capacity(m);
  }

  void greedy() {
    for (auto i : graph_.topo_order()) {
      if (fixed_[i]) continue;
      for (auto m : candidates(i, assign_)) {
        if (!fits(i, m)) continue;
        assign_[i] = m;
        break;
      }
      if (assign_[i] == kNone)
        throw Error(ErrorCode::NoFeasiblePlacement,
                    "no node on the route can host stage " + graph_.stage(i).id);
    }
  }

  void local_search() {
    auto current = model_.objective_if_feasible(assign_);
    const std::size_t max_moves = 100 * graph_.size();
    for (std::size_t moves = 0; moves < max_moves; ++moves) {
      struct Move {
        std::size_t stage;
        std::size_t node;
        Rational objective;
      };
      std::optional<Move> best;
      auto trial = assign_;
      for (std::size_t i = 0; i < graph_.size(); ++i) {
        if (fixed_[i]) continue;
        for (auto m : candidates(i, assign_)) {
          if (m == assign_[i]) continue;
          trial[i] = m;
          if (order_respected(trial)) {
            auto obj = model_.objective_if_feasible(trial);
            // An infeasible greedy start accepts any feasible move.
            if (obj && (!current || *obj < *current) &&
                (!best || *obj < best->objective ||
                 (*obj == best->objective && prefer(i, m, best->stage, best->node))))
              best = Move{i, m, *obj};
          }
          trial[i] = assign_[i];
        }
      }
      if (!best) return;
      assign_[best->stage] = best->node;
      current = best->objective;
    }
  }

  // Tie between equally good moves: more upstream target node, then lower
  // node id (inside more_upstream), then the earlier stage.
  bool prefer(std::size_t stage_a, std::size_t node_a, std::size_t stage_b,
              std::size_t node_b) const {
    if (node_a != node_b) return more_upstream(node_a, node_b);
    return stage_a < stage_b;
  }

  CostModel model_;
  const PipelineGraph& graph_;
  std::vector<std::vector<bool>> on_route_;  // [from][m]: m lies on route(from, subscriber)
  std::vector<std::size_t> assign_;
  std::vector<bool> fixed_;
};

}  // namespace

Placement place_upstream(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                         const Objective& o, const Endpoints& ends,
                         const UpstreamOptions& options) {
  return UpstreamSearch(p, t, w, o, ends, options).run();
}

Placement place_upstream(const PipelineSpec& p, const Topology& t, const WorkloadSpec& w,
                         const Objective& o, const NodeId& publisher, const NodeId& subscriber) {
  return place_upstream(p, t, w, o, Endpoints::single(p, publisher, subscriber));
}

Placement place_baseline_subscriber(const PipelineSpec& p, const Topology& t,
                                    const Endpoints& ends) {
  CostModel model(p, t, WorkloadSpec{}, Objective{}, ends);
  std::vector<std::size_t> assign(model.stage_count(), model.subscriber());
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (model.pinned(i))
      if (auto target = model.pin_target(i)) assign[i] = *target;
  return model.to_placement(assign);
}

Placement place_baseline_subscriber(const PipelineSpec& p, const Topology& t,
                                    const NodeId& publisher, const NodeId& subscriber) {
  return place_baseline_subscriber(p, t, Endpoints::single(p, publisher, subscriber));
}

Placement replan(const Placement& pl, const std::set<NodeId>& failed, const PipelineSpec& p,
                 const Topology& t, const WorkloadSpec& w, const Objective& o,
                 const Endpoints& ends) {
  for (const auto& [stage, pub] : ends.publishers)
    if (failed.count(pub)) throw Error(ErrorCode::InstanceTerminated, "publisher " + pub + " failed");
  if (failed.count(ends.subscriber))
    throw Error(ErrorCode::InstanceTerminated, "subscriber " + ends.subscriber + " failed");

  UpstreamOptions options;
  bool touched = false;
  for (const auto& [stage, node] : pl.assignment) {
    if (failed.count(node))
      touched = true;
    else
      options.fixed[stage] = node;
  }
  if (!touched) return pl;

  Topology survivors = t;
  for (const auto& id : failed)
    if (survivors.has_node(id)) survivors.set_node_up(id, false);
  return place_upstream(p, survivors, w, o, ends, options);
}

Placement replan(const Placement& pl, const std::set<NodeId>& failed, const PipelineSpec& p,
                 const Topology& t, const WorkloadSpec& w, const Objective& o,
                 const NodeId& publisher, const NodeId& subscriber) {
  return replan(pl, failed, p, t, w, o, Endpoints::single(p, publisher, subscriber));
}

}  // namespace nps::place
