// Serial reference vs OpenMP kernels: oracle enumeration and seed sweeps.

#include <benchmark/benchmark.h>

#include <numeric>
#include <string>

#include "nps/harness/scenario.hpp"
#include "nps/harness/simulator.hpp"
#include "nps/placement/search.hpp"

namespace {

using namespace nps;

struct OracleCase {
  Topology t;
  PipelineSpec p;
  place::WorkloadSpec w;
  place::Objective o;
  place::Endpoints ends;
};

// Ring of `nodes` with a chord, chain of `stages` mappings.
OracleCase oracle_case(int nodes, int stages) {
  OracleCase c;
  for (int i = 0; i < nodes; ++i) {
    NodeDescriptor n;
    n.id = "n" + std::to_string(i);
    n.cpu_capacity = Rational(1 + i % 3);
    n.mem_mb = 1000;
    c.t.add_node(n);
  }
  auto add = [&](int a, int b, int lat) {
    LinkDescriptor l;
    l.a = "n" + std::to_string(a);
    l.b = "n" + std::to_string(b);
    l.latency_ms = Rational(lat);
    l.bandwidth_kb_per_ms = Rational(5 + a);
    c.t.add_link(l);
  };
  for (int i = 1; i < nodes; ++i) add(i - 1, i, 1 + i % 4);
  add(0, nodes - 1, 7);
  for (int i = 0; i < stages; ++i) {
    StageSpec s;
    s.id = "s" + std::to_string(i);
    s.compute_cost = Rational(1 + i);
    s.selectivity = Rational(3, 4);
    s.mem_mb = 200;
    c.p.stages.push_back(s);
    if (i) c.p.edges.emplace_back("s" + std::to_string(i - 1), s.id);
  }
  c.p.source_bindings.emplace("s0", TopicFilter{"#"});
  c.p.sink = "s" + std::to_string(stages - 1);
  c.w.topics["t"] = place::TopicLoad{4000, Rational(10)};
  c.ends = place::Endpoints::single(c.p, "n0", "n" + std::to_string(nodes / 2));
  return c;
}

void BM_OracleSerial(benchmark::State& state) {
  const auto c = oracle_case(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(place::place_oracle_serial(c.p, c.t, c.w, c.o, c.ends));
}

void BM_OracleParallel(benchmark::State& state) {
  const auto c = oracle_case(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(place::place_oracle(c.p, c.t, c.w, c.o, c.ends));
}

BENCHMARK(BM_OracleSerial)->Args({6, 4})->Args({8, 5})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_OracleParallel)->Args({6, 4})->Args({8, 5})->Unit(benchmark::kMillisecond);

std::vector<std::uint64_t> seeds(std::int64_t n) {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(n));
  std::iota(out.begin(), out.end(), 1);
  return out;
}

const sim::Scenario& nwdaf() {
  static const auto sc = sim::load_scenario_file(NPS_SCENARIO_DIR "/nwdaf.json");
  return sc;
}

void BM_SweepSerial(benchmark::State& state) {
  const auto s = seeds(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sim::run_sweep_serial(nwdaf(), s));
}

void BM_SweepParallel(benchmark::State& state) {
  const auto s = seeds(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sim::run_sweep(nwdaf(), s));
}

BENCHMARK(BM_SweepSerial)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepParallel)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
