#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "nps/core/error.hpp"
#include "nps/operators/operators.hpp"

using namespace nps;
using namespace nps::ops;
using namespace nps::testing;

namespace {

Publication pub(const std::string& source, std::uint64_t seq, std::vector<double> payload,
                std::uint64_t size = 10, const std::string& topic = "t") {
  Publication p;
  p.topic = Topic(topic);
  p.source = source;
  p.seq = seq;
  p.size_bytes = size;
  p.payload = std::move(payload);
  return p;
}

StageSpec funnel(const std::string& id, TriggerPolicy trigger, const std::string& fn = "concat",
                 Rational selectivity = Rational{1}) {
  StageSpec s = mapping(id, Rational{1}, selectivity);
  s.kind = FunnelKind{FnSpec{fn, {}}, std::move(trigger)};
  return s;
}

SimTime ms(std::int64_t v) { return from_ms(v); }

}  // namespace

TEST(ApplyMapping, IdentityKeepsEverythingButTag) {
  auto stage = mapping("m");
  auto in = pub("P", 4, {1, 2});
  in.ts = ms(12);
  auto out = apply_mapping(stage, in);
  EXPECT_EQ(out.payload, (std::vector<double>{1, 2}));
  EXPECT_EQ(out.size_bytes, 10u);
  EXPECT_EQ(out.tag, PayloadTag::Derived);
  EXPECT_EQ(out.topic, in.topic);
  EXPECT_EQ(out.source, "P");
  EXPECT_EQ(out.seq, 4u);
  EXPECT_EQ(out.ts, ms(12));
}

TEST(ApplyMapping, SelectivityHalvesSize) {
  auto stage = mapping("m", Rational{1}, Rational(1, 2));
  EXPECT_EQ(apply_mapping(stage, pub("P", 1, {}, 100)).size_bytes, 50u);
}

TEST(ApplyMapping, Affine) {
  auto stage = mapping("m");
  stage.kind = MappingKind{FnSpec{"affine", {{"a", 2}, {"b", 1}}}};
  EXPECT_EQ(apply_mapping(stage, pub("P", 1, {1, 2, 3})).payload, (std::vector<double>{3, 5, 7}));
}

TEST(ApplyMapping, ScaleAndUnknown) {
  auto stage = mapping("m");
  stage.kind = MappingKind{FnSpec{"scale", {{"ratio", 0.5}}}};
  EXPECT_EQ(apply_mapping(stage, pub("P", 1, {4, 8})).payload, (std::vector<double>{2, 4}));
  stage.kind = MappingKind{FnSpec{"softmax", {}}};
  try {
    apply_mapping(stage, pub("P", 1, {1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownFn);
  }
}

TEST(SizeLaw, RandomSizesAndSelectivities) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const std::uint64_t bytes = 1 + rng() % 100000;
    const Rational sel(1 + static_cast<std::int64_t>(rng() % 400), 1 + static_cast<std::int64_t>(rng() % 200));
    const auto out = scaled_size(bytes, sel);
    // ceil(b*n/d) via integer division, independent of Rational::ceil_mul.
    const auto num = static_cast<unsigned __int128>(bytes) * static_cast<std::uint64_t>(sel.num());
    const auto den = static_cast<std::uint64_t>(sel.den());
    const auto expect = std::max<std::uint64_t>(1, static_cast<std::uint64_t>((num + den - 1) / den));
    ASSERT_EQ(out, expect);
  }
  EXPECT_EQ(scaled_size(1, Rational(1, 1000)), 1u);
}

TEST(InferenceFilter, Threshold) {
  StageSpec s = mapping("f", Rational{1}, Rational(1, 2));
  s.kind = FilterKind{FnSpec{"threshold", {{"index", 0}, {"min", 5}}}};
  auto pass = inference_filter(s, pub("P", 1, {7, 1}, 40));
  ASSERT_TRUE(pass);
  EXPECT_EQ(pass->size_bytes, 20u);
  EXPECT_EQ(pass->tag, PayloadTag::Derived);
  EXPECT_FALSE(inference_filter(s, pub("P", 2, {3, 1})));
  EXPECT_FALSE(inference_filter(s, pub("P", 3, {})));
  s.kind = FilterKind{FnSpec{"nope", {}}};
  try {
    inference_filter(s, pub("P", 1, {7}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPredicate);
  }
}

TEST(Funnel, BarrierEmitsWhenComplete) {
  auto st = make_funnel_state(funnel("f", BarrierPolicy{{"A", "B"}}), {"A", "B"}, Topic("out"));
  auto s1 = funnel_offer(st, "A", pub("a", 1, {1}), ms(1));
  EXPECT_FALSE(s1.emitted);
  auto s2 = funnel_offer(s1.state, "B", pub("b", 1, {2}), ms(2));
  ASSERT_TRUE(s2.emitted);
  EXPECT_EQ(s2.emitted->payload, (std::vector<double>{1, 2}));
  EXPECT_EQ(s2.emitted->size_bytes, 20u);
  EXPECT_EQ(s2.emitted->source, "f");
  EXPECT_EQ(s2.emitted->seq, 1u);
  EXPECT_EQ(s2.emitted->ts, ms(2));
  EXPECT_EQ(s2.emitted->topic, Topic("out"));
  EXPECT_TRUE(s2.state.pending.empty());
}

TEST(Funnel, BarrierNewestWins) {
  auto st = make_funnel_state(funnel("f", BarrierPolicy{{"A", "B"}}), {"A", "B"}, Topic("out"));
  st = funnel_offer(st, "A", pub("a", 1, {1}), ms(1)).state;
  st = funnel_offer(st, "A", pub("a", 2, {5}), ms(2)).state;
  EXPECT_EQ(st.pending.size(), 1u);
  auto step = funnel_offer(st, "B", pub("b", 1, {2}), ms(3));
  ASSERT_TRUE(step.emitted);
  EXPECT_EQ(step.emitted->payload, (std::vector<double>{5, 2}));
}

TEST(Funnel, BarrierOrderIndependent) {
  auto st = make_funnel_state(funnel("f", BarrierPolicy{{"A", "B", "C"}}, "concat"), {"A", "B", "C"},
                              Topic("out"));
  std::vector<std::pair<std::string, Publication>> offers = {
      {"A", pub("x", 1, {1}, 10, "t/a")}, {"B", pub("x", 1, {2}, 10, "t/b")}, {"C", pub("y", 1, {3}, 10, "t/a")}};
  std::optional<Publication> first;
  std::sort(offers.begin(), offers.end(), [](auto& a, auto& b) { return a.first < b.first; });
  do {
    auto s = st;
    std::optional<Publication> out;
    for (auto& [in, p] : offers) {
      auto step = funnel_offer(s, in, p, ms(9));
      out = step.emitted;
      s = step.state;
    }
    ASSERT_TRUE(out);
    if (!first) first = out;
    EXPECT_EQ(out->payload, first->payload);
  } while (std::next_permutation(offers.begin(), offers.end(),
                                 [](auto& a, auto& b) { return a.first < b.first; }));
  // Canonical order is (topic, source, seq): t/a x, t/a y, t/b x.
  EXPECT_EQ(first->payload, (std::vector<double>{1, 3, 2}));
}

TEST(Funnel, CountWindowMean) {
  auto st = make_funnel_state(funnel("f", CountWindowPolicy{3}, "mean"), {"A"}, Topic("out"));
  std::optional<Publication> out;
  for (int i = 0; i < 3; ++i) {
    auto step = funnel_offer(st, "A", pub("a", i + 1, {double(i)}, 10), ms(i));
    EXPECT_EQ(step.emitted.has_value(), i == 2);
    out = step.emitted;
    st = step.state;
  }
  EXPECT_EQ(out->payload, (std::vector<double>{1}));
  EXPECT_EQ(out->size_bytes, 30u);
  EXPECT_TRUE(st.pending.empty());
}

TEST(Funnel, TimeWindowBoundary) {
  auto st = make_funnel_state(funnel("f", TimeWindowPolicy{10}), {"A"}, Topic("out"));
  EXPECT_FALSE(funnel_tick(st, ms(100)).emitted);
  st = funnel_offer(st, "A", pub("a", 1, {1}), ms(5)).state;
  st = funnel_offer(st, "A", pub("a", 2, {2}), ms(8)).state;
  auto early = funnel_tick(st, ms(14));
  EXPECT_FALSE(early.emitted);
  auto fire = funnel_tick(early.state, ms(15));
  ASSERT_TRUE(fire.emitted);
  EXPECT_EQ(fire.emitted->payload, (std::vector<double>{1, 2}));
  EXPECT_FALSE(fire.state.window_open_ts);
  EXPECT_TRUE(fire.state.pending.empty());
}

TEST(Funnel, UnexpectedInput) {
  auto st = make_funnel_state(funnel("f", BarrierPolicy{{"A", "B"}}), {"A", "B"}, Topic("out"));
  try {
    funnel_offer(st, "Z", pub("z", 1, {}), ms(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnexpectedInput);
  }
}

TEST(Funnel, ConservationCounts) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng() % 20, m = rng() % 20;
    auto st = make_funnel_state(funnel("f", BarrierPolicy{{"A", "B"}}), {"A", "B"}, Topic("out"));
    int emitted = 0, a = 0, b = 0;
    // Alternate so no input is ever replaced while its partner is pending.
    while (a < n || b < m) {
      if (a < n && (a <= b || b >= m)) {
        auto s = funnel_offer(st, "A", pub("a", ++a, {}), ms(a));
        emitted += s.emitted.has_value();
        st = s.state;
      } else {
        auto s = funnel_offer(st, "B", pub("b", ++b, {}), ms(b));
        emitted += s.emitted.has_value();
        st = s.state;
      }
      if (a >= std::min(n, m) && b >= std::min(n, m)) break;
    }
    EXPECT_EQ(emitted, std::min(n, m));

    auto cw = make_funnel_state(funnel("c", CountWindowPolicy{3}), {"A"}, Topic("out"));
    int count = 0;
    for (int i = 0; i < n; ++i) {
      auto s = funnel_offer(cw, "A", pub("a", i + 1, {}), ms(i));
      count += s.emitted.has_value();
      cw = s.state;
    }
    EXPECT_EQ(count, n / 3);
  }
}

TEST(AggregateUpdates, Examples) {
  std::vector<ModelUpdate> us = {{"m", 3, {1, 2}}, {"m", 3, {3, 4}}};
  EXPECT_EQ(aggregate_updates(us).delta, (std::vector<double>{2, 3}));
  std::vector<ModelUpdate> one = {{"m", 3, {0.1, 0.7}}};
  EXPECT_EQ(aggregate_updates(one), one[0]);

  auto code = [](std::vector<ModelUpdate> v) {
    try {
      aggregate_updates(v);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code({{"m", 3, {1}}, {"m", 4, {1}}}), ErrorCode::MixedVersions);
  EXPECT_EQ(code({{"m", 3, {1}}, {"n", 3, {1}}}), ErrorCode::MixedModels);
  EXPECT_EQ(code({{"m", 3, {1}}, {"m", 3, {1, 2}}}), ErrorCode::LengthMismatch);
}

TEST(AggregateUpdates, PermutationInvariantAndIdempotent) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ModelUpdate> us;
    const int n = 1 + rng() % 6;
    for (int i = 0; i < n; ++i) us.push_back({"m", 2, {d(rng), d(rng), d(rng)}});
    auto ref = aggregate_updates(us);
    std::shuffle(us.begin(), us.end(), rng);
    EXPECT_EQ(aggregate_updates(us), ref);

    std::vector<ModelUpdate> same(n, us.front());
    EXPECT_EQ(aggregate_updates(same).delta, us.front().delta);
  }
}
