#include <gtest/gtest.h>

#include <json.hpp>
#include <map>
#include <set>

#include "poi/attributes.hpp"
#include "poi/geo.hpp"
#include "poi/sampling.hpp"
#include "poi/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace poi;

namespace {

CheckinSequence seq_at(const std::vector<std::pair<PoiId, std::string>>& visits) {
  CheckinSequence s{"u", {}};
  for (const auto& [p, t] : visits) s.records.push_back({"u", p, parse_iso8601(t), 0});
  return s;
}

}  // namespace

TEST(SeqTime, LambdaZeroIsEmpty) {
  auto s = seq_at({{1, "2012-04-02T08:00:00"}, {2, "2012-04-02T09:00:00"}});
  EXPECT_TRUE(sequence_time_positives(0, s, 0).empty());
}

TEST(SeqTime, FullWindowSameDay) {
  auto s = seq_at({{1, "2012-04-02T08:00:00"},
                   {2, "2012-04-02T09:00:00"},
                   {3, "2012-04-02T10:00:00"},
                   {4, "2012-04-02T11:00:00"},
                   {5, "2012-04-02T12:00:00"}});
  EXPECT_EQ(sequence_time_positives(2, s, 4), (std::vector<PoiId>{1, 2, 4, 5}));
  EXPECT_EQ(sequence_time_positives(2, s, 10), (std::vector<PoiId>{1, 2, 4, 5}));
}

TEST(SeqTime, TwoDatesMatchesBruteForce) {
  auto s = seq_at({{1, "2012-04-02T08:00:00"},
                   {2, "2012-04-02T13:00:00"},
                   {3, "2012-04-02T22:00:00"},
                   {1, "2012-04-03T07:00:00"},
                   {5, "2012-04-03T09:00:00"},
                   {6, "2012-04-03T10:00:00"},
                   {7, "2012-04-03T21:00:00"},
                   {8, "2012-04-04T01:00:00"}});
  for (std::size_t j = 0; j < s.records.size(); ++j) {
    auto got = sequence_time_positives(j, s, 2);
    EXPECT_EQ(std::set<PoiId>(got.begin(), got.end()), oracle::seqtime(j, s, 2)) << j;
  }
  EXPECT_EQ(sequence_time_positives(3, s, 2), (std::vector<PoiId>{5, 6}));
}

TEST(SeqTime, LocalDateUsesOffset) {
  // 03:00Z and 05:00Z straddle local midnight at UTC-4.
  CheckinSequence s{"u", {{"u", 1, parse_iso8601("2012-04-03T03:00:00Z"), -240}, {"u", 2, parse_iso8601("2012-04-03T05:00:00Z"), -240}}};
  EXPECT_TRUE(sequence_time_positives(0, s, 1).empty());
  s.records[0].tz_offset_minutes = 0;
  s.records[1].tz_offset_minutes = 0;
  EXPECT_EQ(sequence_time_positives(0, s, 1), std::vector<PoiId>{2});
}

TEST(Geography, SmallCases) {
  Dataset ds;
  ds.pois[1] = Poi{1, "a", "Cafe", -74.0, 40.0};
  ds.pois[2] = Poi{2, "b", "Bar", -74.0, 40.0};
  EXPECT_TRUE(geography_positives(ds.pois[1], ds, 0.5).empty());
  ds.pois[3] = Poi{3, "c", "Cafe", -74.0, 40.0};
  EXPECT_EQ(geography_positives(ds.pois[1], ds, 0.5), std::vector<PoiId>{3});
}

TEST(Geography, SyntheticCityMatchesScan) {
  test::RandomCorpusSpec spec;
  spec.pois = 300;
  spec.categories = 3;
  spec.box_km = 4;
  Dataset ds = test::random_dataset(spec);
  GridIndex grid(ds, 0.5);
  for (const auto& [id, p] : ds.pois) {
    auto got = geography_positives(p, grid);
    EXPECT_EQ(std::set<PoiId>(got.begin(), got.end()), oracle::geo(p, ds, 0.5));
  }
}

TEST(Functional, DefinitionAndGroupBy) {
  Dataset ds;
  ds.pois[1] = Poi{1, "a", "Cafe", 0, 0};
  ds.pois[2] = Poi{2, "b", "Cafe", 0, 0};
  ds.pois[3] = Poi{3, "c", "Cafe", 0, 0};
  ds.pois[4] = Poi{4, "d", "Bar", 0, 0};
  std::vector<PoiAttributes> attrs(4);
  for (int i = 0; i < 4; ++i) attrs[static_cast<std::size_t>(i)].poi_id = i + 1;
  attrs[2].visit_pattern.daily = DaySlot::Night;
  FunctionalIndex idx(ds, attrs);
  EXPECT_EQ(idx.positives(ds.pois[1]), std::vector<PoiId>{2});
  EXPECT_EQ(idx.positives(ds.pois[2]), std::vector<PoiId>{1});
  EXPECT_TRUE(idx.positives(ds.pois[3]).empty());
  EXPECT_TRUE(idx.positives(ds.pois[4]).empty());
  attrs.pop_back();
  EXPECT_THROW(FunctionalIndex(ds, attrs), UserError);

  test::RandomCorpusSpec spec;
  spec.pois = 100;
  Dataset big = test::random_dataset(spec);
  auto battrs = oracle::full_attributes(big, 1);
  std::map<PoiId, VisitPattern> pat;
  for (const auto& a : battrs) pat[a.poi_id] = a.visit_pattern;
  FunctionalIndex bidx(big, battrs);
  for (const auto& [id, p] : big.pois) {
    auto got = bidx.positives(p);
    EXPECT_EQ(std::set<PoiId>(got.begin(), got.end()), oracle::func(p, big, pat));
  }
}

TEST(Batches, PairsEqualOracleUnionAndNegativesClean) {
  test::RandomCorpusSpec spec;
  spec.pois = 20;
  spec.users = 6;
  spec.categories = 3;
  spec.box_km = 1.0;
  Dataset ds = test::random_dataset(spec);
  auto attrs = oracle::full_attributes(ds, 2);
  SamplerConfig cfg;
  cfg.m = 6;
  cfg.seed = 3;
  auto plan = build_batches(ds, ds, attrs, cfg);

  auto pos = oracle::union_positives(ds, attrs, cfg.lambda, cfg.side_km);
  std::multiset<std::pair<PoiId, PoiId>> expect, got;
  for (const auto& [a, ps] : pos)
    for (PoiId p : ps) expect.emplace(a, p);
  for (const auto& b : plan.batches) {
    got.emplace(b.anchor, b.positive);
    EXPECT_EQ(b.negatives.size(), 4u);
    EXPECT_NE(b.sources, 0);
    for (PoiId n : b.negatives) {
      EXPECT_NE(n, b.anchor);
      EXPECT_FALSE(pos[b.anchor].count(n)) << "negative " << n << " is a positive of " << b.anchor;
    }
    EXPECT_EQ(b.rows().size(), 6u);
  }
  EXPECT_EQ(got, expect);

  auto again = build_batches(ds, ds, attrs, cfg);
  ASSERT_EQ(again.batches.size(), plan.batches.size());
  for (std::size_t i = 0; i < plan.batches.size(); ++i) EXPECT_EQ(again.batches[i].negatives, plan.batches[i].negatives);
}

TEST(Batches, StrategySubsetAndAllowedFilter) {
  test::RandomCorpusSpec spec;
  spec.pois = 30;
  Dataset ds = test::random_dataset(spec);
  auto attrs = oracle::full_attributes(ds, 4);
  SamplerConfig cfg;
  cfg.m = 5;
  cfg.strategies = {Strategy::Geo};
  auto plan = build_batches(ds, ds, attrs, cfg);
  for (const auto& b : plan.batches) {
    EXPECT_EQ(b.sources, static_cast<std::uint8_t>(Strategy::Geo));
    EXPECT_EQ(ds.pois.at(b.anchor).category, ds.pois.at(b.positive).category);
  }
  std::set<PoiId> allowed;
  for (const auto& [id, _] : ds.pois)
    if (id % 2) allowed.insert(id);
  cfg.strategies = {Strategy::SeqTime, Strategy::Geo, Strategy::Func};
  auto sub = build_batches(ds, ds, attrs, cfg, allowed);
  for (const auto& b : sub.batches)
    for (PoiId r : b.rows()) EXPECT_TRUE(allowed.count(r));
}

TEST(Batches, AnchorsWithoutPositivesEmitNothing) {
  Dataset ds;
  for (int i = 1; i <= 5; ++i) ds.pois[i] = Poi{i, "p", "cat" + std::to_string(i), -74.0 + i, 40.0};
  ds.rebuild_vocab();
  std::vector<PoiAttributes> attrs(5);
  for (int i = 0; i < 5; ++i) attrs[static_cast<std::size_t>(i)].poi_id = i + 1;
  auto plan = build_batches(ds, ds, attrs, SamplerConfig{});
  EXPECT_TRUE(plan.batches.empty());
  EXPECT_EQ(plan.anchors_without_positives, 5u);
}

TEST(Batches, TinyCorpusDrawsWithReplacement) {
  Dataset ds;
  for (int i = 1; i <= 6; ++i) ds.pois[i] = Poi{i, "p", i <= 2 ? "A" : "B" + std::to_string(i), -74.0, 40.0};
  ds.rebuild_vocab();
  std::vector<PoiAttributes> attrs(6);
  for (int i = 0; i < 6; ++i) attrs[static_cast<std::size_t>(i)].poi_id = i + 1;
  SamplerConfig cfg;
  cfg.m = 10;
  cfg.strategies = {Strategy::Geo};
  auto plan = build_batches(ds, ds, attrs, cfg);
  ASSERT_EQ(plan.batches.size(), 2u);
  EXPECT_EQ(plan.batches_with_replacement, 2u);
  for (const auto& b : plan.batches) {
    EXPECT_EQ(b.negatives.size(), 8u);
    for (PoiId n : b.negatives) EXPECT_GT(n, 2);
  }
}

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  c.m = 2;
  EXPECT_THROW(c.validate(), UserError);
  c.m = 3;
  c.strategies.clear();
  EXPECT_THROW(c.validate(), UserError);
  EXPECT_EQ(parse_strategy("func"), Strategy::Func);
  EXPECT_THROW(parse_strategy("x"), UserError);
}

TEST(Batches, JsonlHasOneLinePerBatch) {
  std::vector<TrainingBatch> bs{{1, 2, {3, 4}, 1}, {2, 1, {5, 6}, 6}};
  auto text = batches_to_jsonl(bs);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  auto j = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(j["anchor"], 1);
}
