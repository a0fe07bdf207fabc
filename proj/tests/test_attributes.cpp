#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <regex>
#include <thread>

#include "poi/attributes.hpp"
#include "poi/geo.hpp"
#include "poi/geocoder.hpp"
#include "poi/prompts.hpp"
#include "poi/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

using namespace poi;
using poi::test::TempDir;

namespace {

CheckinRecord at(const std::string& iso_local, std::int32_t tz = 0) {
  // `iso_local` is wall-clock time at offset tz.
  return {"u", 1, parse_iso8601(iso_local) - std::int64_t{tz} * 60, tz};
}

Poi poi_at(PoiId id, double lat, double lon, std::string cat = "Cafe") {
  return Poi{id, "P" + std::to_string(id), std::move(cat), lon, lat};
}

// Offsets in km to a lat/lon, equirectangular about `c`.
Poi offset(const Poi& c, PoiId id, double north_km, double east_km, std::string cat) {
  return poi_at(id, c.lat + north_km / kKmPerDegree,
                c.lon + east_km / (kKmPerDegree * std::cos(c.lat * M_PI / 180.0)), std::move(cat));
}

const char* kWallStreetReply = R"({
  "place_id": 1, "lat": "40.706806", "lon": "-74.011154", "display_name": "11, Wall Street, Manhattan",
  "address": {"house_number": "11", "road": "Wall Street", "suburb": "Manhattan", "city": "New York",
              "postcode": "10005", "country_code": "us"}})";

}  // namespace

TEST(DaySlot, Boundaries) {
  EXPECT_EQ(day_slot(7), DaySlot::EarlyMorning);
  EXPECT_EQ(day_slot(0), DaySlot::Midnight);
  EXPECT_EQ(day_slot(23), DaySlot::Night);
  const DaySlot expected[24] = {DaySlot::Midnight,     DaySlot::Midnight,     DaySlot::Midnight,  DaySlot::Midnight,
                                DaySlot::Midnight,     DaySlot::Midnight,     DaySlot::EarlyMorning, DaySlot::EarlyMorning,
                                DaySlot::EarlyMorning, DaySlot::Morning,      DaySlot::Morning,   DaySlot::Noon,
                                DaySlot::Noon,         DaySlot::Afternoon,    DaySlot::Afternoon, DaySlot::Afternoon,
                                DaySlot::Afternoon,    DaySlot::Evening,      DaySlot::Evening,   DaySlot::Night,
                                DaySlot::Night,        DaySlot::Night,        DaySlot::Night,     DaySlot::Night};
  for (int h = 0; h < 24; ++h) EXPECT_EQ(day_slot(h), expected[h]) << h;
  EXPECT_EQ(day_slot(at("2012-04-02T07:30:00", -240)), DaySlot::EarlyMorning);
  EXPECT_EQ(day_slot(at("2012-04-02T00:00:00", 330)), DaySlot::Midnight);
  EXPECT_EQ(day_slot(at("2012-04-02T23:59:00", -240)), DaySlot::Night);
}

TEST(DaySlot, NamesRoundTrip) {
  for (auto s : kAllDaySlots) EXPECT_EQ(parse_day_slot(to_string(s)), s);
  EXPECT_EQ(parse_weekly(to_string(WeeklyPattern::Weekend)), WeeklyPattern::Weekend);
}

TEST(VisitPattern, SingleRecord) {
  std::vector<CheckinRecord> r{at("2012-04-02T07:30:00", -240)};  // Monday
  EXPECT_EQ(derive_visit_pattern(r), (VisitPattern{WeeklyPattern::Weekday, DaySlot::EarlyMorning}));
}

TEST(VisitPattern, MajorityCounts) {
  std::vector<CheckinRecord> r;
  for (int i = 0; i < 3; ++i) r.push_back(at("2012-04-07T12:0" + std::to_string(i) + ":00"));  // Saturday noon
  for (int i = 0; i < 2; ++i) r.push_back(at("2012-04-03T12:0" + std::to_string(i) + ":00"));  // Tuesday noon
  EXPECT_EQ(derive_visit_pattern(r), (VisitPattern{WeeklyPattern::Weekend, DaySlot::Noon}));
}

TEST(VisitPattern, Ties) {
  std::vector<CheckinRecord> r{at("2012-04-02T20:00:00"), at("2012-04-03T10:00:00"), at("2012-04-07T20:00:00"),
                               at("2012-04-08T10:00:00")};
  // 2 weekday / 2 weekend; Morning and Night tie, Morning comes first.
  EXPECT_EQ(derive_visit_pattern(r), (VisitPattern{WeeklyPattern::Weekday, DaySlot::Morning}));
  EXPECT_THROW(derive_visit_pattern({}), UserError);
}

TEST(SquareContains, HandComputed) {
  Poi c = poi_at(1, 40.0, -74.0);
  EXPECT_TRUE(square_contains(c, c, 0.5));
  EXPECT_FALSE(square_contains(c, offset(c, 2, 1.0, 0.0, "x"), 0.5));
  EXPECT_TRUE(square_contains(c, offset(c, 3, 0.0, 0.2, "x"), 0.5));
  EXPECT_TRUE(square_contains(c, offset(c, 4, 0.24, -0.24, "x"), 0.5));
  EXPECT_FALSE(square_contains(c, offset(c, 5, 0.0, 0.26, "x"), 0.5));
}

TEST(Surrounding, EmptyNeighbourhood) {
  Dataset ds;
  ds.pois[1] = poi_at(1, 40.0, -74.0);
  ds.pois[2] = poi_at(2, 41.0, -74.0);
  EXPECT_TRUE(derive_surrounding(ds.pois[1], ds).top_categories.empty());
}

TEST(Surrounding, OfficeBuildingRoad) {
  Dataset ds;
  Poi c = poi_at(1, 40.706806, -74.011154, "Bank");
  ds.pois[1] = c;
  PoiId id = 2;
  auto put = [&](int n, const std::string& cat) {
    for (int i = 0; i < n; ++i, ++id) ds.pois[id] = offset(c, id, 0.02 * i, -0.03 * i, cat);
  };
  put(4, "Office");
  put(3, "Building");
  put(2, "Road");
  put(1, "Cafe");
  ds.pois[id] = offset(c, id, 2.0, 0.0, "Office");  // outside
  ds.pois[id + 1] = offset(c, id + 1, 0.0, 0.0, "Bank");
  EXPECT_EQ(derive_surrounding(c, ds).top_categories, (std::vector<std::string>{"Office", "Building", "Road"}));
}

TEST(Surrounding, GridMatchesAllPairs) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    test::RandomCorpusSpec spec;
    spec.pois = 200;
    spec.box_km = 3.0;
    spec.categories = 6;
    spec.seed = seed;
    Dataset ds = test::random_dataset(spec);
    GridIndex grid(ds, 0.5);
    for (const auto& [id, p] : ds.pois) {
      EXPECT_EQ(derive_surrounding(p, grid), oracle::surrounding(p, ds, 0.5)) << "poi " << id;
    }
  }
}

TEST(GridIndex, QueryMatchesScanAtHighLatitude) {
  Dataset ds;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 1; i <= 300; ++i) ds.pois[i] = poi_at(i, 69.5 + u(rng) * 0.02, 18.9 + u(rng) * 0.05);
  GridIndex grid(ds, 0.7);
  for (const auto& [id, c] : ds.pois) {
    std::vector<PoiId> expect, got;
    for (const auto& [j, p] : ds.pois)
      if (j != id && square_contains(c, p, 0.7)) expect.push_back(j);
    for (const Poi* p : grid.query(c)) got.push_back(p->id);
    EXPECT_EQ(got, expect);
  }
}

TEST(DeriveAttributes, EveryPoiCovered) {
  Dataset ds = test::random_dataset({});
  auto attrs = derive_attributes(ds, 0.5, nullptr);
  std::set<PoiId> seen;
  for (const auto& a : attrs) {
    EXPECT_EQ(a.address.status, GeocodeStatus::NotQueried);
    seen.insert(a.poi_id);
  }
  for (const auto& s : ds.sequences)
    for (const auto& r : s.records) EXPECT_TRUE(seen.count(r.poi_id));
}

TEST(DeriveAttributes, JsonlRoundTrip) {
  TempDir dir;
  Dataset ds = test::random_dataset({});
  auto attrs = derive_attributes(ds, 0.5, nullptr);
  attrs[0].address = Address{"Main St", "12", "10001", GeocodeStatus::Ok};
  save_attributes(attrs, dir / "a.jsonl");
  auto back = load_attributes(dir / "a.jsonl");
  ASSERT_EQ(back.size(), attrs.size());
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    EXPECT_EQ(back[i].poi_id, attrs[i].poi_id);
    EXPECT_EQ(back[i].visit_pattern, attrs[i].visit_pattern);
    EXPECT_EQ(back[i].surrounding, attrs[i].surrounding);
    EXPECT_EQ(back[i].address.street, attrs[i].address.street);
    EXPECT_EQ(back[i].address.house_number, attrs[i].address.house_number);
    EXPECT_EQ(back[i].address.postal_code, attrs[i].address.postal_code);
  }
}

TEST(Geocoder, ParsesWallStreet) {
  Address a = parse_nominatim(kWallStreetReply);
  EXPECT_EQ(a.status, GeocodeStatus::Ok);
  EXPECT_EQ(a.street, "Wall Street");
  EXPECT_EQ(a.house_number, "11");
  EXPECT_EQ(a.postal_code, "10005");
}

TEST(Geocoder, FallbackStreetKeysAndMissingFields) {
  Address a = parse_nominatim(R"({"address": {"footway": "High Line", "city": "New York"}})");
  EXPECT_EQ(a.street, "High Line");
  EXPECT_FALSE(a.house_number.has_value());
  EXPECT_FALSE(a.postal_code.has_value());
  EXPECT_EQ(parse_nominatim(R"({"error": "Unable to geocode"})").status, GeocodeStatus::ClientError);
  EXPECT_EQ(parse_nominatim("not json").status, GeocodeStatus::ClientError);
}

TEST(Geocoder, CacheHitSkipsNetworkAndPersists) {
  TempDir dir;
  auto make = [&](FixtureTransport** raw) {
    auto t = std::make_unique<FixtureTransport>();
    t->add(40.706806, -74.011154, kWallStreetReply);
    *raw = t.get();
    GeocoderConfig cfg;
    cfg.cache_dir = dir.path();
    cfg.rate_limit_per_sec = 1000;
    return ReverseGeocoder(std::move(t), cfg);
  };
  FixtureTransport* t1 = nullptr;
  auto g1 = make(&t1);
  Address first = reverse_geocode(40.706806, -74.011154, g1);
  Address second = reverse_geocode(40.706806, -74.011154, g1);
  EXPECT_EQ(first, second);
  EXPECT_EQ(t1->calls(), 1u);
  EXPECT_EQ(g1.cache_hits(), 1u);

  FixtureTransport* t2 = nullptr;
  auto g2 = make(&t2);
  EXPECT_EQ(g2.reverse(40.706806, -74.011154), first);
  EXPECT_EQ(t2->calls(), 0u);
}

TEST(Geocoder, ClientErrorIsCachedNetworkErrorIsNot) {
  TempDir dir;
  class Flaky : public GeocodeTransport {
   public:
    int calls = 0;
    HttpResult reverse(double, double) override {
      ++calls;
      return {0, "connection refused"};
    }
  };
  auto flaky = std::make_unique<Flaky>();
  Flaky* raw = flaky.get();
  GeocoderConfig cfg;
  cfg.cache_dir = dir.path();
  cfg.rate_limit_per_sec = 1000;
  cfg.max_retries = 2;
  cfg.retry_backoff = std::chrono::milliseconds{1};
  ReverseGeocoder g(std::move(flaky), cfg);
  EXPECT_EQ(g.reverse(1, 2).status, GeocodeStatus::NetworkError);
  EXPECT_EQ(raw->calls, 3);
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));

  auto fixture = std::make_unique<FixtureTransport>();  // answers 404
  ReverseGeocoder g2(std::move(fixture), cfg);
  EXPECT_EQ(g2.reverse(1, 2).status, GeocodeStatus::ClientError);
  EXPECT_FALSE(std::filesystem::is_empty(dir.path()));
}

TEST(Geocoder, RateLimit) {
  auto t = std::make_unique<FixtureTransport>();
  GeocoderConfig cfg;
  cfg.rate_limit_per_sec = 20;
  ReverseGeocoder g(std::move(t), cfg);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) g.reverse(i, i);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GE(ms, 145);
}

TEST(Geocoder, NominatimOverLoopbackHttp) {
  httplib::Server server;
  std::string seen_query;
  server.Get("/reverse", [&](const httplib::Request& req, httplib::Response& res) {
    seen_query = req.get_param_value("format") + "|" + req.get_param_value("lat") + "|" + req.get_param_value("email");
    res.set_content(kWallStreetReply, "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  NominatimTransport transport("http://127.0.0.1:" + std::to_string(port) + "/reverse", "me@example.org",
                               std::chrono::seconds{5});
  HttpResult r = transport.reverse(40.706806, -74.011154);
  server.stop();
  th.join();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(parse_nominatim(r.body).street, "Wall Street");
  EXPECT_EQ(seen_query.substr(0, 7), "jsonv2|");
  EXPECT_NE(seen_query.find("me@example.org"), std::string::npos);
}

TEST(Prompts, AddressStructure) {
  Poi p = poi_at(5, 40.706806, -74.011154, "Bank");
  p.name = "Wall St Bank";
  PoiAttributes a;
  a.poi_id = 5;
  a.address = Address{"Wall Street", "11", "10005", GeocodeStatus::Ok};
  a.surrounding.top_categories = {"Office", "Building", "Road"};
  Prompt pr = generate_prompt(p, a, PromptKind::Address);
  const std::regex shape(
      R"(^[^\n]+\nPOI Information:\nName: [^\n]+\nLatitude: [^\n]+\nLongitude: [^\n]+\nCategory: Bank\nStreet: Wall Street\n(.|\n)*\?$)");
  EXPECT_TRUE(std::regex_search(pr.text, shape)) << pr.text;
  EXPECT_EQ(pr.template_version, kTemplateVersion);
  EXPECT_EQ(generate_prompt(p, a, PromptKind::Address), pr);
}

TEST(Prompts, VisitAndSurroundingContent) {
  Poi p = poi_at(5, 40.706806, -74.011154, "Bank");
  PoiAttributes a;
  a.poi_id = 5;
  a.visit_pattern = {WeeklyPattern::Weekday, DaySlot::EarlyMorning};
  a.surrounding.top_categories = {"Office", "Building", "Road"};
  const auto v = generate_prompt(p, a, PromptKind::VisitPattern).text;
  EXPECT_NE(v.find("Between 6 am and 9 am"), std::string::npos);
  EXPECT_NE(v.find("Weekday"), std::string::npos);
  const auto s = generate_prompt(p, a, PromptKind::Surrounding).text;
  EXPECT_NE(s.find("Office, Building and Road"), std::string::npos) << s;
  // Kinds differ only in their extras.
  EXPECT_NE(v, s);
}

TEST(Prompts, JsonlRoundTripAndKinds) {
  TempDir dir;
  Dataset ds = test::random_dataset({});
  auto attrs = derive_attributes(ds, 0.5, nullptr);
  std::vector<Prompt> ps;
  for (const auto& a : attrs)
    for (auto k : kAllPromptKinds) ps.push_back(generate_prompt(ds.pois.at(a.poi_id), a, k));
  save_prompts(ps, dir / "p.jsonl");
  EXPECT_EQ(load_prompts(dir / "p.jsonl"), ps);
  EXPECT_EQ(parse_prompt_kind("surrounding"), PromptKind::Surrounding);
  EXPECT_THROW(parse_prompt_kind("nope"), UserError);
}
