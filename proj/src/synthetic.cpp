#include "poi/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "poi/geo.hpp"
#include "poi/util.hpp"

namespace poi {

namespace {

constexpr std::array<const char*, 10> kCategoryNames{"Cafe",   "Park",   "Office",   "Gym",        "Bar",
                                                     "Museum", "School", "Hospital", "Restaurant", "Hotel"};

// [start, end) local hours of each daily slot, in slot order.
constexpr std::array<std::pair<int, int>, 7> kSlotHours{{{6, 9}, {9, 11}, {11, 13}, {13, 17}, {17, 19}, {19, 24}, {0, 6}}};

// 2012-04-02 00:00 local, a Monday.
constexpr std::int64_t kStartLocal = 1333324800;
constexpr int kDays = 56;
constexpr std::int32_t kTzMinutes = -240;

}  // namespace

Dataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.num_pois < 1 || cfg.num_categories < 1 || cfg.num_users < 1 || cfg.checkins_per_user < 1 ||
      cfg.clusters_per_category < 1) {
    throw UserError("synthetic corpus sizes must be positive");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double km_lat = 1.0 / kKmPerDegree;
  const double km_lon = 1.0 / (kKmPerDegree * std::cos(cfg.center_lat * std::numbers::pi / 180.0));

  std::vector<std::string> names;
  for (int c = 0; c < cfg.num_categories; ++c) {
    names.push_back(c < static_cast<int>(kCategoryNames.size()) ? kCategoryNames[static_cast<std::size_t>(c)]
                                                                : "Category " + std::to_string(c + 1));
  }
  std::vector<std::vector<std::pair<double, double>>> centers(static_cast<std::size_t>(cfg.num_categories));
  for (auto& cs : centers) {
    for (int k = 0; k < cfg.clusters_per_category; ++k) {
      const double r = cfg.city_radius_km * std::sqrt(unit(rng));
      const double a = 2 * std::numbers::pi * unit(rng);
      cs.emplace_back(cfg.center_lat + r * std::sin(a) * km_lat, cfg.center_lon + r * std::cos(a) * km_lon);
    }
  }

  Dataset ds;
  for (int i = 1; i <= cfg.num_pois; ++i) {
    const auto c = static_cast<std::size_t>((i - 1) % cfg.num_categories);
    std::uniform_int_distribution<std::size_t> pick(0, centers[c].size() - 1);
    const auto [lat, lon] = centers[c][pick(rng)];
    Poi p;
    p.id = i;
    p.category = names[c];
    p.name = names[c] + " #" + std::to_string((i - 1) / cfg.num_categories + 1);
    p.lat = lat + gauss(rng) * cfg.cluster_radius_km * km_lat;
    p.lon = lon + gauss(rng) * cfg.cluster_radius_km * km_lon;
    ds.pois.emplace(p.id, p);
  }

  // Five guaranteed visits per POI, dealt round-robin to users, then random fill.
  std::vector<std::vector<PoiId>> visits(static_cast<std::size_t>(cfg.num_users));
  std::vector<PoiId> deck;
  for (int rep = 0; rep < 5; ++rep) {
    for (int i = 1; i <= cfg.num_pois; ++i) deck.push_back(i);
  }
  std::shuffle(deck.begin(), deck.end(), rng);
  for (std::size_t k = 0; k < deck.size(); ++k) visits[k % visits.size()].push_back(deck[k]);
  std::uniform_int_distribution<PoiId> any_poi(1, cfg.num_pois);
  for (auto& v : visits) {
    while (static_cast<int>(v.size()) < cfg.checkins_per_user) v.push_back(any_poi(rng));
  }

  std::uniform_int_distribution<int> day_of(0, kDays - 1);
  std::uniform_int_distribution<int> hour_of(0, 23);
  std::uniform_int_distribution<int> minute_of(0, 59);
  for (int u = 0; u < cfg.num_users; ++u) {
    CheckinSequence seq;
    seq.user = "u" + std::to_string(u + 1);
    for (PoiId id : visits[static_cast<std::size_t>(u)]) {
      const int c = static_cast<int>((id - 1) % cfg.num_categories);
      const bool wants_weekend = (c + c / 7) % 2 == 1;
      int day = day_of(rng);
      if (unit(rng) < cfg.habit_strength) {
        while (((day % 7) >= 5) != wants_weekend) day = day_of(rng);
      }
      int hour = hour_of(rng);
      if (unit(rng) < cfg.habit_strength) {
        const auto [lo, hi] = kSlotHours[static_cast<std::size_t>(c % 7)];
        hour = std::uniform_int_distribution<int>(lo, hi - 1)(rng);
      }
      const std::int64_t local = kStartLocal + std::int64_t{day} * 86400 + hour * 3600 + minute_of(rng) * 60;
      seq.records.push_back({seq.user, id, local - std::int64_t{kTzMinutes} * 60, kTzMinutes});
    }
    std::stable_sort(seq.records.begin(), seq.records.end(),
                     [](const CheckinRecord& a, const CheckinRecord& b) { return a.timestamp < b.timestamp; });
    ds.sequences.push_back(std::move(seq));
  }
  ds.rebuild_vocab();
  return ds;
}

}  // namespace poi
