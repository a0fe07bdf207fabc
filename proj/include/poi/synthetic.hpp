#pragma once

#include <cstdint>

#include "poi/corpus.hpp"

namespace poi {

/// A small city with spatially clustered categories and category-specific
/// visit habits, used by tests and demos.
struct SyntheticConfig {
  int num_pois = 500;
  int num_categories = 10;
  int clusters_per_category = 3;
  double cluster_radius_km = 0.15;
  int num_users = 80;
  int checkins_per_user = 100;
  double habit_strength = 0.85;  // probability a visit follows its category's time habit
  double center_lat = 40.75;
  double center_lon = -73.98;
  double city_radius_km = 8.0;
  std::uint64_t seed = 7;
};

/// POIs get ids 1..num_pois; categories are assigned round-robin so they are
/// balanced. Every POI receives at least five check-ins.
Dataset make_synthetic_dataset(const SyntheticConfig& cfg);

}  // namespace poi
