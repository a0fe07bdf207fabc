#include "poi/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "poi/util.hpp"

namespace poi {

namespace {
double cos_deg(double deg) { return std::cos(deg * std::numbers::pi / 180.0); }
}  // namespace

bool square_contains(const Poi& center, const Poi& candidate, double side_km) {
  const double half = side_km / 2.0;
  const double dlat_km = std::abs(candidate.lat - center.lat) * kKmPerDegree;
  const double dlon_km = std::abs(candidate.lon - center.lon) * kKmPerDegree * cos_deg(center.lat);
  return dlat_km <= half && dlon_km <= half;
}

GridIndex::GridIndex(const std::vector<const Poi*>& pois, double side_km) : side_km_(side_km) {
  if (!(side_km > 0)) throw UserError("square side must be positive");
  double max_abs_lat = 0.0;
  for (const Poi* p : pois) max_abs_lat = std::max(max_abs_lat, std::abs(p->lat));
  cell_lat_deg_ = side_km / kKmPerDegree;
  const double c = cos_deg(max_abs_lat);
  // Near the poles a longitude cell would have to span the whole globe.
  cell_lon_deg_ = c > 1e-6 ? std::min(360.0, side_km / (kKmPerDegree * c)) : 360.0;
  for (const Poi* p : pois) cells_[key(row_of(p->lat), col_of(p->lon))].push_back(p);
}

GridIndex::GridIndex(const Dataset& ds, double side_km)
    : GridIndex(
          [&] {
            std::vector<const Poi*> v;
            v.reserve(ds.pois.size());
            for (const auto& [id, p] : ds.pois) v.push_back(&p);
            return v;
          }(),
          side_km) {}

std::int64_t GridIndex::row_of(double lat) const { return static_cast<std::int64_t>(std::floor(lat / cell_lat_deg_)); }

std::int64_t GridIndex::col_of(double lon) const {
  return static_cast<std::int64_t>(std::floor(lon / cell_lon_deg_));
}

std::vector<const Poi*> GridIndex::query(const Poi& center) const {
  std::vector<const Poi*> out;
  const auto r0 = row_of(center.lat), c0 = col_of(center.lon);
  for (std::int64_t dr = -1; dr <= 1; ++dr) {
    for (std::int64_t dc = -1; dc <= 1; ++dc) {
      auto it = cells_.find(key(r0 + dr, c0 + dc));
      if (it == cells_.end()) continue;
      for (const Poi* p : it->second) {
        if (p->id != center.id && square_contains(center, *p, side_km_)) out.push_back(p);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Poi* a, const Poi* b) { return a->id < b->id; });
  return out;
}

}  // namespace poi
