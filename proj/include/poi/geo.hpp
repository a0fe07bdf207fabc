#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "poi/corpus.hpp"

namespace poi {

/// Kilometres per degree used by the equirectangular approximation.
inline constexpr double kKmPerDegree = 111.32;

/// True iff `candidate` lies in the axis-aligned square of side `side_km`
/// centred on `center` (equirectangular, longitude scaled by cos(center.lat)).
bool square_contains(const Poi& center, const Poi& candidate, double side_km);

/// Uniform lat/lon bucket grid. Cells are at least as wide as the query
/// square in both directions for every latitude present at build time, so
/// a query only has to look at the 3x3 block around the centre cell.
class GridIndex {
 public:
  GridIndex(const std::vector<const Poi*>& pois, double side_km);
  explicit GridIndex(const Dataset& ds, double side_km);

  /// Every indexed POI p != center (by id) with square_contains(center, p).
  /// Returned in ascending id order.
  std::vector<const Poi*> query(const Poi& center) const;

  double side_km() const { return side_km_; }

 private:
  using CellKey = std::int64_t;
  CellKey key(std::int64_t row, std::int64_t col) const { return row * 1'000'003 + col; }
  std::int64_t row_of(double lat) const;
  std::int64_t col_of(double lon) const;

  double side_km_;
  double cell_lat_deg_;
  double cell_lon_deg_;
  std::unordered_map<CellKey, std::vector<const Poi*>> cells_;
};

}  // namespace poi
