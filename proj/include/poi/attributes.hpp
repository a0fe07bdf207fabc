#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poi/corpus.hpp"

namespace poi {

class GridIndex;
class ReverseGeocoder;

enum class WeeklyPattern { Weekday, Weekend };

/// Seven daily time slots, in tie-break order.
enum class DaySlot { EarlyMorning, Morning, Noon, Afternoon, Evening, Night, Midnight };

inline constexpr std::array<DaySlot, 7> kAllDaySlots = {DaySlot::EarlyMorning, DaySlot::Morning,   DaySlot::Noon,
                                                         DaySlot::Afternoon,    DaySlot::Evening,   DaySlot::Night,
                                                         DaySlot::Midnight};

std::string_view to_string(WeeklyPattern w);
std::string_view to_string(DaySlot s);
WeeklyPattern parse_weekly(std::string_view s);
DaySlot parse_day_slot(std::string_view s);

struct VisitPattern {
  WeeklyPattern weekly = WeeklyPattern::Weekday;
  DaySlot daily = DaySlot::EarlyMorning;
  bool operator==(const VisitPattern&) const = default;
};

enum class GeocodeStatus { Ok, NetworkError, ClientError, NotQueried };

struct Address {
  std::optional<std::string> street;
  std::optional<std::string> house_number;
  std::optional<std::string> postal_code;
  GeocodeStatus status = GeocodeStatus::NotQueried;

  bool empty() const { return !street && !house_number && !postal_code; }
  bool operator==(const Address&) const = default;
};

struct Surrounding {
  std::vector<std::string> top_categories;
  bool operator==(const Surrounding&) const = default;
};

struct PoiAttributes {
  PoiId poi_id = 0;
  VisitPattern visit_pattern;
  Address address;
  Surrounding surrounding;
  bool operator==(const PoiAttributes&) const = default;
};

/// Local hour (0..23) to slot: [6,9) early morning, [9,11) morning,
/// [11,13) noon, [13,17) afternoon, [17,19) evening, [19,24) night, [0,6) midnight.
DaySlot day_slot(int local_hour);
inline DaySlot day_slot(const CheckinRecord& r) { return day_slot(to_local(r).hour); }

/// Majority weekday/weekend class (tie: Weekday) and majority slot
/// (tie: earliest in slot order). Throws UserError on an empty list.
VisitPattern derive_visit_pattern(std::span<const CheckinRecord> records);

/// Top three neighbour categories inside the square, by count descending
/// then name ascending. The anchor itself is not counted.
Surrounding derive_surrounding(const Poi& poi, const GridIndex& index);
Surrounding derive_surrounding(const Poi& poi, const Dataset& ds, double side_km = 0.5);

/// Visit pattern and surrounding for every POI with at least one check-in
/// (others are skipped); address via `geocoder` when given, otherwise left
/// NotQueried.
std::vector<PoiAttributes> derive_attributes(const Dataset& ds, double side_km, ReverseGeocoder* geocoder);

/// One JSON object per line:
/// {poi_id, weekly, daily, street, house_number, postal_code, surrounding:[...]}.
std::string attributes_to_jsonl(std::span<const PoiAttributes> attrs);
void save_attributes(std::span<const PoiAttributes> attrs, const std::filesystem::path& path);
std::vector<PoiAttributes> load_attributes(const std::filesystem::path& path);

}  // namespace poi
