#include "poi/attributes.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <unordered_map>

#include "poi/geo.hpp"
#include "poi/geocoder.hpp"
#include "poi/util.hpp"

namespace poi {

using nlohmann::json;

std::string_view to_string(WeeklyPattern w) { return w == WeeklyPattern::Weekday ? "Weekday" : "Weekend"; }

std::string_view to_string(DaySlot s) {
  switch (s) {
    case DaySlot::EarlyMorning: return "EarlyMorning";
    case DaySlot::Morning: return "Morning";
    case DaySlot::Noon: return "Noon";
    case DaySlot::Afternoon: return "Afternoon";
    case DaySlot::Evening: return "Evening";
    case DaySlot::Night: return "Night";
    case DaySlot::Midnight: return "Midnight";
  }
  return "EarlyMorning";
}

WeeklyPattern parse_weekly(std::string_view s) {
  if (s == "Weekday") return WeeklyPattern::Weekday;
  if (s == "Weekend") return WeeklyPattern::Weekend;
  throw UserError("unknown weekly pattern '" + std::string(s) + "'");
}

DaySlot parse_day_slot(std::string_view s) {
  for (DaySlot slot : kAllDaySlots) {
    if (to_string(slot) == s) return slot;
  }
  throw UserError("unknown day slot '" + std::string(s) + "'");
}

DaySlot day_slot(int h) {
  if (h < 0 || h > 23) throw std::out_of_range("hour out of range: " + std::to_string(h));
  if (h < 6) return DaySlot::Midnight;
  if (h < 9) return DaySlot::EarlyMorning;
  if (h < 11) return DaySlot::Morning;
  if (h < 13) return DaySlot::Noon;
  if (h < 17) return DaySlot::Afternoon;
  if (h < 19) return DaySlot::Evening;
  return DaySlot::Night;
}

VisitPattern derive_visit_pattern(std::span<const CheckinRecord> records) {
  if (records.empty()) throw UserError("visit pattern needs at least one check-in");
  std::size_t weekday = 0, weekend = 0;
  std::array<std::size_t, 7> slots{};
  for (const auto& r : records) {
    auto lt = to_local(r);
    auto wd = lt.weekday.c_encoding();  // 0 = Sunday
    (wd == 0 || wd == 6 ? weekend : weekday) += 1;
    ++slots[static_cast<std::size_t>(day_slot(lt.hour))];
  }
  VisitPattern vp;
  vp.weekly = weekend > weekday ? WeeklyPattern::Weekend : WeeklyPattern::Weekday;
  // max_element returns the first maximum, which is the earliest slot.
  vp.daily = kAllDaySlots[static_cast<std::size_t>(std::max_element(slots.begin(), slots.end()) - slots.begin())];
  return vp;
}

Surrounding derive_surrounding(const Poi& poi, const GridIndex& index) {
  std::map<std::string, std::size_t> counts;
  for (const Poi* p : index.query(poi)) ++counts[p->category];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Surrounding s;
  for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) s.top_categories.push_back(ranked[i].first);
  return s;
}

Surrounding derive_surrounding(const Poi& poi, const Dataset& ds, double side_km) {
  return derive_surrounding(poi, GridIndex(ds, side_km));
}

std::vector<PoiAttributes> derive_attributes(const Dataset& ds, double side_km, ReverseGeocoder* geocoder) {
  std::unordered_map<PoiId, std::vector<CheckinRecord>> by_poi;
  for (const auto& s : ds.sequences) {
    for (const auto& r : s.records) by_poi[r.poi_id].push_back(r);
  }
  GridIndex index(ds, side_km);
  std::vector<PoiAttributes> out;
  out.reserve(ds.pois.size());
  std::size_t unvisited = 0;
  for (const auto& [id, p] : ds.pois) {
    auto it = by_poi.find(id);
    if (it == by_poi.end()) {
      ++unvisited;
      continue;
    }
    PoiAttributes a;
    a.poi_id = id;
    a.visit_pattern = derive_visit_pattern(it->second);
    a.surrounding = derive_surrounding(p, index);
    if (geocoder) a.address = geocoder->reverse(p.lat, p.lon);
    out.push_back(std::move(a));
  }
  if (unvisited) spdlog::warn("attributes: skipped {} POIs without check-ins", unvisited);
  return out;
}

std::string attributes_to_jsonl(std::span<const PoiAttributes> attrs) {
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  std::string out;
  for (const auto& a : attrs) {
    json j{{"poi_id", a.poi_id},
           {"weekly", to_string(a.visit_pattern.weekly)},
           {"daily", to_string(a.visit_pattern.daily)},
           {"street", opt(a.address.street)},
           {"house_number", opt(a.address.house_number)},
           {"postal_code", opt(a.address.postal_code)},
           {"surrounding", a.surrounding.top_categories}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_attributes(std::span<const PoiAttributes> attrs, const std::filesystem::path& path) {
  atomic_write(path, attributes_to_jsonl(attrs));
}

std::vector<PoiAttributes> load_attributes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read attributes file " + path.string());
  std::vector<PoiAttributes> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      PoiAttributes a;
      a.poi_id = j.at("poi_id").get<PoiId>();
      a.visit_pattern.weekly = parse_weekly(j.at("weekly").get<std::string>());
      a.visit_pattern.daily = parse_day_slot(j.at("daily").get<std::string>());
      auto opt = [&](const char* k) -> std::optional<std::string> {
        if (!j.contains(k) || j[k].is_null()) return std::nullopt;
        return j[k].get<std::string>();
      };
      a.address.street = opt("street");
      a.address.house_number = opt("house_number");
      a.address.postal_code = opt("postal_code");
      a.address.status = a.address.empty() ? GeocodeStatus::NotQueried : GeocodeStatus::Ok;
      a.surrounding.top_categories = j.at("surrounding").get<std::vector<std::string>>();
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw UserError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace poi
