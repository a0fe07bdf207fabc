#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace poi {

using PoiId = std::int64_t;

struct Poi {
  PoiId id = 0;
  std::string name;
  std::string category;
  double lon = 0.0;
  double lat = 0.0;

  bool operator==(const Poi&) const = default;
};

/// One visit (u, p, t). `timestamp` is UTC epoch seconds; local calendar
/// values are derived with `tz_offset_minutes`.
struct CheckinRecord {
  std::string user;
  PoiId poi_id = 0;
  std::int64_t timestamp = 0;
  std::int32_t tz_offset_minutes = 0;

  std::int64_t local_seconds() const { return timestamp + std::int64_t{tz_offset_minutes} * 60; }
  bool operator==(const CheckinRecord&) const = default;
};

/// All records of one user, ascending by timestamp.
struct CheckinSequence {
  std::string user;
  std::vector<CheckinRecord> records;

  bool operator==(const CheckinSequence&) const = default;
};

struct Dataset {
  std::map<PoiId, Poi> pois;
  std::vector<CheckinSequence> sequences;
  std::vector<std::string> category_vocab;

  std::size_t checkin_count() const;
  /// Recomputes category_vocab from pois.
  void rebuild_vocab();
  /// Throws std::logic_error when an invariant of the data model is broken.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct LocalTime {
  std::chrono::year_month_day date;
  std::chrono::weekday weekday;
  int hour = 0;
};

LocalTime to_local(std::int64_t local_seconds);
inline LocalTime to_local(const CheckinRecord& r) { return to_local(r.local_seconds()); }

enum class Adapter { CanonicalTsv, Foursquare };

/// "tsv" or "foursquare"; anything else is a UserError.
Adapter parse_adapter(std::string_view name);

struct LoadReport {
  std::size_t lines = 0;
  std::size_t malformed = 0;
};

/// Parses a check-in file. More than 1% malformed lines is treated as a
/// wrong adapter and throws. `tz_override_minutes`, when set, replaces the
/// per-line offsets.
Dataset load_checkins(const std::filesystem::path& path, Adapter adapter,
                      std::optional<std::int32_t> tz_override_minutes = std::nullopt,
                      LoadReport* report = nullptr);

/// Writes the canonical TSV. load_checkins(save_checkins(ds)) == ds.
void save_checkins(const Dataset& ds, const std::filesystem::path& path);
std::string to_canonical_tsv(const Dataset& ds);

/// ISO-8601 "YYYY-MM-DDTHH:MM:SS" with optional "Z" or "+HH:MM" suffix.
std::int64_t parse_iso8601(std::string_view text);
std::string format_iso8601_utc(std::int64_t epoch_seconds);

/// Removes POIs with fewer than `min_poi_checkins` check-ins and sequences
/// shorter than `min_seq_len`, repeated until neither rule removes anything.
Dataset filter_dataset(const Dataset& ds, int min_poi_checkins = 5, int min_seq_len = 10);

struct SplitSizes {
  std::size_t test = 0, val = 0, train = 0;
  bool operator==(const SplitSizes&) const = default;
};

/// Largest-remainder apportionment of `n` items over (test, val, train)
/// ratios; ties on the remainder go to the earlier part.
SplitSizes largest_remainder(std::size_t n, std::array<int, 3> ratios);

struct DatasetSplits {
  Dataset test, val, train;
};

/// Shuffles sequences with `seed` and cuts them by `ratios` (test, val, train).
/// Every part keeps the full POI table.
DatasetSplits split_sequences(const Dataset& ds, std::array<int, 3> ratios, std::uint64_t seed);

}  // namespace poi
