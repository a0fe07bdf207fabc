#include "poi/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "poi/util.hpp"

namespace poi {

namespace {

using namespace std::chrono;

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

int two_digits(std::string_view s, std::size_t at) {
  if (at + 2 > s.size() || !isdigit(s[at]) || !isdigit(s[at + 1])) {
    throw UserError("bad timestamp '" + std::string(s) + "'");
  }
  return (s[at] - '0') * 10 + (s[at + 1] - '0');
}

std::int64_t epoch_from_civil(int y, unsigned mo, unsigned d, int h, int mi, int s) {
  year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw UserError("invalid calendar time");
  auto days = sys_days{ymd}.time_since_epoch().count();
  return std::int64_t{days} * 86400 + h * 3600 + mi * 60 + s;
}

// "Tue Apr 03 18:00:09 +0000 2012"
std::int64_t parse_foursquare_time(std::string_view s) {
  static constexpr std::array<std::string_view, 12> kMonths = {
      "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  if (s.size() != 30) throw UserError("bad foursquare timestamp '" + std::string(s) + "'");
  auto mon = s.substr(4, 3);
  auto it = std::find(kMonths.begin(), kMonths.end(), mon);
  if (it == kMonths.end()) throw UserError("bad month in '" + std::string(s) + "'");
  unsigned month_no = static_cast<unsigned>(it - kMonths.begin()) + 1;
  int day_no = two_digits(s, 8);
  int h = two_digits(s, 11), mi = two_digits(s, 14), sec = two_digits(s, 17);
  int sign = s[20] == '-' ? -1 : 1;
  int off = two_digits(s, 21) * 60 + two_digits(s, 23);
  int y = static_cast<int>(parse_int(s.substr(26, 4), "year"));
  return epoch_from_civil(y, month_no, static_cast<unsigned>(day_no), h, mi, sec) - sign * off * 60;
}

struct LineParser {
  Adapter adapter;
  std::unordered_map<std::string, PoiId> foursquare_ids;

  // Returns false on a malformed line.
  bool parse(std::string_view line, Poi& poi, CheckinRecord& rec) {
    auto cols = split_tabs(line);
    try {
      if (adapter == Adapter::CanonicalTsv) {
        if (cols.size() != 8) return false;
        rec.user = std::string(cols[0]);
        poi.id = parse_int(cols[1], "poi_id");
        poi.name = std::string(cols[2]);
        poi.category = std::string(cols[3]);
        poi.lat = parse_double(cols[4], "lat");
        poi.lon = parse_double(cols[5], "lon");
        rec.timestamp = parse_iso8601(cols[6]);
        rec.tz_offset_minutes = static_cast<std::int32_t>(parse_int(cols[7], "tz offset"));
      } else {
        // userID, venueID, venueCategoryID, venueCategory, lat, lon, tzOffset, utcTime
        if (cols.size() != 8) return false;
        rec.user = std::string(cols[0]);
        auto venue = std::string(cols[1]);
        auto [it, inserted] = foursquare_ids.try_emplace(venue, static_cast<PoiId>(foursquare_ids.size()));
        poi.id = it->second;
        poi.name = venue;
        poi.category = std::string(cols[3]);
        poi.lat = parse_double(cols[4], "lat");
        poi.lon = parse_double(cols[5], "lon");
        rec.tz_offset_minutes = static_cast<std::int32_t>(parse_int(cols[6], "tz offset"));
        rec.timestamp = parse_foursquare_time(cols[7]);
      }
    } catch (const UserError&) {
      return false;
    }
    rec.poi_id = poi.id;
    if (rec.user.empty() || poi.category.empty()) return false;
    if (!(poi.lat >= -90.0 && poi.lat <= 90.0 && poi.lon >= -180.0 && poi.lon <= 180.0)) return false;
    return true;
  }
};

}  // namespace

std::size_t Dataset::checkin_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.records.size();
  return n;
}

void Dataset::rebuild_vocab() {
  std::set<std::string> cats;
  for (const auto& [id, p] : pois) cats.insert(p.category);
  category_vocab.assign(cats.begin(), cats.end());
}

void Dataset::validate() const {
  for (const auto& [id, p] : pois) {
    if (p.id != id) throw std::logic_error("poi key/id mismatch");
    if (p.category.empty()) throw std::logic_error("empty category for poi " + std::to_string(id));
    if (p.lat < -90 || p.lat > 90 || p.lon < -180 || p.lon > 180) {
      throw std::logic_error("coordinates out of range for poi " + std::to_string(id));
    }
  }
  for (const auto& s : sequences) {
    for (std::size_t i = 0; i < s.records.size(); ++i) {
      const auto& r = s.records[i];
      if (r.user != s.user) throw std::logic_error("record user differs from sequence user");
      if (!pois.contains(r.poi_id)) throw std::logic_error("unknown poi " + std::to_string(r.poi_id));
      if (i > 0 && r.timestamp < s.records[i - 1].timestamp) throw std::logic_error("unsorted sequence");
    }
  }
  std::set<std::string> cats;
  for (const auto& [id, p] : pois) cats.insert(p.category);
  if (!std::equal(cats.begin(), cats.end(), category_vocab.begin(), category_vocab.end())) {
    throw std::logic_error("category_vocab out of date");
  }
}

LocalTime to_local(std::int64_t local_seconds) {
  auto days = static_cast<int>(local_seconds >= 0 ? local_seconds / 86400 : (local_seconds - 86399) / 86400);
  auto secs_of_day = local_seconds - std::int64_t{days} * 86400;
  sys_days sd{std::chrono::days{days}};
  return LocalTime{year_month_day{sd}, weekday{sd}, static_cast<int>(secs_of_day / 3600)};
}

Adapter parse_adapter(std::string_view name) {
  if (name == "tsv" || name == "canonical") return Adapter::CanonicalTsv;
  if (name == "foursquare") return Adapter::Foursquare;
  throw UserError("unknown dataset adapter '" + std::string(name) + "'");
}

std::int64_t parse_iso8601(std::string_view s) {
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
      s[16] != ':') {
    throw UserError("bad ISO-8601 timestamp '" + std::string(s) + "'");
  }
  int y = static_cast<int>(parse_int(s.substr(0, 4), "year"));
  auto t = epoch_from_civil(y, static_cast<unsigned>(two_digits(s, 5)), static_cast<unsigned>(two_digits(s, 8)),
                            two_digits(s, 11), two_digits(s, 14), two_digits(s, 17));
  auto rest = s.substr(19);
  if (rest.empty() || rest == "Z") return t;
  if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':') {
    int off = two_digits(rest, 1) * 60 + two_digits(rest, 4);
    return t - (rest[0] == '-' ? -1 : 1) * off * 60;
  }
  throw UserError("bad ISO-8601 offset '" + std::string(s) + "'");
}

std::string format_iso8601_utc(std::int64_t epoch_seconds) {
  auto lt = to_local(epoch_seconds);
  auto secs = epoch_seconds - sys_days{lt.date}.time_since_epoch().count() * std::int64_t{86400};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(lt.date.year()),
                static_cast<unsigned>(lt.date.month()), static_cast<unsigned>(lt.date.day()),
                static_cast<int>(secs / 3600), static_cast<int>((secs / 60) % 60), static_cast<int>(secs % 60));
  return buf;
}

Dataset load_checkins(const std::filesystem::path& path, Adapter adapter,
                      std::optional<std::int32_t> tz_override_minutes, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read check-in file " + path.string());

  LineParser parser{adapter, {}};
  Dataset ds;
  std::unordered_map<std::string, std::size_t> seq_index;
  LoadReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ++rep.lines;
    Poi poi;
    CheckinRecord rec;
    if (!parser.parse(line, poi, rec)) {
      ++rep.malformed;
      continue;
    }
    if (tz_override_minutes) rec.tz_offset_minutes = *tz_override_minutes;
    ds.pois.try_emplace(poi.id, std::move(poi));
    auto [it, inserted] = seq_index.try_emplace(rec.user, ds.sequences.size());
    if (inserted) ds.sequences.push_back(CheckinSequence{rec.user, {}});
    ds.sequences[it->second].records.push_back(std::move(rec));
  }
  if (rep.malformed > 0) {
    spdlog::warn("{}: {} of {} lines malformed", path.string(), rep.malformed, rep.lines);
  }
  if (rep.malformed * 100 > rep.lines) {
    throw UserError(path.string() + ": " + std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                    " lines malformed (>1%); wrong adapter?");
  }
  for (auto& s : ds.sequences) {
    std::stable_sort(s.records.begin(), s.records.end(),
                     [](const CheckinRecord& a, const CheckinRecord& b) { return a.timestamp < b.timestamp; });
  }
  ds.rebuild_vocab();
  if (report) *report = rep;
  return ds;
}

std::string to_canonical_tsv(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.sequences) {
    for (const auto& r : s.records) {
      const auto& p = ds.pois.at(r.poi_id);
      out += single_line(r.user);
      out += '\t';
      out += std::to_string(p.id);
      out += '\t';
      out += single_line(p.name);
      out += '\t';
      out += single_line(p.category);
      out += '\t';
      out += format_double(p.lat);
      out += '\t';
      out += format_double(p.lon);
      out += '\t';
      out += format_iso8601_utc(r.timestamp);
      out += '\t';
      out += std::to_string(r.tz_offset_minutes);
      out += '\n';
    }
  }
  return out;
}

void save_checkins(const Dataset& ds, const std::filesystem::path& path) { atomic_write(path, to_canonical_tsv(ds)); }

Dataset filter_dataset(const Dataset& ds, int min_poi_checkins, int min_seq_len) {
  if (min_poi_checkins < 1 || min_seq_len < 1) throw UserError("filter thresholds must be >= 1");
  std::vector<CheckinSequence> seqs = ds.sequences;
  std::unordered_set<PoiId> alive;
  for (const auto& [id, p] : ds.pois) alive.insert(id);

  int rounds = 0;
  while (true) {
    ++rounds;
    std::unordered_map<PoiId, std::size_t> counts;
    for (const auto& s : seqs) {
      for (const auto& r : s.records) ++counts[r.poi_id];
    }
    bool changed = false;
    for (auto it = alive.begin(); it != alive.end();) {
      auto c = counts.find(*it);
      if (c == counts.end() || c->second < static_cast<std::size_t>(min_poi_checkins)) {
        it = alive.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
    std::vector<CheckinSequence> next;
    next.reserve(seqs.size());
    for (auto& s : seqs) {
      std::erase_if(s.records, [&](const CheckinRecord& r) { return !alive.contains(r.poi_id); });
      if (s.records.size() >= static_cast<std::size_t>(min_seq_len)) {
        next.push_back(std::move(s));
      } else {
        changed = true;
      }
    }
    seqs = std::move(next);
    if (!changed) break;
  }

  Dataset out;
  for (const auto& [id, p] : ds.pois) {
    if (alive.contains(id)) out.pois.emplace(id, p);
  }
  out.sequences = std::move(seqs);
  out.rebuild_vocab();
  if (out.pois.empty() || out.sequences.empty()) {
    throw UserError("filtering removed everything: input had " + std::to_string(ds.pois.size()) + " POIs, " +
                    std::to_string(ds.sequences.size()) + " sequences, " + std::to_string(ds.checkin_count()) +
                    " check-ins; thresholds poi>=" + std::to_string(min_poi_checkins) +
                    " seq>=" + std::to_string(min_seq_len));
  }
  spdlog::debug("filter fixpoint after {} rounds: {} POIs, {} sequences", rounds, out.pois.size(),
                out.sequences.size());
  return out;
}

SplitSizes largest_remainder(std::size_t n, std::array<int, 3> ratios) {
  long total = 0;
  for (int r : ratios) {
    if (r <= 0) throw UserError("split ratios must be positive");
    total += r;
  }
  std::array<std::size_t, 3> base{};
  std::array<long, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    auto num = static_cast<long>(n) * ratios[i];
    base[i] = static_cast<std::size_t>(num / total);
    rem[i] = num % total;
    assigned += base[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++base[order[k]];
  return SplitSizes{base[0], base[1], base[2]};
}

DatasetSplits split_sequences(const Dataset& ds, std::array<int, 3> ratios, std::uint64_t seed) {
  if (ds.sequences.size() < 10) {
    throw UserError("need at least 10 sequences to split, have " + std::to_string(ds.sequences.size()));
  }
  auto sizes = largest_remainder(ds.sequences.size(), ratios);
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplits out;
  for (Dataset* part : {&out.test, &out.val, &out.train}) {
    part->pois = ds.pois;
    part->category_vocab = ds.category_vocab;
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    Dataset& part = k < sizes.test ? out.test : (k < sizes.test + sizes.val ? out.val : out.train);
    part.sequences.push_back(ds.sequences[order[k]]);
  }
  return out;
}

}  // namespace poi
