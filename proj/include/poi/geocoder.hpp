#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>

#include "poi/attributes.hpp"

namespace poi {

struct HttpResult {
  int status = 0;  // 0 when the request never completed
  std::string body;
};

/// One reverse-search round trip. Implementations need not be thread-safe;
/// ReverseGeocoder serializes calls.
class GeocodeTransport {
 public:
  virtual ~GeocodeTransport() = default;
  virtual HttpResult reverse(double lat, double lon) = 0;
};

/// Nominatim-compatible `/reverse?format=jsonv2` endpoint over HTTP(S).
class NominatimTransport final : public GeocodeTransport {
 public:
  NominatimTransport(std::string endpoint_url, std::string email, std::chrono::seconds timeout = std::chrono::seconds{20});
  HttpResult reverse(double lat, double lon) override;

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::string email_;
  std::chrono::seconds timeout_;
};

/// Canned responses keyed by coordinate_key(); unknown keys answer 404.
class FixtureTransport final : public GeocodeTransport {
 public:
  FixtureTransport() = default;
  explicit FixtureTransport(const std::filesystem::path& dir);  // <key>.json files

  void add(double lat, double lon, std::string body, int status = 200);
  HttpResult reverse(double lat, double lon) override;
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::string, HttpResult> responses_;
  std::size_t calls_ = 0;
};

struct GeocoderConfig {
  std::filesystem::path cache_dir;
  double rate_limit_per_sec = 1.0;
  int max_retries = 2;
  std::chrono::milliseconds retry_backoff{500};
};

/// "lat_lon" with both rounded to 6 decimals.
std::string coordinate_key(double lat, double lon);

/// Extracts street (road, then pedestrian/footway/path), house number and
/// postcode from a Nominatim jsonv2 reply.
Address parse_nominatim(std::string_view body);

/// Cached, rate-limited reverse geocoding. Successful and 4xx replies are
/// persisted; network failures are remembered only for this process.
class ReverseGeocoder {
 public:
  ReverseGeocoder(std::unique_ptr<GeocodeTransport> transport, GeocoderConfig config);

  Address reverse(double lat, double lon);

  std::size_t network_requests() const { return network_requests_; }
  std::size_t cache_hits() const { return cache_hits_; }

 private:
  std::filesystem::path cache_path(const std::string& key) const;
  void wait_for_slot();

  std::unique_ptr<GeocodeTransport> transport_;
  GeocoderConfig config_;
  std::mutex mutex_;
  std::unordered_map<std::string, Address> memo_;
  std::chrono::steady_clock::time_point last_request_{};
  bool any_request_ = false;
  std::size_t network_requests_ = 0;
  std::size_t cache_hits_ = 0;
};

inline Address reverse_geocode(double lat, double lon, ReverseGeocoder& client) { return client.reverse(lat, lon); }

}  // namespace poi
