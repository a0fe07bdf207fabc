#include "poi/geocoder.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "poi/util.hpp"

namespace poi {

using nlohmann::json;

namespace {

std::optional<std::string> string_field(const json& obj, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    auto it = obj.find(n);
    if (it != obj.end() && it->is_string() && !it->get<std::string>().empty()) return it->get<std::string>();
  }
  return std::nullopt;
}

std::string_view status_name(GeocodeStatus s) {
  switch (s) {
    case GeocodeStatus::Ok: return "ok";
    case GeocodeStatus::NetworkError: return "network_error";
    case GeocodeStatus::ClientError: return "client_error";
    case GeocodeStatus::NotQueried: return "not_queried";
  }
  return "not_queried";
}

GeocodeStatus parse_status(std::string_view s) {
  if (s == "ok") return GeocodeStatus::Ok;
  if (s == "network_error") return GeocodeStatus::NetworkError;
  if (s == "client_error") return GeocodeStatus::ClientError;
  return GeocodeStatus::NotQueried;
}

json address_to_json(const Address& a) {
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"street", opt(a.street)},
              {"house_number", opt(a.house_number)},
              {"postal_code", opt(a.postal_code)},
              {"status", status_name(a.status)}};
}

Address address_from_json(const json& j) {
  auto opt = [&](const char* k) -> std::optional<std::string> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<std::string>();
  };
  Address a{opt("street"), opt("house_number"), opt("postal_code"), parse_status(j.value("status", "ok"))};
  return a;
}

}  // namespace

std::string coordinate_key(double lat, double lon) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f_%.6f", lat, lon);
  return buf;
}

Address parse_nominatim(std::string_view body) {
  Address a;
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    a.status = GeocodeStatus::ClientError;
    return a;
  }
  auto addr = j.find("address");
  if (addr == j.end() || !addr->is_object()) {
    a.status = GeocodeStatus::ClientError;
    return a;
  }
  a.street = string_field(*addr, {"road", "pedestrian", "footway", "path"});
  a.house_number = string_field(*addr, {"house_number"});
  a.postal_code = string_field(*addr, {"postcode"});
  a.status = GeocodeStatus::Ok;
  return a;
}

NominatimTransport::NominatimTransport(std::string endpoint_url, std::string email, std::chrono::seconds timeout)
    : email_(std::move(email)), timeout_(timeout) {
  auto scheme_end = endpoint_url.find("://");
  if (scheme_end == std::string::npos) throw UserError("geocoder endpoint needs a scheme: " + endpoint_url);
  auto path_start = endpoint_url.find('/', scheme_end + 3);
  base_ = endpoint_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/reverse" : endpoint_url.substr(path_start);
}

HttpResult NominatimTransport::reverse(double lat, double lon) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_follow_location(true);
  httplib::Params params{{"format", "jsonv2"},
                         {"lat", format_double(lat)},
                         {"lon", format_double(lon)},
                         {"addressdetails", "1"}};
  if (!email_.empty()) params.emplace("email", email_);
  httplib::Headers headers{{"User-Agent", "poi-enhancer/1.0"}};
  auto res = client.Get(path_, params, headers);
  if (!res) return HttpResult{0, httplib::to_string(res.error())};
  return HttpResult{res->status, res->body};
}

FixtureTransport::FixtureTransport(const std::filesystem::path& dir) {
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    responses_[entry.path().stem().string()] = HttpResult{200, read_file(entry.path())};
  }
}

void FixtureTransport::add(double lat, double lon, std::string body, int status) {
  responses_[coordinate_key(lat, lon)] = HttpResult{status, std::move(body)};
}

HttpResult FixtureTransport::reverse(double lat, double lon) {
  ++calls_;
  auto it = responses_.find(coordinate_key(lat, lon));
  if (it == responses_.end()) return HttpResult{404, R"({"error":"Unable to geocode"})"};
  return it->second;
}

ReverseGeocoder::ReverseGeocoder(std::unique_ptr<GeocodeTransport> transport, GeocoderConfig config)
    : transport_(std::move(transport)), config_(std::move(config)) {
  if (!transport_) throw std::invalid_argument("geocoder transport is null");
  if (!(config_.rate_limit_per_sec > 0)) throw UserError("geocoder rate limit must be positive");
}

std::filesystem::path ReverseGeocoder::cache_path(const std::string& key) const {
  return config_.cache_dir / (key + ".json");
}

void ReverseGeocoder::wait_for_slot() {
  auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.rate_limit_per_sec));
  if (any_request_) std::this_thread::sleep_until(last_request_ + interval);
  last_request_ = std::chrono::steady_clock::now();
  any_request_ = true;
}

Address ReverseGeocoder::reverse(double lat, double lon) {
  std::lock_guard lock(mutex_);
  const auto key = coordinate_key(lat, lon);
  if (auto it = memo_.find(key); it != memo_.end()) {
    ++cache_hits_;
    return it->second;
  }
  const bool persistent = !config_.cache_dir.empty();
  if (persistent && std::filesystem::exists(cache_path(key))) {
    auto j = json::parse(read_file(cache_path(key)), nullptr, false);
    if (!j.is_discarded() && j.contains("address")) {
      ++cache_hits_;
      auto a = address_from_json(j["address"]);
      memo_.emplace(key, a);
      return a;
    }
    spdlog::warn("discarding unreadable geocode cache entry {}", cache_path(key).string());
  }

  ++network_requests_;
  HttpResult res;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    wait_for_slot();
    res = transport_->reverse(lat, lon);
    if (res.status != 0 && res.status < 500) break;
    if (attempt < config_.max_retries) std::this_thread::sleep_for(config_.retry_backoff * (attempt + 1));
  }

  Address a;
  if (res.status == 0 || res.status >= 500) {
    a.status = GeocodeStatus::NetworkError;
    spdlog::warn("reverse geocode {} failed: {}", key, res.status == 0 ? res.body : std::to_string(res.status));
  } else if (res.status >= 400) {
    a.status = GeocodeStatus::ClientError;
    spdlog::warn("reverse geocode {} rejected with HTTP {}", key, res.status);
  } else {
    a = parse_nominatim(res.body);
    if (a.status != GeocodeStatus::Ok) spdlog::warn("reverse geocode {}: unparseable reply", key);
  }
  if (persistent && a.status != GeocodeStatus::NetworkError) {
    json entry{{"key", key}, {"http_status", res.status}, {"raw", res.body}, {"address", address_to_json(a)}};
    atomic_write(cache_path(key), entry.dump());
  }
  memo_.emplace(key, a);
  return a;
}

}  // namespace poi
