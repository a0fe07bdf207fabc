#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>

#include "poi/baselines.hpp"
#include "poi/corpus.hpp"
#include "poi/downstream.hpp"
#include "poi/enhancer.hpp"
#include "poi/extractor.hpp"
#include "poi/sampling.hpp"
#include "poi/training.hpp"

namespace poi {

struct DataConfig {
  std::string checkins;
  Adapter adapter = Adapter::CanonicalTsv;
  std::optional<std::int32_t> timezone_offset_minutes;  // replaces per-record offsets when set
  int min_poi_checkins = 5;
  int min_seq_len = 10;
  std::array<int, 3> split{2, 1, 7};  // test, val, train
};

struct GeocoderSettings {
  bool enabled = false;
  std::string endpoint = "https://nominatim.openstreetmap.org/reverse";
  std::string email;
  double rate_limit_per_sec = 1.0;
  int max_retries = 2;
  int timeout_seconds = 20;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  DataConfig data;
  double attributes_side_km = 0.5;
  GeocoderSettings geocoder;
  BackendDescriptor backend;
  int backend_max_in_flight = 1;
  HyperParams enhancer;
  std::size_t chunk_size = 64;  // inference attention chunk; 0 = whole corpus
  SamplerConfig sampler;
  TrainConfig train;
  SkipGramConfig skipgram;
  TaskConfig task;

  /// Pushes the global seed into every module that draws random numbers.
  void propagate_seed();
};

/// Flat object of dotted keys, every key present (the resolved form).
nlohmann::json to_json(const RunConfig& c);
/// Starts from defaults and applies `j`. Unknown keys, type mismatches and
/// constraint violations throw UserError naming the key.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Writes `<dir>/resolved_config.json`.
void echo_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace poi
