#include "poi/config.hpp"

#include <algorithm>
#include <type_traits>

#include "poi/util.hpp"

namespace poi {

void RunConfig::propagate_seed() {
  backend.seed = seed;
  sampler.seed = seed;
  train.seed = seed;
  skipgram.seed = seed;
  task.seed = seed;
}

namespace {

using nlohmann::json;

template <typename C, typename F>
void fields(C& c, F&& f) {
  f("seed", c.seed);
  f("output_dir", c.output_dir);

  f("data.checkins", c.data.checkins);
  f("data.adapter", c.data.adapter);
  f("data.timezone_offset_minutes", c.data.timezone_offset_minutes);
  f("data.min_poi_checkins", c.data.min_poi_checkins);
  f("data.min_seq_len", c.data.min_seq_len);
  f("data.split_test", c.data.split[0]);
  f("data.split_val", c.data.split[1]);
  f("data.split_train", c.data.split[2]);

  f("attributes.side_km", c.attributes_side_km);

  f("geocoder.enabled", c.geocoder.enabled);
  f("geocoder.endpoint", c.geocoder.endpoint);
  f("geocoder.email", c.geocoder.email);
  f("geocoder.rate_limit_per_sec", c.geocoder.rate_limit_per_sec);
  f("geocoder.max_retries", c.geocoder.max_retries);
  f("geocoder.timeout_seconds", c.geocoder.timeout_seconds);

  f("backend.kind", c.backend.kind);
  f("backend.dim", c.backend.dim);
  f("backend.pooling", c.backend.pooling);
  f("backend.endpoint", c.backend.endpoint);
  f("backend.model_path", c.backend.model_path);
  f("backend.noise", c.backend.noise);
  f("backend.max_prompt_chars", c.backend.max_prompt_chars);
  f("backend.max_in_flight", c.backend_max_in_flight);

  f("enhancer.d", c.enhancer.d);
  f("enhancer.d_prime", c.enhancer.d_prime);
  f("enhancer.H", c.enhancer.H);
  f("enhancer.d_h", c.enhancer.d_h);
  f("enhancer.L1", c.enhancer.L1);
  f("enhancer.L2", c.enhancer.L2);
  f("enhancer.D", c.enhancer.D);
  f("enhancer.ffn_mult", c.enhancer.ffn_mult);
  f("enhancer.paf_parallel", c.enhancer.paf_parallel);
  f("enhancer.scale_by_head_dim", c.enhancer.scale_by_head_dim);
  f("enhancer.chunk_size", c.chunk_size);

  f("sampler.lambda", c.sampler.lambda);
  f("sampler.side_km", c.sampler.side_km);
  f("sampler.m", c.sampler.m);
  f("sampler.strategies", c.sampler.strategies);

  f("train.gamma", c.train.gamma);
  f("train.epochs", c.train.epochs);
  f("train.learning_rate", c.train.learning_rate);
  f("train.weight_decay", c.train.weight_decay);
  f("train.grad_clip", c.train.grad_clip);

  f("skipgram.window", c.skipgram.window);
  f("skipgram.negatives", c.skipgram.negatives);
  f("skipgram.epochs", c.skipgram.epochs);
  f("skipgram.learning_rate", c.skipgram.learning_rate);

  f("task.lstm_hidden", c.task.lstm_hidden);
  f("task.lstm_layers", c.task.lstm_layers);
  f("task.epochs", c.task.epochs);
  f("task.lr_recommendation", c.task.lr_recommendation);
  f("task.lr_other", c.task.lr_other);
  f("task.max_slice", c.task.max_slice);
  f("task.flow_window_hours", c.task.flow_window_hours);
  f("task.min_flow_len", c.task.min_flow_len);
  f("task.batch_size", c.task.batch_size);
  f("task.flow_input_len", c.task.flow_input_len);
  f("task.flow_horizon", c.task.flow_horizon);
  f("task.kmeans_restarts", c.task.kmeans_restarts);
}

std::string adapter_name(Adapter a) { return a == Adapter::Foursquare ? "foursquare" : "tsv"; }

template <typename T>
json encode(const T& v) {
  if constexpr (std::is_same_v<T, Adapter>) {
    return adapter_name(v);
  } else if constexpr (std::is_same_v<T, BackendKind> || std::is_same_v<T, Pooling>) {
    return std::string(to_string(v));
  } else if constexpr (std::is_same_v<T, std::vector<Strategy>>) {
    json a = json::array();
    for (auto s : v) a.push_back(std::string(to_string(s)));
    return a;
  } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
    return v.string();
  } else if constexpr (std::is_same_v<T, std::optional<std::int32_t>>) {
    return v ? json(*v) : json(nullptr);
  } else {
    return json(v);
  }
}

[[noreturn]] void bad_type(const std::string& key, const char* expected, const json& got) {
  throw UserError("config key '" + key + "': expected " + expected + ", got " + got.dump());
}

template <typename T>
void decode(const std::string& key, const json& j, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) bad_type(key, "a boolean", j);
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) bad_type(key, "an integer", j);
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned() || j.get<std::int64_t>() >= 0) {
        out = j.get<T>();
      } else {
        bad_type(key, "a non-negative integer", j);
      }
    } else {
      out = j.get<T>();
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) bad_type(key, "a number", j);
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) bad_type(key, "a string", j);
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
    if (!j.is_string()) bad_type(key, "a path string", j);
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::optional<std::int32_t>>) {
    if (j.is_null()) {
      out.reset();
    } else {
      if (!j.is_number_integer()) bad_type(key, "an integer or null", j);
      out = j.get<std::int32_t>();
    }
  } else if constexpr (std::is_same_v<T, Adapter>) {
    if (!j.is_string()) bad_type(key, "a string", j);
    out = parse_adapter(j.get<std::string>());
  } else if constexpr (std::is_same_v<T, BackendKind>) {
    if (!j.is_string()) bad_type(key, "a string", j);
    out = parse_backend_kind(j.get<std::string>());
  } else if constexpr (std::is_same_v<T, Pooling>) {
    if (!j.is_string()) bad_type(key, "a string", j);
    out = parse_pooling(j.get<std::string>());
  } else if constexpr (std::is_same_v<T, std::vector<Strategy>>) {
    if (!j.is_array()) bad_type(key, "an array of strategy names", j);
    out.clear();
    for (const auto& s : j) {
      if (!s.is_string()) bad_type(key, "an array of strategy names", j);
      out.push_back(parse_strategy(s.get<std::string>()));
    }
  } else {
    static_assert(sizeof(T) == 0, "unsupported config field type");
  }
}

void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw UserError("config key '" + key + "': " + what);
  };
  check(c.data.min_poi_checkins >= 1, "data.min_poi_checkins", "must be at least 1");
  check(c.data.min_seq_len >= 1, "data.min_seq_len", "must be at least 1");
  for (int i = 0; i < 3; ++i) check(c.data.split[static_cast<std::size_t>(i)] > 0, "data.split_*", "ratios must be positive");
  check(c.attributes_side_km > 0, "attributes.side_km", "must be positive");
  check(c.geocoder.rate_limit_per_sec > 0, "geocoder.rate_limit_per_sec", "must be positive");
  check(c.geocoder.max_retries >= 0, "geocoder.max_retries", "must be non-negative");
  check(c.backend.dim >= 1, "backend.dim", "must be positive");
  check(c.backend_max_in_flight >= 1, "backend.max_in_flight", "must be at least 1");
  check(c.backend.noise >= 0, "backend.noise", "must be non-negative");
  check(c.sampler.m >= 3, "sampler.m", "must be at least 3 (anchor, positive and one negative)");
  check(c.sampler.lambda >= 0, "sampler.lambda", "must be non-negative");
  check(c.sampler.side_km > 0, "sampler.side_km", "must be positive");
  check(!c.sampler.strategies.empty(), "sampler.strategies", "at least one strategy must be enabled");
  check(c.train.gamma > 0, "train.gamma", "must be positive");
  check(c.train.epochs >= 1, "train.epochs", "must be at least 1");
  check(c.train.learning_rate >= 0, "train.learning_rate", "must be non-negative");
  check(c.train.weight_decay >= 0, "train.weight_decay", "must be non-negative");
  check(c.train.grad_clip >= 0, "train.grad_clip", "must be non-negative");
  check(c.skipgram.window >= 1 && c.skipgram.epochs >= 1 && c.skipgram.negatives >= 0, "skipgram.*", "window and epochs must be positive");
  check(c.enhancer.D == c.backend.dim, "enhancer.D", "must equal backend.dim (" + std::to_string(c.backend.dim) + ")");
  c.enhancer.validate();
  c.task.validate();
}

}  // namespace

json to_json(const RunConfig& c) {
  json j = json::object();
  fields(c, [&](const char* key, const auto& v) { j[key] = encode(v); });
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw UserError("config must be a JSON object of dotted keys");
  RunConfig c;
  std::size_t used = 0;
  fields(c, [&](const char* key, auto& v) {
    if (auto it = j.find(key); it != j.end()) {
      decode(key, *it, v);
      ++used;
    }
  });
  if (used != j.size()) {
    std::vector<std::string> known;
    fields(c, [&](const char* key, auto&) { known.emplace_back(key); });
    for (const auto& [key, _] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) throw UserError("unknown config key '" + key + "'");
    }
  }
  validate(c);
  c.propagate_seed();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UserError(path.string() + ": not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void echo_config(const RunConfig& c, const std::filesystem::path& dir) {
  atomic_write(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
}

}  // namespace poi
