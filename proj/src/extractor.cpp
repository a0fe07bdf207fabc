#include "poi/extractor.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <set>
#include <thread>

#include "poi/util.hpp"

namespace poi {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "cache and checkpoint I/O assume a little-endian host");

namespace {

constexpr char kFeatureMagic[8] = {'P', 'O', 'I', 'F', 'E', 'A', 'T', '1'};

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t text_seed(std::string_view text, std::uint64_t seed) {
  auto hex = sha256_hex(text);
  return std::stoull(hex.substr(0, 16), nullptr, 16) ^ (seed * 0x9e3779b97f4a7c15ULL);
}

// Standard normals from a splitmix64 stream via Box-Muller; fully specified
// so mock vectors do not depend on the standard library's distributions.
void add_gaussian(std::vector<float>& out, std::uint64_t state, double scale) {
  auto uniform = [&] { return (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < out.size(); i += 2) {
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    out[i] += static_cast<float>(scale * r * std::cos(2 * std::numbers::pi * u2));
    if (i + 1 < out.size()) out[i + 1] += static_cast<float>(scale * r * std::sin(2 * std::numbers::pi * u2));
  }
}

std::vector<float> parse_hidden(std::string_view body, int dim) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("hidden") || !j["hidden"].is_array()) {
    throw std::runtime_error("backend reply lacks a 'hidden' array");
  }
  auto v = j["hidden"].get<std::vector<float>>();
  if (static_cast<int>(v.size()) != dim) {
    throw std::runtime_error("backend returned " + std::to_string(v.size()) + " values, expected " +
                             std::to_string(dim));
  }
  return v;
}

std::string cache_subdir(const std::string& backend_id) { return sha256_hex(backend_id).substr(0, 16); }

}  // namespace

std::string_view to_string(Pooling p) { return p == Pooling::LastToken ? "last_token" : "mean_pool"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "last_token") return Pooling::LastToken;
  if (s == "mean_pool") return Pooling::MeanPool;
  throw UserError("unknown pooling '" + std::string(s) + "'");
}

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Mock: return "mock";
    case BackendKind::StructuredMock: return "structured_mock";
    case BackendKind::Remote: return "remote";
    case BackendKind::Local: return "local";
  }
  return "mock";
}

BackendKind parse_backend_kind(std::string_view s) {
  for (auto k : {BackendKind::Mock, BackendKind::StructuredMock, BackendKind::Remote, BackendKind::Local}) {
    if (to_string(k) == s) return k;
  }
  throw UserError("unknown backend kind '" + std::string(s) + "'");
}

std::string BackendDescriptor::backend_id() const {
  std::string id(to_string(kind));
  switch (kind) {
    case BackendKind::Mock:
    case BackendKind::StructuredMock:
      id += ":seed=" + std::to_string(seed);
      if (kind == BackendKind::StructuredMock) id += ":noise=" + format_double(noise);
      break;
    case BackendKind::Remote: id += ":" + endpoint; break;
    case BackendKind::Local: id += ":" + model_path.string(); break;
  }
  id += ":D=" + std::to_string(dim) + ":" + std::string(to_string(pooling));
  return id;
}

MockBackend::MockBackend(BackendDescriptor d) : FeatureBackend(std::move(d)) {
  if (descriptor_.dim <= 0) throw UserError("backend dimension must be positive");
}

std::vector<float> MockBackend::encode(std::string_view text) {
  const auto dim = static_cast<std::size_t>(descriptor_.dim);
  std::vector<float> out(dim, 0.0f);
  if (descriptor_.pooling == Pooling::LastToken) {
    add_gaussian(out, text_seed(text, descriptor_.seed), 1.0);
    return out;
  }
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) tokens.push_back(text.substr(i, j - i));
    i = j;
  }
  if (tokens.empty()) return out;
  for (auto tok : tokens) add_gaussian(out, text_seed(tok, descriptor_.seed), 1.0 / static_cast<double>(tokens.size()));
  return out;
}

StructuredMockBackend::StructuredMockBackend(BackendDescriptor d, std::vector<std::string> categories)
    : FeatureBackend(std::move(d)), categories_(std::move(categories)) {
  if (descriptor_.dim <= 0) throw UserError("backend dimension must be positive");
  if (static_cast<int>(categories_.size()) > descriptor_.dim) {
    throw UserError("structured mock needs dim >= number of categories");
  }
}

std::vector<float> StructuredMockBackend::encode(std::string_view text) {
  std::vector<float> out(static_cast<std::size_t>(descriptor_.dim), 0.0f);
  constexpr std::string_view kHeader = "\nCategory: ";
  auto pos = text.find(kHeader);
  if (pos != std::string_view::npos) {
    auto start = pos + kHeader.size();
    auto end = text.find('\n', start);
    auto category = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    std::size_t idx;
    auto it = std::find(categories_.begin(), categories_.end(), category);
    if (it != categories_.end()) {
      idx = static_cast<std::size_t>(it - categories_.begin());
    } else {
      idx = static_cast<std::size_t>(text_seed(category, 0) % static_cast<std::uint64_t>(descriptor_.dim));
    }
    out[idx] = 1.0f;
  }
  add_gaussian(out, text_seed(text, descriptor_.seed), descriptor_.noise);
  return out;
}

RemoteBackend::RemoteBackend(BackendDescriptor d) : FeatureBackend(std::move(d)) {
  if (descriptor_.endpoint.empty()) throw UserError("remote backend needs an endpoint");
}

std::vector<float> RemoteBackend::encode(std::string_view text) {
  const auto& url = descriptor_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UserError("backend endpoint needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  httplib::Client client(url.substr(0, path_start));
  client.set_read_timeout(std::chrono::seconds{120});
  auto path = path_start == std::string::npos ? std::string("/") : url.substr(path_start);
  auto res = client.Post(path, json{{"text", text}}.dump(), "application/json");
  if (!res) throw std::runtime_error("backend request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("backend answered HTTP " + std::to_string(res->status));
  return parse_hidden(res->body, descriptor_.dim);
}

LocalProcessBackend::LocalProcessBackend(BackendDescriptor d) : FeatureBackend(std::move(d)) {
  if (descriptor_.model_path.empty()) throw UserError("local backend needs a model path");
}

std::vector<float> LocalProcessBackend::encode(std::string_view text) {
  auto tmp = std::filesystem::temp_directory_path() / ("poi-prompt-" + sha256_hex(text).substr(0, 16) + "-" +
                                                      std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  atomic_write(tmp, text);
  auto cmd = "'" + descriptor_.model_path.string() + "' '" + tmp.string() + "'";
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot start " + descriptor_.model_path.string());
  }
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, n);
  int rc = pclose(pipe);
  std::filesystem::remove(tmp);
  if (rc != 0) throw std::runtime_error("encoder process exited with status " + std::to_string(rc));
  return parse_hidden(output, descriptor_.dim);
}

std::unique_ptr<FeatureBackend> make_backend(const BackendDescriptor& d, std::vector<std::string> categories) {
  switch (d.kind) {
    case BackendKind::Mock: return std::make_unique<MockBackend>(d);
    case BackendKind::StructuredMock: return std::make_unique<StructuredMockBackend>(d, std::move(categories));
    case BackendKind::Remote: return std::make_unique<RemoteBackend>(d);
    case BackendKind::Local: return std::make_unique<LocalProcessBackend>(d);
  }
  throw UserError("unknown backend kind");
}

std::string prompt_digest(const Prompt& p) {
  std::string material(to_string(p.kind));
  material += '\x1f';
  material += p.template_version;
  material += '\x1f';
  material += p.text;
  return sha256_hex(material);
}

FeatureVector extract_feature(const Prompt& prompt, FeatureBackend& backend) {
  const auto& desc = backend.descriptor();
  std::string_view text = prompt.text;
  if (text.size() > desc.max_prompt_chars) {
    spdlog::warn("prompt for POI {} ({}) truncated from {} to {} chars", prompt.poi_id, to_string(prompt.kind),
                 text.size(), desc.max_prompt_chars);
    text = text.substr(0, desc.max_prompt_chars);
  }
  auto values = backend.encode(text);
  if (static_cast<int>(values.size()) != desc.dim) {
    throw std::runtime_error("backend returned dimension " + std::to_string(values.size()));
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw std::runtime_error("backend returned a non-finite value");
  }
  return FeatureVector{std::move(values), desc.backend_id(), prompt_digest(prompt)};
}

FeatureCache::FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  std::ifstream in(dir_ / "index.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("key")) {
      spdlog::warn("skipping damaged feature index line in {}", dir_.string());
      continue;
    }
    index_[j["key"].get<std::string>()] =
        Entry{j.value("path", ""), j.value("D", 0), j.value("payload_sha256", "")};
  }
}

std::string FeatureCache::key(const std::string& backend_id, const std::string& digest) {
  return backend_id + "|" + digest;
}

std::string FeatureCache::encode_payload(std::span<const float> values) {
  std::string bytes(sizeof(kFeatureMagic) + 4 + values.size() * 4, '\0');
  std::memcpy(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic));
  auto d = static_cast<std::uint32_t>(values.size());
  std::memcpy(bytes.data() + 8, &d, 4);
  std::memcpy(bytes.data() + 12, values.data(), values.size() * 4);
  return bytes;
}

std::optional<std::vector<float>> FeatureCache::decode_payload(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) return std::nullopt;
  std::uint32_t d = 0;
  std::memcpy(&d, bytes.data() + 8, 4);
  if (bytes.size() != 12 + std::size_t{d} * 4) return std::nullopt;
  std::vector<float> v(d);
  std::memcpy(v.data(), bytes.data() + 12, std::size_t{d} * 4);
  return v;
}

std::optional<std::vector<float>> FeatureCache::get(const std::string& backend_id, const std::string& digest) {
  auto it = index_.find(key(backend_id, digest));
  if (it == index_.end()) return std::nullopt;
  auto path = dir_ / it->second.path;
  if (!std::filesystem::exists(path)) {
    index_.erase(it);
    return std::nullopt;
  }
  auto bytes = read_file(path);
  auto decoded = decode_payload(bytes);
  if (!decoded || static_cast<int>(decoded->size()) != it->second.dim || sha256_hex(bytes) != it->second.payload_sha256) {
    spdlog::warn("feature cache entry {} is corrupt; recomputing", path.string());
    ++discarded_;
    index_.erase(it);
    return std::nullopt;
  }
  return decoded;
}

void FeatureCache::put(const std::string& backend_id, const std::string& digest, std::span<const float> values) {
  auto rel = cache_subdir(backend_id) + "/" + digest + ".bin";
  auto bytes = encode_payload(values);
  atomic_write(dir_ / rel, bytes);
  Entry e{rel, static_cast<int>(values.size()), sha256_hex(bytes)};
  json j{{"key", key(backend_id, digest)},
         {"path", e.path},
         {"D", e.dim},
         {"backend_id", backend_id},
         {"payload_sha256", e.payload_sha256}};
  std::ofstream out(dir_ / "index.jsonl", std::ios::app);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to feature index in " + dir_.string());
  index_[key(backend_id, digest)] = std::move(e);
}

CorpusExtraction extract_corpus(std::span<const Prompt> prompts, FeatureBackend& backend,
                                const std::filesystem::path& cache_dir, std::size_t max_in_flight) {
  FeatureCache cache(cache_dir);
  const auto backend_id = backend.descriptor().backend_id();
  CorpusExtraction out;

  std::vector<std::string> digests(prompts.size());
  std::vector<std::optional<std::vector<float>>> vectors(prompts.size());
  std::vector<std::size_t> pending;
  std::set<std::string> pending_digests;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    digests[i] = prompt_digest(prompts[i]);
    if (auto hit = cache.get(backend_id, digests[i])) {
      vectors[i] = std::move(hit);
      ++out.cache_hits;
    } else if (pending_digests.insert(digests[i]).second) {
      pending.push_back(i);
    }
  }

  std::vector<std::optional<FeatureVector>> computed(pending.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < pending.size(); k = next++) {
      const auto& p = prompts[pending[k]];
      try {
        computed[k] = extract_feature(p, backend);
      } catch (const std::exception& e) {
        spdlog::error("feature extraction failed for POI {} ({}): {}", p.poi_id, to_string(p.kind), e.what());
      }
    }
  };
  const auto threads = std::max<std::size_t>(1, std::min(max_in_flight, pending.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  out.backend_calls = pending.size();

  std::map<std::string, const std::vector<float>*> fresh;
  for (std::size_t k = 0; k < pending.size(); ++k) {
    if (!computed[k]) continue;
    cache.put(backend_id, digests[pending[k]], computed[k]->values);
    fresh[digests[pending[k]]] = &computed[k]->values;
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!vectors[i]) {
      if (auto it = fresh.find(digests[i]); it != fresh.end()) vectors[i] = *it->second;
    }
  }

  std::map<PoiId, std::array<bool, 3>> seen;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& p = prompts[i];
    auto& flags = seen[p.poi_id];
    if (!vectors[i]) continue;
    auto& bundle = out.bundles[p.poi_id];
    bundle.poi_id = p.poi_id;
    FeatureVector fv{std::move(*vectors[i]), backend_id, digests[i]};
    auto slot = static_cast<std::size_t>(p.kind);
    flags[slot] = true;
    switch (p.kind) {
      case PromptKind::VisitPattern: bundle.visit = std::move(fv); break;
      case PromptKind::Address: bundle.address = std::move(fv); break;
      case PromptKind::Surrounding: bundle.surrounding = std::move(fv); break;
    }
  }
  for (const auto& [id, flags] : seen) {
    if (!(flags[0] && flags[1] && flags[2])) {
      out.missing.push_back(id);
      out.bundles.erase(id);
    }
  }
  if (!out.missing.empty()) spdlog::warn("{} POIs lack a complete feature bundle", out.missing.size());
  return out;
}

FeatureTable to_feature_table(const std::map<PoiId, FeatureBundle>& bundles) {
  FeatureTable t;
  if (bundles.empty()) return t;
  const auto& first = bundles.begin()->second;
  const auto dim = static_cast<Eigen::Index>(first.visit.values.size());
  t.backend_id = first.visit.backend_id;
  const auto n = static_cast<Eigen::Index>(bundles.size());
  t.visit.resize(n, dim);
  t.address.resize(n, dim);
  t.surrounding.resize(n, dim);
  Eigen::Index row = 0;
  for (const auto& [id, b] : bundles) {
    for (const FeatureVector* fv : {&b.visit, &b.address, &b.surrounding}) {
      if (static_cast<Eigen::Index>(fv->values.size()) != dim || fv->backend_id != t.backend_id) {
        throw UserError("feature bundle for POI " + std::to_string(id) + " mixes backends or dimensions");
      }
    }
    t.visit.row(row) = Eigen::Map<const Eigen::RowVectorXf>(b.visit.values.data(), dim);
    t.address.row(row) = Eigen::Map<const Eigen::RowVectorXf>(b.address.values.data(), dim);
    t.surrounding.row(row) = Eigen::Map<const Eigen::RowVectorXf>(b.surrounding.values.data(), dim);
    t.poi_ids.push_back(id);
    ++row;
  }
  return t;
}

void save_feature_manifest(const CorpusExtraction& ex, const std::filesystem::path& cache_dir) {
  std::string out;
  for (const auto& [id, b] : ex.bundles) {
    json j{{"poi_id", id},
           {"backend_id", b.visit.backend_id},
           {"visit", b.visit.prompt_digest},
           {"address", b.address.prompt_digest},
           {"surrounding", b.surrounding.prompt_digest}};
    out += j.dump();
    out += '\n';
  }
  atomic_write(cache_dir / "features.jsonl", out);
}

FeatureTable load_feature_table(const std::filesystem::path& cache_dir) {
  std::ifstream in(cache_dir / "features.jsonl");
  if (!in) throw UserError("no features.jsonl in " + cache_dir.string());
  FeatureCache cache(cache_dir);
  std::map<PoiId, FeatureBundle> bundles;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    FeatureBundle b;
    b.poi_id = j.at("poi_id").get<PoiId>();
    auto backend_id = j.at("backend_id").get<std::string>();
    for (auto [field, target] : {std::pair{"visit", &b.visit}, std::pair{"address", &b.address},
                                 std::pair{"surrounding", &b.surrounding}}) {
      auto digest = j.at(field).get<std::string>();
      auto v = cache.get(backend_id, digest);
      if (!v) throw UserError("feature vector " + digest + " missing from cache " + cache_dir.string());
      *target = FeatureVector{std::move(*v), backend_id, digest};
    }
    bundles.emplace(b.poi_id, std::move(b));
  }
  return to_feature_table(bundles);
}

}  // namespace poi
