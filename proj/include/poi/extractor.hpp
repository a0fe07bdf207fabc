#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poi/prompts.hpp"
#include "poi/tensor.hpp"

namespace poi {

enum class Pooling { LastToken, MeanPool };
enum class BackendKind { Mock, StructuredMock, Remote, Local };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);
std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

struct BackendDescriptor {
  BackendKind kind = BackendKind::Mock;
  int dim = 4096;
  Pooling pooling = Pooling::LastToken;
  std::string endpoint;              // Remote: URL accepting POST {"text": ...}
  std::filesystem::path model_path;  // Local: encoder executable
  std::uint64_t seed = 0;            // mocks
  double noise = 0.05;               // StructuredMock noise scale
  std::size_t max_prompt_chars = 16384;

  /// Stable identifier; also the first half of every cache key.
  std::string backend_id() const;
};

/// A frozen text encoder: text in, last-layer hidden state out.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::vector<float> encode(std::string_view text) = 0;
  const BackendDescriptor& descriptor() const { return descriptor_; }

 protected:
  explicit FeatureBackend(BackendDescriptor d) : descriptor_(std::move(d)) {}
  BackendDescriptor descriptor_;
};

/// Hash-seeded Gaussian hidden states; a pure function of (text, seed).
/// LastToken hashes the whole text, MeanPool averages per-token vectors.
class MockBackend final : public FeatureBackend {
 public:
  explicit MockBackend(BackendDescriptor d);
  std::vector<float> encode(std::string_view text) override;
};

/// One-hot of the prompt's "Category:" value plus hash noise of scale
/// `noise`; category index is its position in `categories` when listed,
/// otherwise a hash modulo dim.
class StructuredMockBackend final : public FeatureBackend {
 public:
  StructuredMockBackend(BackendDescriptor d, std::vector<std::string> categories = {});
  std::vector<float> encode(std::string_view text) override;

 private:
  std::vector<std::string> categories_;
};

/// POST {"text": ...} to the endpoint, expects {"hidden": [D floats]}.
class RemoteBackend final : public FeatureBackend {
 public:
  explicit RemoteBackend(BackendDescriptor d);
  std::vector<float> encode(std::string_view text) override;
};

/// Runs `model_path <prompt-file>`; the process prints {"hidden": [...]}.
class LocalProcessBackend final : public FeatureBackend {
 public:
  explicit LocalProcessBackend(BackendDescriptor d);
  std::vector<float> encode(std::string_view text) override;
};

std::unique_ptr<FeatureBackend> make_backend(const BackendDescriptor& d, std::vector<std::string> categories = {});

struct FeatureVector {
  std::vector<float> values;
  std::string backend_id;
  std::string prompt_digest;

  bool operator==(const FeatureVector&) const = default;
};

struct FeatureBundle {
  PoiId poi_id = 0;
  FeatureVector visit;
  FeatureVector address;
  FeatureVector surrounding;
};

/// sha256(kind || template_version || text), hex.
std::string prompt_digest(const Prompt& p);

/// Encodes one prompt. Over-long prompts are truncated with a warning.
/// Throws std::runtime_error when the backend returns the wrong length or
/// non-finite values.
FeatureVector extract_feature(const Prompt& prompt, FeatureBackend& backend);

/// Content-addressed vector store. Layout: `index.jsonl` (one JSON object
/// per entry: key, path, D, backend_id, payload_sha256) plus one binary per
/// vector: 8-byte magic, uint32 LE D, D float32 LE.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path dir);

  /// Returns nullopt on a miss. A present but damaged entry is logged,
  /// dropped, and reported as a miss.
  std::optional<std::vector<float>> get(const std::string& backend_id, const std::string& digest);
  void put(const std::string& backend_id, const std::string& digest, std::span<const float> values);

  std::size_t discarded() const { return discarded_; }
  const std::filesystem::path& dir() const { return dir_; }

  static std::string encode_payload(std::span<const float> values);
  static std::optional<std::vector<float>> decode_payload(std::string_view bytes);

 private:
  struct Entry {
    std::string path;
    int dim = 0;
    std::string payload_sha256;
  };
  static std::string key(const std::string& backend_id, const std::string& digest);

  std::filesystem::path dir_;
  std::map<std::string, Entry> index_;
  std::size_t discarded_ = 0;
};

struct CorpusExtraction {
  std::map<PoiId, FeatureBundle> bundles;
  std::vector<PoiId> missing;  // POIs lacking one of the three vectors
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
};

/// Encodes every uncached prompt (up to `max_in_flight` concurrent backend
/// calls), stores results in the cache, and groups them per POI. Backend
/// failures are logged per prompt and leave the POI in `missing`.
CorpusExtraction extract_corpus(std::span<const Prompt> prompts, FeatureBackend& backend,
                                const std::filesystem::path& cache_dir, std::size_t max_in_flight = 1);

/// Dense view of bundles, rows in ascending poi_id order.
struct FeatureTable {
  std::vector<PoiId> poi_ids;
  std::string backend_id;
  MatrixF visit, address, surrounding;

  std::size_t dim() const { return static_cast<std::size_t>(visit.cols()); }
};

FeatureTable to_feature_table(const std::map<PoiId, FeatureBundle>& bundles);

/// `features.jsonl` in the cache dir: {poi_id, backend_id, visit, address, surrounding} digests.
void save_feature_manifest(const CorpusExtraction& ex, const std::filesystem::path& cache_dir);
FeatureTable load_feature_table(const std::filesystem::path& cache_dir);

}  // namespace poi
