#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "poi/corpus.hpp"
#include "poi/embedding_io.hpp"

namespace poi {

struct AlignReport {
  std::vector<PoiId> missing;
  std::vector<PoiId> extra;
};

/// Reorders `raw` to ascending `ids`. Rows for unknown ids are dropped with
/// a warning. Missing ids are fatal (UserError) unless `allow_missing`, in
/// which case they are left out of the result.
EmbeddingSet align_embeddings(const EmbeddingSet& raw, const std::vector<PoiId>& ids, int expected_d,
                              bool allow_missing, AlignReport* report = nullptr);

EmbeddingSet load_base_embeddings(const std::filesystem::path& path, const Dataset& ds, int expected_d,
                                  bool allow_missing = false, AlignReport* report = nullptr);

struct SkipGramConfig {
  int d = 256;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

struct SkipGramResult {
  EmbeddingSet embeddings;          // one row per POI of the dataset, ascending id
  std::vector<PoiId> unseen;        // random rows: POI absent from every training sequence
  std::vector<double> epoch_loss;   // mean negative-sampling loss per (center, context) pair
};

/// Skip-gram with negative sampling over POI-id sequences. Negatives follow
/// the unigram distribution raised to 0.75; the step size decays linearly.
SkipGramResult train_skipgram_reference(const Dataset& train, const SkipGramConfig& cfg);

}  // namespace poi
