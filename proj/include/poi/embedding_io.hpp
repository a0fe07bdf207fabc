#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "poi/corpus.hpp"
#include "poi/tensor.hpp"

namespace poi {

enum class EmbeddingRole { BasePoi, Fused, Semantic, Aligned };

/// n x d matrix with one row per entry of `poi_ids`.
struct EmbeddingSet {
  std::vector<PoiId> poi_ids;
  MatrixF matrix;
  EmbeddingRole role = EmbeddingRole::BasePoi;
  std::string provenance;

  std::size_t size() const { return poi_ids.size(); }
  int dim() const { return static_cast<int>(matrix.cols()); }
};

/// Text format: "N d" then N lines "poi_id v1 ... vd" (9 significant digits).
std::string embeddings_to_text(const std::vector<PoiId>& ids, const MatrixF& m);
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& e);
/// Rows in file order. Throws UserError on malformed content or duplicate ids.
EmbeddingSet load_embeddings(const std::filesystem::path& path);

}  // namespace poi
