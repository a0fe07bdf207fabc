#include "poi/embedding_io.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "poi/util.hpp"

namespace poi {

std::string embeddings_to_text(const std::vector<PoiId>& ids, const MatrixF& m) {
  if (static_cast<Eigen::Index>(ids.size()) != m.rows()) {
    throw std::invalid_argument("embedding rows do not match id count");
  }
  std::string out = std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += std::to_string(ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(m(i, j)));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& e) {
  atomic_write(path, embeddings_to_text(e.poi_ids, e.matrix));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw UserError(where + ": empty embedding file");
  std::istringstream header(line);
  std::string n_text, d_text;
  header >> n_text >> d_text;
  const auto n = parse_int(n_text, where + " header N");
  const auto d = parse_int(d_text, where + " header d");
  if (n < 0 || d <= 0) throw UserError(where + ": invalid header '" + line + "'");

  EmbeddingSet e;
  e.provenance = where;
  e.matrix.resize(n, d);
  e.poi_ids.reserve(static_cast<std::size_t>(n));
  std::set<PoiId> seen;
  std::int64_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= n) throw UserError(where + ": more rows than the header's " + std::to_string(n));
    std::istringstream fields(line);
    std::string tok;
    fields >> tok;
    const PoiId id = parse_int(tok, where + " poi_id");
    if (!seen.insert(id).second) throw UserError(where + ": duplicate poi_id " + std::to_string(id));
    for (std::int64_t j = 0; j < d; ++j) {
      if (!(fields >> tok)) throw UserError(where + ": row for poi " + std::to_string(id) + " has fewer than " + std::to_string(d) + " values");
      const double v = parse_double(tok, where + " value");
      if (!std::isfinite(v)) throw UserError(where + ": non-finite value for poi " + std::to_string(id));
      e.matrix(row, j) = static_cast<float>(v);
    }
    if (fields >> tok) throw UserError(where + ": row for poi " + std::to_string(id) + " has more than " + std::to_string(d) + " values");
    e.poi_ids.push_back(id);
    ++row;
  }
  if (row != n) throw UserError(where + ": header says " + std::to_string(n) + " rows, found " + std::to_string(row));
  return e;
}

}  // namespace poi
