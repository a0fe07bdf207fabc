#include "poi/baselines.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "poi/util.hpp"

namespace poi {

EmbeddingSet align_embeddings(const EmbeddingSet& raw, const std::vector<PoiId>& ids, int expected_d, bool allow_missing,
                              AlignReport* report) {
  if (raw.dim() != expected_d) {
    throw UserError(raw.provenance + ": embedding dimension " + std::to_string(raw.dim()) + " does not match d = " +
                    std::to_string(expected_d));
  }
  std::map<PoiId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < raw.poi_ids.size(); ++i) row_of[raw.poi_ids[i]] = static_cast<Eigen::Index>(i);
  std::set<PoiId> wanted(ids.begin(), ids.end());

  AlignReport rep;
  for (PoiId id : raw.poi_ids) {
    if (!wanted.count(id)) rep.extra.push_back(id);
  }
  std::vector<PoiId> present;
  for (PoiId id : wanted) {
    if (row_of.count(id)) {
      present.push_back(id);
    } else {
      rep.missing.push_back(id);
    }
  }
  if (!rep.extra.empty()) spdlog::warn("{}: ignoring {} rows for POIs not in the dataset", raw.provenance, rep.extra.size());
  if (!rep.missing.empty()) {
    std::string msg = raw.provenance + ": no embedding for " + std::to_string(rep.missing.size()) + " POIs (first: " +
                      std::to_string(rep.missing.front()) + ")";
    if (!allow_missing) throw UserError(msg + "; pass --allow-missing to skip them");
    spdlog::warn("{}", msg);
  }

  EmbeddingSet out;
  out.role = raw.role;
  out.provenance = raw.provenance;
  out.poi_ids = present;
  out.matrix.resize(static_cast<Eigen::Index>(present.size()), raw.matrix.cols());
  for (std::size_t i = 0; i < present.size(); ++i) out.matrix.row(static_cast<Eigen::Index>(i)) = raw.matrix.row(row_of[present[i]]);
  if (report) *report = std::move(rep);
  return out;
}

EmbeddingSet load_base_embeddings(const std::filesystem::path& path, const Dataset& ds, int expected_d, bool allow_missing,
                                  AlignReport* report) {
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto e = align_embeddings(load_embeddings(path), ids, expected_d, allow_missing, report);
  e.role = EmbeddingRole::BasePoi;
  return e;
}

namespace {

float sigmoid(float x) {
  if (x > 30.f) return 1.f;
  if (x < -30.f) return 0.f;
  return 1.f / (1.f + std::exp(-x));
}

}  // namespace

SkipGramResult train_skipgram_reference(const Dataset& train, const SkipGramConfig& cfg) {
  if (train.sequences.empty()) throw UserError("skip-gram needs a non-empty training split");
  if (cfg.d < 1 || cfg.window < 1 || cfg.negatives < 0 || cfg.epochs < 1) throw UserError("invalid skip-gram settings");

  std::vector<PoiId> ids;
  std::map<PoiId, int> index;
  for (const auto& [id, _] : train.pois) {
    index[id] = static_cast<int>(ids.size());
    ids.push_back(id);
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  std::vector<std::vector<int>> seqs;
  std::vector<double> counts(ids.size(), 0.0);
  std::size_t pairs_per_epoch = 0;
  for (const auto& s : train.sequences) {
    std::vector<int> v;
    for (const auto& r : s.records) {
      auto it = index.find(r.poi_id);
      if (it == index.end()) continue;
      v.push_back(it->second);
      counts[static_cast<std::size_t>(it->second)] += 1.0;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t lo = i >= static_cast<std::size_t>(cfg.window) ? i - static_cast<std::size_t>(cfg.window) : 0;
      const std::size_t hi = std::min(v.size() - 1, i + static_cast<std::size_t>(cfg.window));
      pairs_per_epoch += hi - lo;
    }
    seqs.push_back(std::move(v));
  }

  std::mt19937_64 rng(cfg.seed);
  const float bound = 0.5f / static_cast<float>(cfg.d);
  std::uniform_real_distribution<float> init(-bound, bound);
  MatrixF in(n, cfg.d), out = MatrixF::Zero(n, cfg.d);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = init(rng);

  std::vector<double> weights(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) weights[i] = std::pow(counts[i], 0.75);
  if (pairs_per_epoch == 0) throw UserError("skip-gram: training sequences contain no co-occurring POI pairs");
  std::discrete_distribution<int> noise(weights.begin(), weights.end());

  SkipGramResult res;
  const double total_pairs = static_cast<double>(pairs_per_epoch) * cfg.epochs;
  double done = 0;
  Eigen::Matrix<float, 1, Eigen::Dynamic> grad(cfg.d);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0;
    std::size_t pairs = 0;
    for (const auto& v : seqs) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t lo = i >= static_cast<std::size_t>(cfg.window) ? i - static_cast<std::size_t>(cfg.window) : 0;
        const std::size_t hi = std::min(v.size() - 1, i + static_cast<std::size_t>(cfg.window));
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const float lr = static_cast<float>(cfg.learning_rate * std::max(1e-4, 1.0 - done / total_pairs));
          ++done;
          const int c = v[i];
          grad.setZero();
          auto update = [&](int target, float label) {
            const float s = sigmoid(in.row(c).dot(out.row(target)));
            loss -= label > 0 ? std::log(std::max(s, 1e-7f)) : std::log(std::max(1.f - s, 1e-7f));
            const float g = lr * (label - s);
            grad += g * out.row(target);
            out.row(target) += g * in.row(c);
          };
          update(v[j], 1.f);
          for (int k = 0; k < cfg.negatives; ++k) {
            const int neg = noise(rng);
            if (neg == v[j]) continue;
            update(neg, 0.f);
          }
          in.row(c) += grad;
          ++pairs;
        }
      }
    }
    res.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
    spdlog::info("skip-gram epoch {}: loss {:.6f}", epoch + 1, res.epoch_loss.back());
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (counts[i] == 0) res.unseen.push_back(ids[i]);
  }
  if (!res.unseen.empty()) spdlog::warn("skip-gram: {} POIs never appear in training sequences; their rows stay random", res.unseen.size());
  res.embeddings.poi_ids = ids;
  res.embeddings.matrix = std::move(in);
  res.embeddings.role = EmbeddingRole::BasePoi;
  res.embeddings.provenance = "skipgram-ref";
  return res;
}

}  // namespace poi
