#include "poi/sampling.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <json.hpp>
#include <random>
#include <unordered_set>

#include "poi/util.hpp"

namespace poi {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::SeqTime: return "seqtime";
    case Strategy::Geo: return "geo";
    case Strategy::Func: return "func";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "seqtime") return Strategy::SeqTime;
  if (s == "geo") return Strategy::Geo;
  if (s == "func") return Strategy::Func;
  throw UserError("unknown sampling strategy '" + std::string(s) + "' (expected seqtime, geo or func)");
}

bool SamplerConfig::enabled(Strategy s) const {
  return std::find(strategies.begin(), strategies.end(), s) != strategies.end();
}

void SamplerConfig::validate() const {
  if (m < 3) throw UserError("sampler.m must be at least 3 (anchor, positive and one negative), got " + std::to_string(m));
  if (lambda < 0) throw UserError("sampler.lambda must be non-negative");
  if (!(side_km > 0)) throw UserError("sampler.side_km must be positive");
  if (strategies.empty()) throw UserError("at least one sampling strategy must be enabled");
}

std::vector<PoiId> sequence_time_positives(std::size_t j, const CheckinSequence& seq, int lambda) {
  const auto& r = seq.records;
  if (j >= r.size()) throw std::out_of_range("sequence_time_positives: index out of range");
  const auto date = to_local(r[j]).date;
  const std::size_t lam = static_cast<std::size_t>(std::max(lambda, 0));
  const std::size_t lo = j >= lam ? j - lam : 0;
  const std::size_t hi = std::min(r.size() - 1, j + lam);
  std::vector<PoiId> out;
  for (std::size_t k = lo; k <= hi; ++k) {
    if (k != j && to_local(r[k]).date == date) out.push_back(r[k].poi_id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<PoiId> geography_positives(const Poi& poi, const GridIndex& index) {
  std::vector<PoiId> out;
  for (const Poi* p : index.query(poi)) {
    if (p->category == poi.category) out.push_back(p->id);
  }
  return out;
}

std::vector<PoiId> geography_positives(const Poi& poi, const Dataset& ds, double side_km) {
  return geography_positives(poi, GridIndex(ds, side_km));
}

FunctionalIndex::FunctionalIndex(const Dataset& ds, std::span<const PoiAttributes> attrs) {
  for (const auto& a : attrs) patterns_[a.poi_id] = a.visit_pattern;
  for (const auto& [id, poi] : ds.pois) {
    auto it = patterns_.find(id);
    if (it == patterns_.end()) {
      throw UserError("no attributes for POI " + std::to_string(id) + "; run derive-attributes on this dataset first");
    }
    groups_[{poi.category, static_cast<int>(it->second.weekly), static_cast<int>(it->second.daily)}].push_back(id);
  }
}

std::vector<PoiId> FunctionalIndex::positives(const Poi& poi) const {
  auto it = patterns_.find(poi.id);
  if (it == patterns_.end()) throw UserError("no attributes for POI " + std::to_string(poi.id));
  auto g = groups_.find({poi.category, static_cast<int>(it->second.weekly), static_cast<int>(it->second.daily)});
  std::vector<PoiId> out;
  if (g == groups_.end()) return out;
  for (PoiId id : g->second) {
    if (id != poi.id) out.push_back(id);
  }
  return out;
}

std::map<PoiId, std::set<PoiId>> PositiveSets::merged(const SamplerConfig& cfg) const {
  std::map<PoiId, std::set<PoiId>> out;
  auto take = [&](const std::map<PoiId, std::set<PoiId>>& src) {
    for (const auto& [a, ps] : src) out[a].insert(ps.begin(), ps.end());
  };
  if (cfg.enabled(Strategy::SeqTime)) take(seqtime);
  if (cfg.enabled(Strategy::Geo)) take(geo);
  if (cfg.enabled(Strategy::Func)) take(func);
  return out;
}

PositiveSets compute_positive_sets(const Dataset& ds, const Dataset& train, std::span<const PoiAttributes> attrs,
                                   const SamplerConfig& cfg) {
  cfg.validate();
  PositiveSets ps;
  if (cfg.enabled(Strategy::SeqTime)) {
    for (const auto& seq : train.sequences) {
      for (std::size_t j = 0; j < seq.records.size(); ++j) {
        const PoiId anchor = seq.records[j].poi_id;
        for (PoiId p : sequence_time_positives(j, seq, cfg.lambda)) {
          if (p != anchor) ps.seqtime[anchor].insert(p);
        }
      }
    }
  }
  if (cfg.enabled(Strategy::Geo)) {
    GridIndex index(ds, cfg.side_km);
    for (const auto& [id, poi] : ds.pois) {
      for (PoiId p : geography_positives(poi, index)) ps.geo[id].insert(p);
    }
  }
  if (cfg.enabled(Strategy::Func)) {
    FunctionalIndex index(ds, attrs);
    for (const auto& [id, poi] : ds.pois) {
      for (PoiId p : index.positives(poi)) ps.func[id].insert(p);
    }
  }
  return ps;
}

std::vector<PoiId> TrainingBatch::rows() const {
  std::vector<PoiId> r{anchor, positive};
  r.insert(r.end(), negatives.begin(), negatives.end());
  return r;
}

namespace {

std::uint8_t source_mask(const PositiveSets& ps, const SamplerConfig& cfg, PoiId a, PoiId p) {
  std::uint8_t mask = 0;
  auto has = [&](const std::map<PoiId, std::set<PoiId>>& m) {
    auto it = m.find(a);
    return it != m.end() && it->second.count(p) > 0;
  };
  if (cfg.enabled(Strategy::SeqTime) && has(ps.seqtime)) mask |= static_cast<std::uint8_t>(Strategy::SeqTime);
  if (cfg.enabled(Strategy::Geo) && has(ps.geo)) mask |= static_cast<std::uint8_t>(Strategy::Geo);
  if (cfg.enabled(Strategy::Func) && has(ps.func)) mask |= static_cast<std::uint8_t>(Strategy::Func);
  return mask;
}

}  // namespace

BatchPlan build_batches(const Dataset& ds, const Dataset& train, std::span<const PoiAttributes> attrs,
                        const SamplerConfig& cfg, const std::set<PoiId>& allowed) {
  const auto positives = compute_positive_sets(ds, train, attrs, cfg);
  const auto merged = positives.merged(cfg);
  auto ok = [&](PoiId id) { return allowed.empty() || allowed.count(id) > 0; };

  std::vector<PoiId> pool;
  for (const auto& [id, _] : ds.pois) {
    if (ok(id)) pool.push_back(id);
  }
  const std::size_t need = static_cast<std::size_t>(cfg.m - 2);
  std::mt19937_64 rng(cfg.seed);
  BatchPlan plan;

  for (PoiId anchor : pool) {
    std::vector<PoiId> pos;
    if (auto it = merged.find(anchor); it != merged.end()) {
      for (PoiId p : it->second) {
        if (ok(p)) pos.push_back(p);
      }
    }
    if (pos.empty()) {
      ++plan.anchors_without_positives;
      continue;
    }
    std::unordered_set<PoiId> excluded(pos.begin(), pos.end());
    excluded.insert(anchor);
    const std::size_t available = pool.size() - excluded.size();

    for (PoiId p : pos) {
      TrainingBatch b{anchor, p, {}, source_mask(positives, cfg, anchor, p)};
      if (available == 0) {
        ++plan.pairs_without_negatives;
        continue;
      }
      if (available < need) {
        std::vector<PoiId> cands;
        for (PoiId id : pool) {
          if (!excluded.count(id)) cands.push_back(id);
        }
        std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
        for (std::size_t k = 0; k < need; ++k) b.negatives.push_back(cands[pick(rng)]);
        ++plan.batches_with_replacement;
      } else if (available < 2 * need) {
        std::vector<PoiId> cands;
        for (PoiId id : pool) {
          if (!excluded.count(id)) cands.push_back(id);
        }
        for (std::size_t k = 0; k < need; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, cands.size() - 1);
          std::swap(cands[k], cands[pick(rng)]);
        }
        b.negatives.assign(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(need));
      } else {
        // Rejection sampling: at least half the pool is eligible.
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        std::unordered_set<PoiId> chosen;
        while (b.negatives.size() < need) {
          const PoiId c = pool[pick(rng)];
          if (excluded.count(c) || !chosen.insert(c).second) continue;
          b.negatives.push_back(c);
        }
      }
      plan.batches.push_back(std::move(b));
    }
  }
  if (plan.batches_with_replacement > 0) {
    spdlog::warn("{} batches drew negatives with replacement: fewer than m-2 = {} eligible POIs", plan.batches_with_replacement,
                 need);
  }
  if (plan.pairs_without_negatives > 0) {
    spdlog::warn("{} (anchor, positive) pairs dropped: no POI left to use as a negative", plan.pairs_without_negatives);
  }
  spdlog::info("sampler: {} batches of m={}, {} anchors without positives", plan.batches.size(), cfg.m,
               plan.anchors_without_positives);
  return plan;
}

std::string batches_to_jsonl(std::span<const TrainingBatch> batches) {
  std::string out;
  for (const auto& b : batches) {
    nlohmann::json sources = nlohmann::json::array();
    for (Strategy s : {Strategy::SeqTime, Strategy::Geo, Strategy::Func}) {
      if (b.sources & static_cast<std::uint8_t>(s)) sources.push_back(to_string(s));
    }
    nlohmann::json j{{"anchor", b.anchor}, {"positive", b.positive}, {"negatives", b.negatives}, {"sources", sources}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace poi
