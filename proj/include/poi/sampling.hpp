#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "poi/attributes.hpp"
#include "poi/corpus.hpp"
#include "poi/geo.hpp"

namespace poi {

enum class Strategy : std::uint8_t { SeqTime = 1, Geo = 2, Func = 4 };

std::string_view to_string(Strategy s);
/// "seqtime", "geo" or "func".
Strategy parse_strategy(std::string_view s);

struct SamplerConfig {
  int lambda = 2;
  double side_km = 0.5;
  int m = 64;
  std::vector<Strategy> strategies{Strategy::SeqTime, Strategy::Geo, Strategy::Func};
  std::uint64_t seed = 0;

  bool enabled(Strategy s) const;
  void validate() const;  // throws UserError
};

/// POIs of records r' != r_j within `lambda` positions of j that share r_j's
/// local calendar date. Sorted, duplicates removed.
std::vector<PoiId> sequence_time_positives(std::size_t j, const CheckinSequence& seq, int lambda);

/// Same-category POIs (other than `poi`) inside the square around it.
std::vector<PoiId> geography_positives(const Poi& poi, const GridIndex& index);
std::vector<PoiId> geography_positives(const Poi& poi, const Dataset& ds, double side_km);

/// POIs (other than `poi`) sharing its category and exact visit pattern.
/// Throws UserError if a POI of `ds` has no attributes.
class FunctionalIndex {
 public:
  FunctionalIndex(const Dataset& ds, std::span<const PoiAttributes> attrs);
  std::vector<PoiId> positives(const Poi& poi) const;

 private:
  std::map<PoiId, VisitPattern> patterns_;
  std::map<std::tuple<std::string, int, int>, std::vector<PoiId>> groups_;
};

/// Per-anchor positive sets, one map per strategy. Anchors never appear in
/// their own set. SeqTime uses `train` sequences; Geo and Func use `ds` POIs.
struct PositiveSets {
  std::map<PoiId, std::set<PoiId>> seqtime, geo, func;

  /// Union over the strategies enabled in `cfg`.
  std::map<PoiId, std::set<PoiId>> merged(const SamplerConfig& cfg) const;
};

PositiveSets compute_positive_sets(const Dataset& ds, const Dataset& train, std::span<const PoiAttributes> attrs,
                                   const SamplerConfig& cfg);

struct TrainingBatch {
  PoiId anchor = 0;
  PoiId positive = 0;
  std::vector<PoiId> negatives;  // m - 2 ids
  std::uint8_t sources = 0;      // bitwise OR of the strategies that proposed the pair

  /// anchor, positive, negatives...
  std::vector<PoiId> rows() const;
};

struct BatchPlan {
  std::vector<TrainingBatch> batches;
  std::size_t anchors_without_positives = 0;
  std::size_t batches_with_replacement = 0;  // degenerate tiny-corpus draws
  std::size_t pairs_without_negatives = 0;   // dropped: nothing left to contrast
};

/// One batch per (anchor, positive) pair in ascending id order; negatives
/// uniform without replacement from the POIs of `ds` outside the anchor's
/// positive set. `allowed` restricts anchors, positives and negatives to a
/// subset of POIs (e.g. those with features) when non-empty.
BatchPlan build_batches(const Dataset& ds, const Dataset& train, std::span<const PoiAttributes> attrs,
                        const SamplerConfig& cfg, const std::set<PoiId>& allowed = {});

std::string batches_to_jsonl(std::span<const TrainingBatch> batches);

}  // namespace poi
