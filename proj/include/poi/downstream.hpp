#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "poi/corpus.hpp"
#include "poi/embedding_io.hpp"

namespace poi {

struct TaskConfig {
  int lstm_hidden = 512;
  int lstm_layers = 2;
  int epochs = 100;
  double lr_recommendation = 0.001;
  double lr_other = 0.0001;
  int max_slice = 128;
  int flow_window_hours = 1;
  int min_flow_len = 6;
  int batch_size = 32;
  int flow_input_len = 3;
  int flow_horizon = 1;
  int kmeans_restarts = 10;
  std::uint64_t seed = 0;

  void validate() const;  // throws UserError
};

struct MetricReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::string provenance;

  nlohmann::json to_json() const;
};

/// Consecutive slices of at most `max_slice` records; slices shorter than 2
/// are dropped.
std::vector<CheckinSequence> slice_sequences(std::span<const CheckinSequence> sequences, int max_slice);

/// 1 iff `truth` is among the first k entries of `ranked`.
int hit_at_k(std::span<const PoiId> ranked, PoiId truth, int k);

/// Next-POI prediction: an LSTM over frozen embeddings of the train-split
/// slices, dense head over every embedded POI; Hit@1 and Hit@5 over every
/// next-step position of the test slices.
MetricReport eval_recommendation(const EmbeddingSet& emb, const DatasetSplits& splits, const TaskConfig& cfg);

/// Per-user chronological cut by (test, val, train) ratios: the earliest
/// records go to train, then val, then test. Every user with enough records
/// appears in train, which the user-classification task needs.
DatasetSplits split_within_sequences(const Dataset& ds, std::array<int, 3> ratios = {2, 1, 7});

/// Which user produced a slice: same recurrent encoder, head over the users
/// of the train split. Accuracy and macro-F1 on test slices whose user is
/// known; the rest are counted as excluded.
MetricReport eval_classification(const EmbeddingSet& emb, const DatasetSplits& splits, const TaskConfig& cfg);

struct FlowSeries {
  PoiId poi_id = 0;
  std::int64_t start_window = 0;  // local time / window length
  int start_hour_of_day = 0;
  std::vector<double> counts;     // raw
  std::vector<double> values;     // z-scored with the train-portion statistics
  double mean = 0.0;
  double stddev = 1.0;
};

struct FlowBuild {
  std::vector<FlowSeries> series;
  std::size_t dropped_constant = 0;
};

/// Maximal runs [start, start + len) of non-zero entries with len >= min_len.
std::vector<std::pair<std::size_t, std::size_t>> nonzero_runs(std::span<const double> counts, std::size_t min_len);

/// Per-POI windowed check-in counts cut into maximal non-zero runs of at
/// least `min_flow_len` windows. The train portion is everything but the
/// last `flow_horizon` values.
FlowBuild build_flow_series(const Dataset& ds, const TaskConfig& cfg);

/// Seq2seq forecaster: encoder over `flow_input_len` steps, decoder emits
/// `flow_horizon` steps; every step sees value, POI embedding and the
/// series' start-hour one-hot. Trains on windows inside each train portion
/// and reports MAE / RMSE on the held-out tail in normalized units, plus
/// the MAE of predicting the train mean (naive_mae).
MetricReport eval_flow(const EmbeddingSet& emb, std::span<const FlowSeries> series, const TaskConfig& cfg);

/// k-means with k = number of categories; NMI against category labels.
MetricReport eval_cluster(const EmbeddingSet& emb, const Dataset& ds, const TaskConfig& cfg);

/// Euclidean distance between two rows; UserError naming a missing id.
double pairwise_distance(const EmbeddingSet& emb, PoiId a, PoiId b);

}  // namespace poi
