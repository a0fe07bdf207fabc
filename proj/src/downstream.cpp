#include "poi/downstream.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "poi/clustering.hpp"
#include "poi/recurrent.hpp"
#include "poi/training.hpp"
#include "poi/util.hpp"

namespace poi {

void TaskConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v < 1) throw UserError(std::string("task.") + key + " must be positive");
  };
  positive(lstm_hidden, "lstm_hidden");
  positive(lstm_layers, "lstm_layers");
  positive(epochs, "epochs");
  positive(flow_window_hours, "flow_window_hours");
  positive(min_flow_len, "min_flow_len");
  positive(batch_size, "batch_size");
  positive(flow_input_len, "flow_input_len");
  positive(flow_horizon, "flow_horizon");
  positive(kmeans_restarts, "kmeans_restarts");
  if (max_slice < 2) throw UserError("task.max_slice must be at least 2");
  if (!(lr_recommendation > 0) || !(lr_other > 0)) throw UserError("task learning rates must be positive");
  if (min_flow_len < flow_input_len + flow_horizon) {
    throw UserError("task.min_flow_len must be at least flow_input_len + flow_horizon");
  }
}

nlohmann::json MetricReport::to_json() const {
  return {{"task", task}, {"metrics", metrics}, {"embeddings", provenance}};
}

std::vector<CheckinSequence> slice_sequences(std::span<const CheckinSequence> sequences, int max_slice) {
  if (max_slice < 2) throw std::invalid_argument("max_slice must be at least 2");
  std::vector<CheckinSequence> out;
  const auto step = static_cast<std::size_t>(max_slice);
  for (const auto& s : sequences) {
    for (std::size_t start = 0; start < s.records.size(); start += step) {
      const std::size_t end = std::min(s.records.size(), start + step);
      if (end - start < 2) continue;
      CheckinSequence slice;
      slice.user = s.user;
      slice.records.assign(s.records.begin() + static_cast<std::ptrdiff_t>(start), s.records.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(std::move(slice));
    }
  }
  return out;
}

int hit_at_k(std::span<const PoiId> ranked, PoiId truth, int k) {
  if (k < 1) throw std::invalid_argument("hit_at_k: k must be positive");
  const auto n = std::min(ranked.size(), static_cast<std::size_t>(k));
  return std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), truth) != ranked.begin() + static_cast<std::ptrdiff_t>(n)
             ? 1
             : 0;
}

namespace {

using Var = ad::Var<float>;
using Tape = ad::Tape<float>;

class Lookup {
 public:
  explicit Lookup(const EmbeddingSet& e) : emb_(e) {
    for (std::size_t i = 0; i < e.poi_ids.size(); ++i) row_[e.poi_ids[i]] = static_cast<Eigen::Index>(i);
  }
  Eigen::Index row(PoiId id) const {
    auto it = row_.find(id);
    if (it == row_.end()) throw UserError("no embedding for POI " + std::to_string(id) + " in " + emb_.provenance);
    return it->second;
  }
  bool has(PoiId id) const { return row_.count(id) > 0; }
  const MatrixF& matrix() const { return emb_.matrix; }

 private:
  const EmbeddingSet& emb_;
  std::map<PoiId, Eigen::Index> row_;
};

// Step t input: embedding of record t for every slice still running, zero otherwise.
std::vector<Var> embed_steps(Tape& tape, const Lookup& lk, const std::vector<const CheckinSequence*>& batch, std::size_t steps) {
  std::vector<Var> xs;
  const auto b = static_cast<Eigen::Index>(batch.size());
  for (std::size_t t = 0; t < steps; ++t) {
    MatrixF x = MatrixF::Zero(b, lk.matrix().cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& recs = batch[static_cast<std::size_t>(i)]->records;
      if (t < recs.size()) x.row(i) = lk.matrix().row(lk.row(recs[t].poi_id));
    }
    xs.push_back(tape.constant(std::move(x)));
  }
  return xs;
}

TrainConfig adam(double lr) {
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.weight_decay = 0.0;
  return tc;
}

template <typename F>
void for_batches(std::vector<std::size_t>& order, std::size_t batch_size, F&& f) {
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    f(std::span<const std::size_t>(order.data() + s, e - s));
  }
}

struct Predictions {
  Var stacked;                        // (steps * B) x hidden, row t*B + i
  std::vector<Eigen::Index> rows;     // selected rows of `stacked`
  std::vector<Eigen::Index> labels;
};

}  // namespace

MetricReport eval_recommendation(const EmbeddingSet& emb, const DatasetSplits& splits, const TaskConfig& cfg) {
  cfg.validate();
  const Lookup lk(emb);
  auto train = slice_sequences(splits.train.sequences, cfg.max_slice);
  auto test = slice_sequences(splits.test.sequences, cfg.max_slice);
  if (train.empty()) throw UserError("recommendation: no training slices");
  if (test.empty()) throw UserError("recommendation: no test slices");
  for (const auto* part : {&train, &test}) {
    for (const auto& s : *part) {
      for (const auto& r : s.records) lk.row(r.poi_id);
    }
  }

  std::mt19937_64 rng(cfg.seed);
  auto net = Lstm<float>::init(emb.dim(), cfg.lstm_hidden, cfg.lstm_layers, rng);
  auto head = Dense<float>::init(cfg.lstm_hidden, static_cast<int>(emb.size()), rng);
  auto params = net.parameters();
  for (auto* p : head.parameters()) params.push_back(p);
  AdamW<float> opt(params, adam(cfg.lr_recommendation));

  // Outputs at steps 0..T-2 predict records 1..T-1.
  auto run = [&](Tape& tape, const std::vector<const CheckinSequence*>& batch) {
    std::size_t steps = 0;
    for (const auto* s : batch) steps = std::max(steps, s->records.size() - 1);
    const auto b = static_cast<Eigen::Index>(batch.size());
    auto state = lstm_zero_state(tape, net, b);
    auto outs = lstm_forward(net, embed_steps(tape, lk, batch, steps), state);
    Predictions p{ad::concat_rows<float>(outs), {}, {}};
    for (std::size_t t = 0; t < steps; ++t) {
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto& recs = batch[static_cast<std::size_t>(i)]->records;
        if (t + 1 < recs.size()) {
          p.rows.push_back(static_cast<Eigen::Index>(t) * b + i);
          p.labels.push_back(lk.row(recs[t + 1].poi_id));
        }
      }
    }
    return p;
  };

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t n = 0;
    for_batches(order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
      std::vector<const CheckinSequence*> batch;
      for (auto i : idx) batch.push_back(&train[i]);
      for (auto* p : params) p->zero_grad();
      Tape tape;
      auto p = run(tape, batch);
      auto loss = ad::cross_entropy(head(ad::gather_rows<float>(p.stacked, p.rows)), std::span<const Eigen::Index>(p.labels));
      tape.backward(loss);
      opt.step();
      total += loss.value()(0, 0);
      ++n;
    });
    if (epoch == 1 || epoch == cfg.epochs || epoch % 10 == 0) spdlog::info("recommendation epoch {}: loss {:.5f}", epoch, total / n);
  }

  double hit1 = 0, hit5 = 0;
  std::size_t positions = 0;
  std::vector<std::size_t> test_order(test.size());
  std::iota(test_order.begin(), test_order.end(), 0);
  for_batches(test_order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
    std::vector<const CheckinSequence*> batch;
    for (auto i : idx) batch.push_back(&test[i]);
    Tape tape(false);
    auto p = run(tape, batch);
    const MatrixF logits = head(ad::gather_rows<float>(p.stacked, p.rows)).value();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const auto truth = p.labels[static_cast<std::size_t>(r)];
      const float lt = logits(r, truth);
      Eigen::Index rank = 0;
      for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        if (logits(r, j) > lt || (logits(r, j) == lt && j < truth)) ++rank;
      }
      hit1 += rank < 1;
      hit5 += rank < 5;
      ++positions;
    }
  });
  MetricReport rep{"poi_recommendation", {}, emb.provenance};
  rep.metrics["hit@1"] = hit1 / static_cast<double>(positions);
  rep.metrics["hit@5"] = hit5 / static_cast<double>(positions);
  rep.metrics["test_positions"] = static_cast<double>(positions);
  return rep;
}

DatasetSplits split_within_sequences(const Dataset& ds, std::array<int, 3> ratios) {
  DatasetSplits out;
  for (auto* part : {&out.test, &out.val, &out.train}) {
    part->pois = ds.pois;
    part->category_vocab = ds.category_vocab;
  }
  for (const auto& s : ds.sequences) {
    const auto sizes = largest_remainder(s.records.size(), ratios);
    auto begin = s.records.begin();
    auto take = [&](std::size_t n, Dataset& into) {
      if (n > 0) into.sequences.push_back({s.user, std::vector<CheckinRecord>(begin, begin + static_cast<std::ptrdiff_t>(n))});
      begin += static_cast<std::ptrdiff_t>(n);
    };
    take(sizes.train, out.train);
    take(sizes.val, out.val);
    take(sizes.test, out.test);
  }
  return out;
}

MetricReport eval_classification(const EmbeddingSet& emb, const DatasetSplits& splits, const TaskConfig& cfg) {
  cfg.validate();
  const Lookup lk(emb);
  auto train = slice_sequences(splits.train.sequences, cfg.max_slice);
  auto test_all = slice_sequences(splits.test.sequences, cfg.max_slice);
  if (train.empty()) throw UserError("classification: no training slices");

  std::map<std::string, Eigen::Index> label_of;
  for (const auto& s : train) label_of.emplace(s.user, 0);
  Eigen::Index next = 0;
  for (auto& [_, v] : label_of) v = next++;
  std::vector<CheckinSequence> test;
  std::size_t excluded = 0;
  for (auto& s : test_all) {
    if (label_of.count(s.user)) {
      test.push_back(std::move(s));
    } else {
      ++excluded;
    }
  }
  if (excluded) spdlog::warn("classification: {} test slices belong to users absent from the train split", excluded);
  if (test.empty()) throw UserError("classification: no test slice belongs to a user seen in training");

  std::mt19937_64 rng(cfg.seed);
  auto net = Lstm<float>::init(emb.dim(), cfg.lstm_hidden, cfg.lstm_layers, rng);
  auto head = Dense<float>::init(cfg.lstm_hidden, static_cast<int>(label_of.size()), rng);
  auto params = net.parameters();
  for (auto* p : head.parameters()) params.push_back(p);
  AdamW<float> opt(params, adam(cfg.lr_other));

  auto run = [&](Tape& tape, const std::vector<const CheckinSequence*>& batch) {
    std::size_t steps = 0;
    for (const auto* s : batch) steps = std::max(steps, s->records.size());
    const auto b = static_cast<Eigen::Index>(batch.size());
    auto state = lstm_zero_state(tape, net, b);
    auto outs = lstm_forward(net, embed_steps(tape, lk, batch, steps), state);
    Predictions p{ad::concat_rows<float>(outs), {}, {}};
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto* s = batch[static_cast<std::size_t>(i)];
      p.rows.push_back(static_cast<Eigen::Index>(s->records.size() - 1) * b + i);
      p.labels.push_back(label_of.at(s->user));
    }
    return head(ad::gather_rows<float>(p.stacked, p.rows));
  };
  auto labels_of = [&](const std::vector<const CheckinSequence*>& batch) {
    std::vector<Eigen::Index> l;
    for (const auto* s : batch) l.push_back(label_of.at(s->user));
    return l;
  };

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t n = 0;
    for_batches(order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
      std::vector<const CheckinSequence*> batch;
      for (auto i : idx) batch.push_back(&train[i]);
      for (auto* p : params) p->zero_grad();
      Tape tape;
      const auto labels = labels_of(batch);
      auto loss = ad::cross_entropy(run(tape, batch), std::span<const Eigen::Index>(labels));
      tape.backward(loss);
      opt.step();
      total += loss.value()(0, 0);
      ++n;
    });
    if (epoch == 1 || epoch == cfg.epochs || epoch % 10 == 0) spdlog::info("classification epoch {}: loss {:.5f}", epoch, total / n);
  }

  std::vector<Eigen::Index> truth, pred;
  std::vector<std::size_t> test_order(test.size());
  std::iota(test_order.begin(), test_order.end(), 0);
  for_batches(test_order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
    std::vector<const CheckinSequence*> batch;
    for (auto i : idx) batch.push_back(&test[i]);
    Tape tape(false);
    const MatrixF logits = run(tape, batch).value();
    const auto labels = labels_of(batch);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      pred.push_back(arg);
      truth.push_back(labels[static_cast<std::size_t>(r)]);
    }
  });

  std::size_t correct = 0;
  std::map<Eigen::Index, std::array<double, 3>> counts;  // tp, fp, fn
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      ++correct;
      counts[truth[i]][0] += 1;
    } else {
      counts[pred[i]][1] += 1;
      counts[truth[i]][2] += 1;
    }
  }
  double f1_sum = 0;
  for (const auto& [_, c] : counts) {
    const double denom = 2 * c[0] + c[1] + c[2];
    f1_sum += denom > 0 ? 2 * c[0] / denom : 0.0;
  }
  MetricReport rep{"checkin_classification", {}, emb.provenance};
  rep.metrics["accuracy"] = static_cast<double>(correct) / static_cast<double>(truth.size());
  rep.metrics["macro_f1"] = f1_sum / static_cast<double>(counts.size());
  rep.metrics["test_slices"] = static_cast<double>(truth.size());
  rep.metrics["excluded_slices"] = static_cast<double>(excluded);
  return rep;
}

std::vector<std::pair<std::size_t, std::size_t>> nonzero_runs(std::span<const double> counts, std::size_t min_len) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t i = 0;
  while (i < counts.size()) {
    if (counts[i] == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < counts.size() && counts[j] != 0) ++j;
    if (j - i >= min_len) runs.emplace_back(i, j - i);
    i = j;
  }
  return runs;
}

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

}  // namespace

FlowBuild build_flow_series(const Dataset& ds, const TaskConfig& cfg) {
  const std::int64_t window = std::int64_t{cfg.flow_window_hours} * 3600;
  std::map<PoiId, std::map<std::int64_t, double>> per_poi;
  for (const auto& s : ds.sequences) {
    for (const auto& r : s.records) per_poi[r.poi_id][floor_div(r.local_seconds(), window)] += 1;
  }
  FlowBuild out;
  for (const auto& [poi, buckets] : per_poi) {
    const std::int64_t first = buckets.begin()->first;
    std::vector<double> dense(static_cast<std::size_t>(buckets.rbegin()->first - first + 1), 0.0);
    for (const auto& [b, c] : buckets) dense[static_cast<std::size_t>(b - first)] = c;
    for (const auto& [start, len] : nonzero_runs(dense, static_cast<std::size_t>(cfg.min_flow_len))) {
      FlowSeries fs;
      fs.poi_id = poi;
      fs.start_window = first + static_cast<std::int64_t>(start);
      fs.start_hour_of_day = static_cast<int>(((floor_div(fs.start_window * window, 3600) % 24) + 24) % 24);
      fs.counts.assign(dense.begin() + static_cast<std::ptrdiff_t>(start), dense.begin() + static_cast<std::ptrdiff_t>(start + len));
      const std::size_t train_len = len - static_cast<std::size_t>(cfg.flow_horizon);
      double mean = 0;
      for (std::size_t k = 0; k < train_len; ++k) mean += fs.counts[k];
      mean /= static_cast<double>(train_len);
      double var = 0;
      for (std::size_t k = 0; k < train_len; ++k) var += (fs.counts[k] - mean) * (fs.counts[k] - mean);
      const double sd = std::sqrt(var / static_cast<double>(train_len));
      if (!(sd > 0)) {
        ++out.dropped_constant;
        continue;
      }
      fs.mean = mean;
      fs.stddev = sd;
      for (double c : fs.counts) fs.values.push_back((c - mean) / sd);
      out.series.push_back(std::move(fs));
    }
  }
  if (out.dropped_constant) spdlog::info("flow: dropped {} series with zero variance", out.dropped_constant);
  return out;
}

MetricReport eval_flow(const EmbeddingSet& emb, std::span<const FlowSeries> all_series, const TaskConfig& cfg) {
  cfg.validate();
  const Lookup lk(emb);
  const std::size_t L = static_cast<std::size_t>(cfg.flow_input_len);
  const std::size_t Hz = static_cast<std::size_t>(cfg.flow_horizon);

  std::vector<const FlowSeries*> series;
  std::size_t skipped = 0;
  for (const auto& s : all_series) {
    if (lk.has(s.poi_id) && s.values.size() >= L + Hz) {
      series.push_back(&s);
    } else {
      ++skipped;
    }
  }
  if (series.size() < 10) {
    throw UserError("flow prediction needs at least 10 usable series, found " + std::to_string(series.size()));
  }

  struct Window {
    const FlowSeries* s;
    std::size_t start;  // inputs [start, start+L), targets [start+L, start+L+Hz)
  };
  std::vector<Window> train, test;
  for (const auto* s : series) {
    const std::size_t train_len = s->values.size() - Hz;
    for (std::size_t i = 0; i + L + Hz <= train_len; ++i) train.push_back({s, i});
    test.push_back({s, s->values.size() - Hz - L});
  }
  if (train.empty()) throw UserError("flow prediction: series are too short to form a training window");

  const int d = emb.dim();
  const int in = 1 + d + 24;
  std::mt19937_64 rng(cfg.seed);
  auto encoder = Lstm<float>::init(in, cfg.lstm_hidden, cfg.lstm_layers, rng);
  auto decoder = Lstm<float>::init(in, cfg.lstm_hidden, cfg.lstm_layers, rng);
  auto head = Dense<float>::init(cfg.lstm_hidden, 1, rng);
  auto params = encoder.parameters();
  for (auto* p : decoder.parameters()) params.push_back(p);
  for (auto* p : head.parameters()) params.push_back(p);
  AdamW<float> opt(params, adam(cfg.lr_other));

  auto run = [&](Tape& tape, const std::vector<const Window*>& batch) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    MatrixF context = MatrixF::Zero(b, d + 24);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto* s = batch[static_cast<std::size_t>(i)]->s;
      context.row(i).head(d) = lk.matrix().row(lk.row(s->poi_id));
      context(i, d + s->start_hour_of_day) = 1.f;
    }
    auto ctx = tape.constant(std::move(context));
    std::vector<Var> xs;
    for (std::size_t t = 0; t < L; ++t) {
      MatrixF v(b, 1);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto* w = batch[static_cast<std::size_t>(i)];
        v(i, 0) = static_cast<float>(w->s->values[w->start + t]);
      }
      const std::vector<Var> parts{tape.constant(std::move(v)), ctx};
      xs.push_back(ad::concat_cols<float>(parts));
    }
    auto state = lstm_zero_state(tape, encoder, b);
    lstm_forward(encoder, xs, state);
    Var prev = ad::slice(xs.back(), 0, b, 0, 1);
    std::vector<Var> preds;
    for (std::size_t k = 0; k < Hz; ++k) {
      const std::vector<Var> parts{prev, ctx};
      auto out = lstm_forward(decoder, {ad::concat_cols<float>(parts)}, state);
      prev = head(out.back());
      preds.push_back(prev);
    }
    return ad::concat_cols<float>(preds);
  };
  auto targets = [&](const std::vector<const Window*>& batch) {
    MatrixF y(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(Hz));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t k = 0; k < Hz; ++k) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<float>(batch[i]->s->values[batch[i]->start + L + k]);
    }
    return y;
  };

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t n = 0;
    for_batches(order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
      std::vector<const Window*> batch;
      for (auto i : idx) batch.push_back(&train[i]);
      for (auto* p : params) p->zero_grad();
      Tape tape;
      auto loss = ad::mse(run(tape, batch), targets(batch));
      tape.backward(loss);
      opt.step();
      total += loss.value()(0, 0);
      ++n;
    });
    if (epoch == 1 || epoch == cfg.epochs || epoch % 10 == 0) spdlog::info("flow epoch {}: mse {:.5f}", epoch, total / n);
  }

  double abs_sum = 0, sq_sum = 0, naive_sum = 0;
  std::size_t points = 0;
  std::vector<std::size_t> test_order(test.size());
  std::iota(test_order.begin(), test_order.end(), 0);
  for_batches(test_order, static_cast<std::size_t>(cfg.batch_size), [&](std::span<const std::size_t> idx) {
    std::vector<const Window*> batch;
    for (auto i : idx) batch.push_back(&test[i]);
    Tape tape(false);
    const MatrixF pred = run(tape, batch).value();
    const MatrixF y = targets(batch);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const auto& vals = batch[static_cast<std::size_t>(i)]->s->values;
      const std::size_t train_len = vals.size() - Hz;
      const double train_mean = std::accumulate(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(train_len), 0.0) / static_cast<double>(train_len);
      for (Eigen::Index k = 0; k < y.cols(); ++k) {
        const double e = static_cast<double>(pred(i, k)) - static_cast<double>(y(i, k));
        abs_sum += std::abs(e);
        sq_sum += e * e;
        naive_sum += std::abs(train_mean - static_cast<double>(y(i, k)));
        ++points;
      }
    }
  });
  MetricReport rep{"visitor_flow", {}, emb.provenance};
  rep.metrics["mae"] = abs_sum / static_cast<double>(points);
  rep.metrics["rmse"] = std::sqrt(sq_sum / static_cast<double>(points));
  rep.metrics["naive_mae"] = naive_sum / static_cast<double>(points);
  rep.metrics["test_series"] = static_cast<double>(test.size());
  rep.metrics["skipped_series"] = static_cast<double>(skipped);
  return rep;
}

MetricReport eval_cluster(const EmbeddingSet& emb, const Dataset& ds, const TaskConfig& cfg) {
  const Lookup lk(emb);
  std::map<std::string, int> cat;
  for (const auto& [_, p] : ds.pois) cat.emplace(p.category, 0);
  if (cat.size() < 2) throw UserError("clustering needs at least two categories");
  int next = 0;
  for (auto& [_, v] : cat) v = next++;

  MatrixD x(static_cast<Eigen::Index>(ds.pois.size()), emb.dim());
  std::vector<int> labels;
  Eigen::Index r = 0;
  for (const auto& [id, p] : ds.pois) {
    x.row(r++) = lk.matrix().row(lk.row(id)).cast<double>();
    labels.push_back(cat.at(p.category));
  }
  const auto km = kmeans(x, static_cast<int>(cat.size()), cfg.kmeans_restarts, cfg.seed);
  MetricReport rep{"clustering", {}, emb.provenance};
  rep.metrics["nmi"] = normalized_mutual_information(km.labels, labels);
  rep.metrics["k"] = static_cast<double>(cat.size());
  rep.metrics["inertia"] = km.inertia;
  return rep;
}

double pairwise_distance(const EmbeddingSet& emb, PoiId a, PoiId b) {
  const Lookup lk(emb);
  return (lk.matrix().row(lk.row(a)).cast<double>() - lk.matrix().row(lk.row(b)).cast<double>()).norm();
}

}  // namespace poi
