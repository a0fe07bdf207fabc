#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>

#include "poi/clustering.hpp"
#include "poi/downstream.hpp"
#include "poi/synthetic.hpp"
#include "poi/util.hpp"
#include "support.hpp"

using namespace poi;

namespace {

Dataset cyclic_dataset(int pois, int users, int len, std::int64_t t0 = 1'700'000'000) {
  Dataset ds;
  for (int p = 0; p < pois; ++p) ds.pois[p] = Poi{p, "p" + std::to_string(p), "c" + std::to_string(p % 2), -74.0, 40.7};
  for (int u = 0; u < users; ++u) {
    CheckinSequence s;
    s.user = "u" + std::to_string(u);
    for (int k = 0; k < len; ++k) s.records.push_back({s.user, (u + k) % pois, t0 + k * 3600, 0});
    ds.sequences.push_back(std::move(s));
  }
  ds.rebuild_vocab();
  return ds;
}

EmbeddingSet one_hot(const std::vector<PoiId>& ids, int dim, const std::function<int(PoiId)>& slot) {
  EmbeddingSet e;
  e.poi_ids = ids;
  e.matrix = MatrixF::Zero(static_cast<Eigen::Index>(ids.size()), dim);
  for (std::size_t i = 0; i < ids.size(); ++i) e.matrix(static_cast<Eigen::Index>(i), slot(ids[i])) = 1.f;
  e.provenance = "fixture";
  return e;
}

TaskConfig small_task() {
  TaskConfig c;
  c.lstm_hidden = 24;
  c.lstm_layers = 1;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

// Direct entropy sums over the contingency table.
double nmi_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
    pab[{a[i], b[i]}] += 1 / n;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto [_, p] : pa) ha -= p * std::log(p);
  for (auto [_, p] : pb) hb -= p * std::log(p);
  for (auto [k, p] : pab) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
  return 2 * mi / (ha + hb);
}

}  // namespace

TEST(Slicing, CutsIntoMaxSlices) {
  CheckinSequence s{"u", {}};
  for (int i = 0; i < 300; ++i) s.records.push_back({"u", i, i, 0});
  auto out = slice_sequences(std::span<const CheckinSequence>(&s, 1), 128);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].records.size(), 128u);
  EXPECT_EQ(out[1].records.size(), 128u);
  EXPECT_EQ(out[2].records.size(), 44u);
  EXPECT_EQ(out[2].records.front().poi_id, 256);

  s.records.resize(129);  // trailing singleton is dropped
  EXPECT_EQ(slice_sequences(std::span<const CheckinSequence>(&s, 1), 128).size(), 1u);
}

TEST(Slicing, ConservesRecordsOnRandomCorpus) {
  auto ds = test::random_dataset({.pois = 40, .users = 30, .min_len = 2, .max_len = 400, .seed = 11});
  std::size_t in = 0, expect = 0;
  for (const auto& s : ds.sequences) {
    in += s.records.size();
    expect += s.records.size() - (s.records.size() % 7 == 1 ? 1 : 0);
  }
  auto out = slice_sequences(ds.sequences, 7);
  std::size_t got = 0;
  for (const auto& s : out) {
    EXPECT_GE(s.records.size(), 2u);
    EXPECT_LE(s.records.size(), 7u);
    got += s.records.size();
  }
  EXPECT_EQ(got, expect);
  EXPECT_LE(in - got, ds.sequences.size());
}

TEST(HitAtK, Basics) {
  const std::vector<PoiId> ranked{5, 3, 9, 1};
  EXPECT_EQ(hit_at_k(ranked, 5, 1), 1);
  EXPECT_EQ(hit_at_k(ranked, 3, 1), 0);
  EXPECT_EQ(hit_at_k(ranked, 1, 4), 1);
  EXPECT_EQ(hit_at_k(ranked, 1, 10), 1);
  EXPECT_EQ(hit_at_k(ranked, 7, 10), 0);
  EXPECT_THROW(hit_at_k(ranked, 5, 0), std::invalid_argument);
  const std::vector<PoiId> six{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(hit_at_k(six, 6, 5), 0);
}

TEST(HitAtK, MonotoneOverRandomRankings) {
  std::mt19937_64 rng(12);
  std::vector<PoiId> ranked(20);
  std::iota(ranked.begin(), ranked.end(), 0);
  int h1 = 0, h5 = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const PoiId truth = std::uniform_int_distribution<PoiId>(0, 19)(rng);
    const int a = hit_at_k(ranked, truth, 1), b = hit_at_k(ranked, truth, 5);
    EXPECT_LE(a, b);
    h1 += a;
    h5 += b;
  }
  EXPECT_LE(h1, h5);
}

TEST(Recommendation, MemorizesDeterministicCycle) {
  auto ds = cyclic_dataset(10, 20, 30);
  auto splits = split_within_sequences(ds);
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto emb = one_hot(ids, 10, [](PoiId p) { return static_cast<int>(p); });
  auto cfg = small_task();
  cfg.epochs = 60;
  cfg.lr_recommendation = 0.02;
  auto rep = eval_recommendation(emb, splits, cfg);
  EXPECT_EQ(rep.task, "poi_recommendation");
  EXPECT_GE(rep.metrics.at("hit@1"), 0.95);
  EXPECT_LE(rep.metrics.at("hit@1"), rep.metrics.at("hit@5"));
  EXPECT_EQ(rep.metrics.at("test_positions"), 20 * 5);
}

TEST(Recommendation, StructuredBeatsRandomAndInputsStayFrozen) {
  auto ds = cyclic_dataset(10, 20, 30);
  auto splits = split_within_sequences(ds);
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto structured = one_hot(ids, 10, [](PoiId p) { return static_cast<int>(p); });
  std::mt19937_64 rng(13);
  // Two random dimensions blur the ten POIs together.
  EmbeddingSet random{ids, test::random_matrix<float>(10, 2, rng, 0.05), EmbeddingRole::BasePoi, "rand"};
  const MatrixF before = random.matrix;
  auto cfg = small_task();
  cfg.epochs = 30;
  cfg.lr_recommendation = 0.02;
  const auto s = eval_recommendation(structured, splits, cfg);
  const auto r = eval_recommendation(random, splits, cfg);
  EXPECT_GE(s.metrics.at("hit@1"), r.metrics.at("hit@1"));
  EXPECT_LE(r.metrics.at("hit@1"), r.metrics.at("hit@5"));
  for (const auto& [k, v] : r.metrics)
    if (k.rfind("hit@", 0) == 0) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  ASSERT_EQ(random.matrix.size(), before.size());
  EXPECT_EQ(std::memcmp(random.matrix.data(), before.data(), sizeof(float) * static_cast<std::size_t>(before.size())), 0);
}

TEST(Recommendation, MissingEmbeddingIsUserError) {
  auto ds = cyclic_dataset(10, 12, 20);
  auto splits = split_within_sequences(ds);
  auto emb = one_hot({0, 1, 2}, 3, [](PoiId p) { return static_cast<int>(p); });
  EXPECT_THROW(eval_recommendation(emb, splits, small_task()), UserError);
}

TEST(WithinSequenceSplit, ChronologicalCut) {
  auto ds = cyclic_dataset(10, 3, 20);
  auto s = split_within_sequences(ds);
  ASSERT_EQ(s.train.sequences.size(), 3u);
  EXPECT_EQ(s.train.sequences[0].records.size(), 14u);
  EXPECT_EQ(s.val.sequences[0].records.size(), 2u);
  EXPECT_EQ(s.test.sequences[0].records.size(), 4u);
  EXPECT_LT(s.train.sequences[0].records.back().timestamp, s.val.sequences[0].records.front().timestamp);
  EXPECT_LT(s.val.sequences[0].records.back().timestamp, s.test.sequences[0].records.front().timestamp);
}

TEST(Classification, SingleUserIsTrivial) {
  auto ds = cyclic_dataset(10, 1, 30);
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto emb = one_hot(ids, 10, [](PoiId p) { return static_cast<int>(p); });
  auto cfg = small_task();
  cfg.epochs = 2;
  auto rep = eval_classification(emb, split_within_sequences(ds), cfg);
  EXPECT_DOUBLE_EQ(rep.metrics.at("accuracy"), 1.0);
  EXPECT_DOUBLE_EQ(rep.metrics.at("macro_f1"), 1.0);
}

TEST(Classification, DisjointUsersSeparate) {
  Dataset ds;
  for (int p = 0; p < 10; ++p) ds.pois[p] = Poi{p, "p", "c", -74.0, 40.7};
  std::mt19937_64 rng(4);
  for (int u = 0; u < 2; ++u) {
    CheckinSequence s{"user" + std::to_string(u), {}};
    std::uniform_int_distribution<int> pick(0, 4);
    for (int k = 0; k < 200; ++k) s.records.push_back({s.user, u * 5 + pick(rng), 1'700'000'000 + k * 600, 0});
    ds.sequences.push_back(std::move(s));
  }
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto emb = one_hot(ids, 10, [](PoiId p) { return static_cast<int>(p); });
  auto cfg = small_task();
  cfg.max_slice = 10;
  cfg.epochs = 30;
  cfg.lr_other = 0.01;
  auto rep = eval_classification(emb, split_within_sequences(ds), cfg);
  EXPECT_EQ(rep.metrics.at("test_slices"), 8);
  EXPECT_GE(rep.metrics.at("accuracy"), 0.99);
  EXPECT_GE(rep.metrics.at("macro_f1"), 0.0);
  EXPECT_LE(rep.metrics.at("macro_f1"), 1.0);
}

TEST(Classification, UnknownTestUsersAreExcluded) {
  auto ds = cyclic_dataset(10, 3, 20);
  auto splits = split_within_sequences(ds);
  splits.train.sequences.pop_back();  // u2 only in test
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto emb = one_hot(ids, 10, [](PoiId p) { return static_cast<int>(p); });
  auto cfg = small_task();
  cfg.epochs = 1;
  auto rep = eval_classification(emb, splits, cfg);
  EXPECT_EQ(rep.metrics.at("excluded_slices"), 1);
  EXPECT_EQ(rep.metrics.at("test_slices"), 2);
}

TEST(Flow, NonzeroRuns) {
  const std::vector<double> a{0, 1, 2, 3, 1, 2, 1, 0};
  auto r = nonzero_runs(a, 6);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], std::make_pair(std::size_t{1}, std::size_t{6}));
  EXPECT_TRUE(nonzero_runs(a, 7).empty());
  const std::vector<double> b{1, 1, 0, 1, 1, 1, 1, 1, 1, 0, 4};
  EXPECT_EQ(nonzero_runs(b, 1).size(), 3u);
  EXPECT_EQ(nonzero_runs(b, 6).at(0).first, 3u);
}

TEST(Flow, BuildSeriesFromCheckins) {
  Dataset ds;
  ds.pois[1] = Poi{1, "a", "c", -74.0, 40.7};
  ds.pois[2] = Poi{2, "b", "c", -74.0, 40.7};
  // Local midnight of a day at UTC-5; counts per hour 1,2,3,1,2,1 then a lone visit.
  const std::int64_t t0 = parse_iso8601("2012-04-03T05:00:00Z");
  const std::vector<int> per_hour{1, 2, 3, 1, 2, 1, 0, 0, 5};
  CheckinSequence s{"u", {}};
  for (std::size_t h = 0; h < per_hour.size(); ++h)
    for (int k = 0; k < per_hour[h]; ++k) s.records.push_back({"u", 1, t0 + static_cast<std::int64_t>(h) * 3600 + k * 60, -300});
  for (int k = 0; k < 8; ++k) s.records.push_back({"u", 2, t0 + 86400 + k * 3600, -300});  // constant run
  ds.sequences.push_back(s);
  TaskConfig cfg;
  auto fb = build_flow_series(ds, cfg);
  ASSERT_EQ(fb.series.size(), 1u);
  EXPECT_EQ(fb.dropped_constant, 1u);
  const auto& fs = fb.series[0];
  EXPECT_EQ(fs.poi_id, 1);
  EXPECT_EQ(fs.start_hour_of_day, 0);
  EXPECT_EQ(fs.counts, (std::vector<double>{1, 2, 3, 1, 2, 1}));
  const double mean = 9.0 / 5.0;
  double var = 0;
  for (double c : {1.0, 2.0, 3.0, 1.0, 2.0}) var += (c - mean) * (c - mean);
  const double sd = std::sqrt(var / 5);
  EXPECT_NEAR(fs.mean, mean, 1e-12);
  EXPECT_NEAR(fs.stddev, sd, 1e-12);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(fs.values[k], (fs.counts[k] - mean) / sd, 1e-12);
}

// Independent scanner: walk every hour between a POI's first and last
// visit, closing a run at each empty hour.
std::map<std::pair<PoiId, std::int64_t>, std::vector<double>> scan_runs(const Dataset& ds, std::size_t min_len) {
  std::map<PoiId, std::map<std::int64_t, double>> hours;
  for (const auto& s : ds.sequences)
    for (const auto& r : s.records) {
      const std::int64_t local = r.timestamp + std::int64_t{r.tz_offset_minutes} * 60;
      hours[r.poi_id][(local - ((local % 3600) + 3600) % 3600) / 3600] += 1;
    }
  std::map<std::pair<PoiId, std::int64_t>, std::vector<double>> out;
  for (const auto& [poi, h] : hours) {
    std::vector<double> run;
    std::int64_t run_start = 0;
    for (std::int64_t t = h.begin()->first; t <= h.rbegin()->first + 1; ++t) {
      auto it = h.find(t);
      if (it != h.end()) {
        if (run.empty()) run_start = t;
        run.push_back(it->second);
      } else {
        if (run.size() >= min_len) out[{poi, run_start}] = run;
        run.clear();
      }
    }
  }
  return out;
}

TEST(Flow, PoissonCorpusMatchesScanner) {
  Dataset ds;
  std::mt19937_64 rng(14);
  CheckinSequence s{"u", {}};
  const std::int64_t t0 = 1'333'324'800;
  for (int p = 0; p < 6; ++p) {
    ds.pois[p] = Poi{p, "p", "c", -74.0, 40.7};
    std::poisson_distribution<int> rate(0.4 + 0.5 * p);
    for (int h = 0; h < 300; ++h)
      for (int k = rate(rng); k > 0; --k) s.records.push_back({"u", p, t0 + h * 3600 + k * 7, -300});
  }
  ds.pois[6] = Poi{6, "never", "c", -74.0, 40.7};  // all-zero POI
  std::sort(s.records.begin(), s.records.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  ds.sequences.push_back(s);
  TaskConfig cfg;
  auto fb = build_flow_series(ds, cfg);
  auto oracle = scan_runs(ds, 6);
  ASSERT_GT(oracle.size(), 10u);
  EXPECT_EQ(fb.series.size() + fb.dropped_constant, oracle.size());
  for (const auto& fs : fb.series) {
    EXPECT_NE(fs.poi_id, 6);
    auto it = oracle.find({fs.poi_id, fs.start_window});
    ASSERT_NE(it, oracle.end());
    EXPECT_EQ(fs.counts, it->second);
    EXPECT_EQ(fs.start_hour_of_day, static_cast<int>(((fs.start_window % 24) + 24) % 24));
  }
}

TEST(Flow, LearnsAlternatingPattern) {
  std::vector<FlowSeries> series;
  std::vector<PoiId> ids;
  for (int p = 0; p < 12; ++p) {
    FlowSeries fs;
    fs.poi_id = p;
    fs.start_hour_of_day = p % 24;
    for (int k = 0; k < 12; ++k) fs.counts.push_back(((k + p) % 2) ? 3.0 : 1.0);
    double mean = 0;
    for (int k = 0; k < 11; ++k) mean += fs.counts[static_cast<std::size_t>(k)] / 11;
    double var = 0;
    for (int k = 0; k < 11; ++k) var += (fs.counts[static_cast<std::size_t>(k)] - mean) * (fs.counts[static_cast<std::size_t>(k)] - mean) / 11;
    fs.mean = mean;
    fs.stddev = std::sqrt(var);
    for (double c : fs.counts) fs.values.push_back((c - mean) / fs.stddev);
    series.push_back(fs);
    ids.push_back(p);
  }
  auto emb = one_hot(ids, 2, [](PoiId p) { return static_cast<int>(p % 2); });
  auto cfg = small_task();
  cfg.lstm_hidden = 16;
  cfg.epochs = 150;
  cfg.lr_other = 0.01;
  auto rep = eval_flow(emb, series, cfg);
  EXPECT_EQ(rep.metrics.at("test_series"), 12);
  EXPECT_LT(rep.metrics.at("mae"), 0.15);
  EXPECT_GE(rep.metrics.at("rmse"), rep.metrics.at("mae"));
  EXPECT_LT(rep.metrics.at("mae"), rep.metrics.at("naive_mae"));

  // Naive floor: each held-out value against its series' train-portion mean.
  double naive = 0;
  for (const auto& fs : series) {
    double m = 0;
    for (std::size_t k = 0; k + 1 < fs.values.size(); ++k) m += fs.values[k];
    m /= static_cast<double>(fs.values.size() - 1);
    naive += std::abs(m - static_cast<double>(static_cast<float>(fs.values.back())));
  }
  EXPECT_NEAR(rep.metrics.at("naive_mae"), naive / static_cast<double>(series.size()), 1e-6);
}

TEST(Flow, TooFewSeriesIsUserError) {
  std::vector<FlowSeries> series(3);
  for (auto& s : series) s.values = {0, 1, 0, 1, 0, 1};
  EmbeddingSet emb;
  emb.poi_ids = {0};
  emb.matrix = MatrixF::Ones(1, 2);
  EXPECT_THROW(eval_flow(emb, series, small_task()), UserError);
}

TEST(Clustering, NmiClosedForms) {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> perm{2, 2, 0, 0, 1, 1};
  EXPECT_NEAR(normalized_mutual_information(a, a), 1.0, 1e-12);
  EXPECT_NEAR(normalized_mutual_information(a, perm), 1.0, 1e-12);
  const std::vector<int> x{0, 0, 1, 1}, y{0, 1, 0, 1};  // independent
  EXPECT_NEAR(normalized_mutual_information(x, y), 0.0, 1e-12);
  const std::vector<int> c(4, 0);
  EXPECT_DOUBLE_EQ(normalized_mutual_information(c, c), 1.0);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> la(0, 3), lb(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> u(50), v(50);
    for (int i = 0; i < 50; ++i) {
      u[static_cast<std::size_t>(i)] = la(rng);
      v[static_cast<std::size_t>(i)] = trial % 2 ? lb(rng) : u[static_cast<std::size_t>(i)] + (i % 3 == 0);
    }
    EXPECT_NEAR(normalized_mutual_information(u, v), nmi_oracle(u, v), 1e-12);
  }
}

TEST(Clustering, KMeansSeparatesBlobs) {
  std::mt19937_64 rng(6);
  MatrixD x(90, 2);
  std::vector<int> truth;
  std::normal_distribution<double> g(0, 0.1);
  for (int i = 0; i < 90; ++i) {
    const int c = i % 3;
    x(i, 0) = 5.0 * c + g(rng);
    x(i, 1) = (c == 1 ? 5.0 : 0.0) + g(rng);
    truth.push_back(c);
  }
  auto a = kmeans(x, 3, 5, 1);
  auto b = kmeans(x, 3, 5, 1);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NEAR(normalized_mutual_information(a.labels, truth), 1.0, 1e-12);
  EXPECT_EQ(a.centroids.rows(), 3);
  EXPECT_THROW(kmeans(x.topRows(2), 3, 1, 1), UserError);
}

TEST(Clustering, OneHotCategoriesGivePerfectNmi) {
  auto ds = test::random_dataset({.pois = 120, .categories = 5});
  std::map<std::string, int> slot;
  for (const auto& [_, p] : ds.pois) slot.emplace(p.category, static_cast<int>(slot.size()));
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  auto emb = one_hot(ids, 5, [&](PoiId id) { return slot.at(ds.pois.at(id).category); });
  auto rep = eval_cluster(emb, ds, small_task());
  EXPECT_EQ(rep.task, "clustering");
  EXPECT_DOUBLE_EQ(rep.metrics.at("nmi"), 1.0);
  EXPECT_EQ(rep.to_json()["embeddings"], "fixture");
}

TEST(Clustering, RandomEmbeddingsGiveLowNmi) {
  SyntheticConfig sc;
  sc.num_pois = 500;
  sc.num_categories = 10;
  sc.num_users = 20;
  sc.checkins_per_user = 150;
  auto ds = make_synthetic_dataset(sc);
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  std::mt19937_64 rng(9);
  EmbeddingSet emb{ids, test::random_matrix<float>(static_cast<Eigen::Index>(ids.size()), 16, rng), EmbeddingRole::BasePoi, "rand"};
  const double nmi = eval_cluster(emb, ds, small_task()).metrics.at("nmi");
  EXPECT_GE(nmi, 0.0);
  EXPECT_LT(nmi, 0.1);
}

TEST(PairwiseDistance, ThreeFourFive) {
  EmbeddingSet emb;
  emb.poi_ids = {10, 20};
  emb.matrix = MatrixF(2, 2);
  emb.matrix << 0, 0, 3, 4;
  EXPECT_DOUBLE_EQ(pairwise_distance(emb, 10, 20), 5.0);
  EXPECT_DOUBLE_EQ(pairwise_distance(emb, 20, 20), 0.0);
  EXPECT_THROW(pairwise_distance(emb, 10, 30), UserError);
}

TEST(PairwiseDistance, RandomRows) {
  std::mt19937_64 rng(15);
  EmbeddingSet emb{{1, 2, 3, 4}, test::random_matrix<float>(4, 9, rng), EmbeddingRole::BasePoi, "r"};
  for (PoiId a = 1; a <= 4; ++a)
    for (PoiId b = 1; b <= 4; ++b) {
      double ss = 0;
      for (int k = 0; k < 9; ++k) {
        const double d = static_cast<double>(emb.matrix(a - 1, k)) - static_cast<double>(emb.matrix(b - 1, k));
        ss += d * d;
      }
      EXPECT_NEAR(pairwise_distance(emb, a, b), std::sqrt(ss), 1e-6);
    }
}

TEST(TaskConfig, Validation) {
  TaskConfig c;
  EXPECT_EQ(c.lstm_hidden, 512);
  EXPECT_EQ(c.epochs, 100);
  EXPECT_NO_THROW(c.validate());
  c.min_flow_len = 3;
  EXPECT_THROW(c.validate(), UserError);
}
