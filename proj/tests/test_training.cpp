#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "pipeline_fixture.hpp"
#include "poi/sampling.hpp"
#include "poi/training.hpp"
#include "poi/util.hpp"
#include "reference_model.hpp"
#include "support.hpp"

using namespace poi;
using poi::test::TempDir;

namespace {

HyperParams small_hp(int D) {
  HyperParams hp;
  hp.d = 16;
  hp.d_prime = 8;
  hp.H = 2;
  hp.d_h = 8;
  hp.L1 = 1;
  hp.L2 = 1;
  hp.D = D;
  hp.ffn_mult = 2;
  return hp;
}

}  // namespace

TEST(InfoNce, UniformSimilarities) {
  std::mt19937_64 rng(1);
  for (int m : {3, 5, 16}) {
    MatrixD row = test::random_matrix<double>(1, 7, rng);
    MatrixD batch = row.replicate(m, 1);
    EXPECT_NEAR(infonce_loss(batch, 0.1), std::log(m - 1.0), 1e-6) << m;
  }
  MatrixD b5 = MatrixD::Ones(5, 3);
  EXPECT_NEAR(infonce_loss(b5, 0.1), 1.386294, 1e-6);
}

TEST(InfoNce, HandCase) {
  MatrixD b(3, 2);
  b << 1, 0, 2, 0, 0, 3;  // sim(a,pos) = 1, sim(a,neg) = 0
  const double expect = std::log(1.0 + std::exp(-1.0));
  EXPECT_NEAR(infonce_loss(b, 1.0), expect, 1e-12);
  EXPECT_NEAR(expect, 0.313262, 1e-6);
}

TEST(InfoNce, MatchesNaiveLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixD b = test::random_matrix<double>(8, 5, rng);
    EXPECT_NEAR(infonce_loss(b, 0.1), ref::infonce(b, 0.1), 1e-10);
    ad::Tape<double> t;
    EXPECT_NEAR(infonce_loss<double>(t.constant(b), 0.1).value()(0, 0), ref::infonce(b, 0.1), 1e-10);
  }
  EXPECT_THROW(infonce_loss(MatrixD::Zero(3, 2), 0.1), std::domain_error);
}

TEST(SimilarityLoss, ClosedForms) {
  std::mt19937_64 rng(3);
  MatrixD x = test::random_matrix<double>(6, 4, rng);
  EXPECT_EQ(similarity_loss(x, x), 0.0);
  EXPECT_EQ(similarity_loss(x.topRows(1), test::random_matrix<double>(1, 4, rng)), 0.0);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixD a = test::random_matrix<double>(6, 4, rng), b = test::random_matrix<double>(6, 9, rng);
    EXPECT_NEAR(similarity_loss(a, b), ref::similarity(a, b), 1e-9);
    ad::Tape<double> t;
    EXPECT_NEAR(similarity_loss<double>(t.constant(a), b).value()(0, 0), ref::similarity(a, b), 1e-9);
  }
  ad::Tape<double> t;
  EXPECT_EQ(similarity_loss<double>(t.constant(x), x).value()(0, 0), 0.0);
}

TEST(LossGradients, CentralDifference) {
  std::mt19937_64 rng(4);
  ad::Parameter<double> p{"x", test::random_matrix<double>(6, 5, rng), {}};
  MatrixD base = test::random_matrix<double>(6, 3, rng);
  auto l1 = [&](ad::Tape<double>& t) { return infonce_loss<double>(t.parameter(p), 0.3); };
  auto l2 = [&](ad::Tape<double>& t) { return similarity_loss<double>(t.parameter(p), base); };
  EXPECT_LT(test::max_relative_grad_error({&p}, l1), 1e-6);
  EXPECT_LT(test::max_relative_grad_error({&p}, l2), 1e-6);
}

TEST(AdamW, FirstStepClosedForm) {
  ad::Parameter<double> p{"p", MatrixD::Constant(1, 2, 2.0), {}};
  p.grad = MatrixD(1, 2);
  p.grad << 0.5, -4.0;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  AdamW<double> opt({&p}, cfg);
  opt.step();
  // Bias-corrected moments equal g and g^2 after one step.
  const double e0 = 2.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 2.0);
  const double e1 = 2.0 - 0.1 * (-4.0 / (4.0 + 1e-8) + 0.01 * 2.0);
  EXPECT_NEAR(p.value(0, 0), e0, 1e-12);
  EXPECT_NEAR(p.value(0, 1), e1, 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, GradientClipping) {
  ad::Parameter<double> p{"p", MatrixD::Zero(1, 1), {}};
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.weight_decay = 0.0;
  cfg.grad_clip = 1.0;
  AdamW<double> opt({&p}, cfg);
  p.grad = MatrixD::Constant(1, 1, 100.0);
  opt.step();
  EXPECT_NEAR(p.value(0, 0), -1.0, 1e-6);  // sign survives, Adam normalises magnitude
}

class TrainLoop : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticConfig syn;
    syn.num_pois = 60;
    syn.num_categories = 4;
    syn.num_users = 15;
    syn.checkins_per_user = 40;
    fx = test::make_pipeline_fixture(syn, 12, 16, 0.05, 5);
    SamplerConfig sc;
    sc.m = 8;
    sc.strategies = {Strategy::Geo, Strategy::Func};
    plan = build_batches(fx.ds, fx.ds, fx.attrs, sc);
    ASSERT_FALSE(plan.batches.empty());
  }
  test::PipelineFixture fx;
  BatchPlan plan;
};

TEST_F(TrainLoop, ZeroLearningRateFreezesParameters) {
  auto model = EnhancerModel<float>::init(small_hp(12), 1);
  auto before = model;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  TrainOptions opts;
  opts.max_steps = 7;
  train_enhancer(model, fx.inputs, plan.batches, cfg, opts);
  auto a = model.parameters();
  auto b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST_F(TrainLoop, DeterministicTraceAndOutputs) {
  TempDir dir;
  TrainConfig cfg;
  cfg.seed = 9;
  cfg.epochs = 2;
  auto run = [&](std::optional<std::filesystem::path> out) {
    auto model = EnhancerModel<float>::init(small_hp(12), 3);
    TrainOptions opts;
    opts.max_steps = 5;
    opts.out_dir = out;
    return train_enhancer(model, fx.inputs, plan.batches, cfg, opts).step_losses;
  };
  auto a = run(dir.path());
  auto b = run(std::nullopt);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_last.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_best.bin"));
  auto log = read_file(dir / "train_log.jsonl");
  auto j = nlohmann::json::parse(log.substr(0, log.find('\n')));
  EXPECT_EQ(j["epoch"], 1);
  EXPECT_TRUE(j.contains("l_cont"));
  EXPECT_TRUE(j.contains("l_sim"));
}

TEST_F(TrainLoop, LossFallsOverEpochs) {
  auto model = EnhancerModel<float>::init(small_hp(12), 4);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 0.003;
  auto r = train_enhancer(model, fx.inputs, plan.batches, cfg);
  ASSERT_EQ(r.epochs.size(), 10u);
  EXPECT_LT(r.epochs.back().total, r.epochs.front().total);
}

TEST_F(TrainLoop, NonFiniteInputDumpsBatch) {
  TempDir dir;
  auto in = fx.inputs;
  in.base.setConstant(std::numeric_limits<float>::quiet_NaN());
  auto model = EnhancerModel<float>::init(small_hp(12), 4);
  TrainOptions opts;
  opts.out_dir = dir.path();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_enhancer(model, in, plan.batches, cfg, opts), std::runtime_error);
  EXPECT_TRUE(std::filesystem::exists(dir / "bad_batch.jsonl"));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.gamma, 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.001);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.001);
  EXPECT_EQ(c.epochs, 100);
  c.gamma = 0;
  EXPECT_THROW(c.validate(), UserError);
}
