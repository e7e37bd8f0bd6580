#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "vflkit/assessment.hpp"

using namespace vflkit;

namespace {

Matrix gaussian(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

VFLSystem heterolr(const RowVector& ta, const RowVector& tb, double bias = 0) {
  VFLSystem s;
  std::vector<int> ca, cb;
  for (Eigen::Index j = 0; j < ta.size(); ++j) ca.push_back(static_cast<int>(j));
  for (Eigen::Index j = 0; j < tb.size(); ++j) cb.push_back(static_cast<int>(ta.size() + j));
  s.participants.push_back({0, ca, LocalModel({Layer::linear(ta, Vector::Constant(1, bias))})});
  s.participants.push_back({1, cb, LocalModel({Layer::linear(tb, Vector::Zero(1))})});
  s.coordinator.kind = ProtocolKind::heterolr;
  s.coordinator.top = LocalModel({Layer::activation(LayerKind::sigmoid, 1)});
  s.num_classes = 2;
  s.validate();
  return s;
}

VFLSystem smooth_splitnn(int da, int db, int classes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  VFLSystem s;
  s.coordinator.kind = ProtocolKind::splitnn;
  std::vector<int> ca, cb;
  for (int j = 0; j < da; ++j) ca.push_back(j);
  for (int j = 0; j < db; ++j) cb.push_back(da + j);
  s.participants.push_back({0, ca, LocalModel({Layer::linear(gaussian(4, da, rng), gaussian(4, 1, rng)), Layer::activation(LayerKind::sigmoid, 4)})});
  s.participants.push_back({1, cb, LocalModel({Layer::linear(gaussian(4, db, rng), gaussian(4, 1, rng)), Layer::activation(LayerKind::sigmoid, 4)})});
  s.coordinator.top = LocalModel({Layer::linear(gaussian(classes, 8, rng, 3.0), gaussian(classes, 1, rng)),
                                  Layer::activation(LayerKind::softmax, classes)});
  s.num_classes = classes;
  s.validate();
  return s;
}

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

std::string temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("vflkit-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST(Parallel, CoversEveryIndexAndPropagatesErrors) {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](int i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](int i) { if (i == 7) throw std::runtime_error("boom"); }), std::runtime_error);
}

TEST(Dominating, ConstantSystemIsFullyDominated) {
  std::mt19937_64 rng(1);
  VFLSystem s = heterolr(row({0.0}), row({0.0, 0.0}), 3.0);
  Views test = {gaussian(30, 1, rng), gaussian(30, 2, rng)};
  EXPECT_DOUBLE_EQ(dominating_rate(s, test, 0.95), 1.0);
  EXPECT_DOUBLE_EQ(dominating_rate(s, test, 0.99, 1), 1.0);
}

TEST(Dominating, EnumeratedToy) {
  // Label 1 iff x_a + x_b > 0; B rows {-2, -1, 1, 2}. At 95% only |x_a| > 2 dominates;
  // at 75% x_a = -1.5 joins (3 of 4) while x_a = 0.5 splits 2/2.
  VFLSystem s = heterolr(row({1.0}), row({1.0}));
  Views test = {make_matrix({{-3.0}, {-1.5}, {0.5}, {2.5}}), make_matrix({{-2.0}, {-1.0}, {1.0}, {2.0}})};
  EXPECT_DOUBLE_EQ(dominating_rate(s, test, 0.95), 0.5);
  EXPECT_DOUBLE_EQ(dominating_rate(s, test, 0.75), 0.75);
  FixedPeers peers(s, test, 0);
  EXPECT_DOUBLE_EQ(dominating_rate(peers, test[0], 0.95, 3), 0.5);
}

TEST(Success, ZeroRoundsEqualsDominatingRate) {
  VFLSystem s = smooth_splitnn(3, 3, 3, 2);
  std::mt19937_64 rng(3);
  Views test = {gaussian(40, 3, rng), gaussian(40, 3, rng, 0.3)};
  Views tiny = select_rows(test, sample_indices(40, 10, 4));
  AdiSynthesizer synth(s, tiny, test);
  SynthesisConfig cfg;
  cfg.max_rounds = 0;
  for (double t : {0.5, 0.8, 0.95}) {
    cfg.threshold = t;
    EXPECT_DOUBLE_EQ(success_rate(synth, test[0], cfg).rate, dominating_rate(s, test, t)) << t;
  }
}

TEST(Success, WorkersDoNotChangeResults) {
  VFLSystem s = smooth_splitnn(3, 3, 3, 5);
  std::mt19937_64 rng(6);
  Views test = {gaussian(16, 3, rng), gaussian(40, 3, rng)};
  test[0] = gaussian(40, 3, rng);
  Views tiny = select_rows(test, sample_indices(40, 10, 7));
  AdiSynthesizer synth(s, tiny, test);
  SynthesisConfig cfg;
  cfg.max_rounds = 20;
  cfg.mode = GradientMode::blackbox;
  Matrix rows = test[0].topRows(8);
  SuccessReport one = success_rate(synth, rows, cfg, TargetPolicy::majority, 1);
  SuccessReport four = success_rate(synth, rows, cfg, TargetPolicy::majority, 4);
  EXPECT_EQ(one.rate, four.rate);
  for (size_t i = 0; i < one.candidates.size(); ++i) EXPECT_EQ(one.candidates[i].input(), four.candidates[i].input());
}

TEST(Rewards, ProbabilityVectorAndHandValue) {
  // Gradient x input for HeteroLR: |sigma'(z)| * |theta_p . x_p| per row.
  RowVector ta = row({1.0, -2.0}), tb = row({0.5});
  VFLSystem s = heterolr(ta, tb);
  Views in = {make_matrix({{1.0, 0.5}, {-1.0, 2.0}}), make_matrix({{2.0}, {-4.0}})};
  RewardShares r = reward_shares(s, in);
  double wa = 0, wb = 0;
  for (int i = 0; i < 2; ++i) {
    double z = ta.dot(in[0].row(i)) + tb.dot(in[1].row(i));
    double d = 1 / (1 + std::exp(-z));
    d *= 1 - d;
    for (int j = 0; j < 2; ++j) wa += std::abs(d * ta[j] * in[0](i, j));
    wb += std::abs(d * tb[0] * in[1](i, 0));
  }
  ASSERT_EQ(r.shares.size(), 2u);
  EXPECT_NEAR(r.shares[0], wa / (wa + wb), 1e-12);
  EXPECT_NEAR(r.shares[0] + r.shares[1], 1.0, 1e-9);
  EXPECT_FALSE(r.degenerate);
  std::mt19937_64 rng(8);
  VFLSystem n = smooth_splitnn(3, 4, 3, 9);
  RewardShares q = reward_shares(n, {gaussian(20, 3, rng), gaussian(20, 4, rng)}, AttributionMode::gradient);
  EXPECT_NEAR(q.shares[0] + q.shares[1], 1.0, 1e-9);
  for (double v : q.shares) EXPECT_GE(v, 0.0);
}

TEST(Rewards, ZeroWeightBenignAndDegenerate) {
  VFLSystem s = heterolr(row({1.0, 1.0}), row({0.0}));
  RewardShares r = reward_shares(s, {make_matrix({{1.0, 2.0}}), make_matrix({{3.0}})});
  EXPECT_DOUBLE_EQ(r.shares[0], 1.0);
  EXPECT_DOUBLE_EQ(r.shares[1], 0.0);
  VFLSystem z = heterolr(row({0.0}), row({0.0}));
  RewardShares u = reward_shares(z, {make_matrix({{1.0}}), make_matrix({{1.0}})});
  EXPECT_TRUE(u.degenerate);
  EXPECT_DOUBLE_EQ(u.shares[0], 0.5);
}

TEST(Spectrum, GramOracleAndFrobenius) {
  std::mt19937_64 rng(10);
  Matrix n = gaussian(6, 9, rng);
  Vector sv = singular_spectrum(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(n * n.transpose()));
  Vector ev = es.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
  ASSERT_EQ(sv.size(), 6);
  EXPECT_LT((sv - ev).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index i = 1; i < sv.size(); ++i) EXPECT_LE(sv[i], sv[i - 1]);
  EXPECT_NEAR(sv.squaredNorm(), n.squaredNorm(), 1e-8);
}

TEST(Spectrum, RankOneAndOrthonormal) {
  Vector u = (Vector(3) << 1, 2, 2).finished() / 3.0;
  Matrix r1 = u * RowVector::Ones(5);
  Vector sv = singular_spectrum(r1);
  EXPECT_NEAR(sv[0], std::sqrt(5.0), 1e-12);
  for (Eigen::Index i = 1; i < sv.size(); ++i) EXPECT_NEAR(sv[i], 0.0, 1e-12);
  Vector ones = singular_spectrum(Matrix::Identity(4, 4));
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(ones[i], 1.0, 1e-14);
}

TEST(Spectrum, RandomUnitColumns) {
  Matrix m = random_unit_columns(7, 50, 11);
  ASSERT_EQ(m.rows(), 7);
  ASSERT_EQ(m.cols(), 50);
  for (Eigen::Index j = 0; j < 50; ++j) EXPECT_NEAR(m.col(j).norm(), 1.0, 1e-12);
  EXPECT_EQ(m, random_unit_columns(7, 50, 11));
  EXPECT_NE(m, random_unit_columns(7, 50, 12));
}

TEST(PerturbationMatrixTest, IdenticalRowsGiveRankOne) {
  VFLSystem s = smooth_splitnn(3, 3, 3, 12);
  Matrix b = RowVector(row({0.3, -0.2, 0.5})).replicate(5, 1);
  SynthesisConfig cfg;
  cfg.max_rounds = 10;
  cfg.target = 1;
  PerturbationMatrix pm = build_perturbation_matrix(s, {Matrix::Zero(5, 3), b}, Vector::Zero(3), cfg);
  ASSERT_EQ(pm.columns.cols() + static_cast<Eigen::Index>(pm.dropped.size()), 5);
  for (Eigen::Index j = 0; j < pm.columns.cols(); ++j) {
    EXPECT_NEAR(pm.columns.col(j).norm(), 1.0, 1e-12);
    EXPECT_LT((pm.columns.col(j) - pm.columns.col(0)).norm(), 1e-12);
  }
  Vector sv = singular_spectrum(pm.columns);
  for (Eigen::Index i = 1; i < sv.size(); ++i) EXPECT_LT(sv[i], 1e-10 * sv[0]);
}

TEST(PerturbationMatrixTest, ReconstructionDominatesAlignedToy) {
  // Every column pushes x_a down, so the top direction alone reproduces the attack.
  VFLSystem s = heterolr(row({1.0, 1.0}), row({1.0}));
  std::mt19937_64 rng(13);
  Matrix b = gaussian(12, 1, rng);
  SynthesisConfig cfg;
  cfg.target = 0;
  cfg.threshold = 0.99;
  PerturbationMatrix pm = build_perturbation_matrix(s, {Matrix::Zero(12, 2), b}, Vector::Zero(2), cfg, 0, 2);
  FixedPeers peers(s, {Matrix::Zero(12, 2), b}, 0);
  EXPECT_DOUBLE_EQ(reconstruct_and_rate(pm, 1, Vector::Zero(2), peers, 0), 1.0);
  EXPECT_THROW(reconstruct_and_rate(pm, 0, Vector::Zero(2), peers, 0), std::invalid_argument);
}

TEST(Report, CsvJsonAndFiles) {
  ExperimentReport rep("unit", nlohmann::json{{"a", 1}}, 7);
  rep.set("r1", "x", 0.5);
  rep.set("r2", "y", 2.0);
  rep.note("hello");
  EXPECT_TRUE(rep.has("r1", "x"));
  EXPECT_FALSE(rep.has("r1", "y"));
  EXPECT_DOUBLE_EQ(rep.get("r2", "y"), 2.0);
  EXPECT_THROW(rep.get("r3", "x"), std::out_of_range);
  std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,x,y");
  EXPECT_NE(csv.find("r1,0.5,\n"), std::string::npos);
  nlohmann::json j = rep.to_json();
  EXPECT_EQ(j["experiment"], "unit");
  EXPECT_EQ(j["metrics"]["r1"]["x"], 0.5);
  EXPECT_EQ(j["config"]["a"], 1);
  EXPECT_EQ(rep.artifact_hash().size(), 16u);
  ExperimentReport same("unit", nlohmann::json{{"a", 1}}, 7);
  same.set("r1", "x", 0.5);
  same.set("r2", "y", 2.0);
  same.note("hello");
  EXPECT_EQ(same.artifact_hash(), rep.artifact_hash());
  same.set("r1", "x", 0.25);
  EXPECT_NE(same.artifact_hash(), rep.artifact_hash());
  std::string dir = temp_dir("report");
  std::string stem = rep.write(dir);
  EXPECT_TRUE(std::filesystem::exists(stem + ".json"));
  EXPECT_TRUE(std::filesystem::exists(stem + ".csv"));
  EXPECT_EQ(std::filesystem::path(stem).filename().string().rfind("unit-7-", 0), 0u);
  std::filesystem::remove_all(dir);
}

TEST(Sweep, ReplayIsBitExact) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0, 1);
  auto images = [&](int n) {
    Dataset d;
    d.features = Matrix(n, 784);
    for (int i = 0; i < n; ++i) {
      int c = i % 2;
      for (int p = 0; p < 784; ++p) d.features(i, p) = 0.2 * u(rng) + ((p % 28 < 14) == (c == 0) ? 0.6 : 0.0);
      d.labels.push_back(c);
    }
    return d;
  };
  SweepSetup setup;
  setup.train = images(120);
  setup.test = images(40);
  setup.train_cfg.epochs = 1;
  setup.synth.max_rounds = 4;
  setup.synth_samples = 4;
  setup.tiny_size = 5;
  std::string dir = temp_dir("sweep");
  setup.model_cache_dir = dir;
  ExperimentReport a = partition_ratio_sweep(setup, {0.4, 2.11});
  ExperimentReport b = partition_ratio_sweep(setup, {0.4, 2.11});
  EXPECT_EQ(a.rows(), (std::vector<std::string>{"0.40", "2.11"}));
  for (const auto& r : a.rows())
    for (const auto& c : a.cols()) EXPECT_EQ(a.get(r, c), b.get(r, c)) << r << " " << c;
  ExperimentReport p = participants_sweep(setup, {2, 3});
  EXPECT_TRUE(p.has("m=3", "success_bounded"));
  std::filesystem::remove_all(dir);
}
