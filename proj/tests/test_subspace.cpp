#include <gtest/gtest.h>

#include "gdps/serialize.hpp"
#include "gdps/subspace.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<std::string> names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("t" + std::to_string(i));
  return out;
}

gdps::GroupingPlan groups(std::vector<std::vector<std::string>> g) {
  gdps::GroupingPlan p;
  p.groups = std::move(g);
  return p;
}

/// Pair with exactly zero centered cross-covariance: b's centered columns are
/// projected off the span of a's centered columns.
std::pair<MatrixXd, MatrixXd> uncorrelated_pair(oracle::Gen& gen, Eigen::Index m, Eigen::Index p, Eigen::Index q) {
  MatrixXd a = gen.matrix(m, p), b = gen.matrix(m, q);
  a = a.rowwise() - a.colwise().mean();
  b = b.rowwise() - b.colwise().mean();
  const Eigen::HouseholderQR<MatrixXd> qr(a);
  const MatrixXd qa = qr.householderQ() * MatrixXd::Identity(m, p);
  b -= qa * (qa.transpose() * b);
  return {a, b};
}

/// Energy of each task block projected onto the top-k directions, computed by
/// summing squared dot products row by row.
std::vector<double> projection_energy(const std::vector<MatrixXd>& blocks, const MatrixXd& v, int k) {
  std::vector<double> out;
  for (const auto& g : blocks) {
    double e = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (int j = 0; j < k; ++j) {
        double dot = 0;
        for (Eigen::Index c = 0; c < g.cols(); ++c) dot += g(i, c) * v(c, j);
        e += dot * dot;
      }
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(JointSvd, SingleTaskEqualsPlainSvd) {
  oracle::Gen gen(1);
  const MatrixXd g = oracle::f32(gen.matrix(7, 5));
  const auto j = gdps::joint_svd(oracle::bundle_of({"a"}, {g}), "l0");
  const auto s = gdps::svd(g);
  EXPECT_LE((j.svd.sigma - s.sigma).norm(), 1e-12 * s.sigma(0));
}

TEST(JointSvd, StackedRows) {
  const auto j = gdps::joint_svd(oracle::bundle_of({"a", "b"}, {MatrixXd(Eigen::RowVector2d(1, 0)), MatrixXd::Zero(1, 2)}), "l0");
  EXPECT_NEAR(j.svd.sigma(0), 1.0, 1e-15);
  EXPECT_NEAR(j.svd.sigma(1), 0.0, 1e-15);
  EXPECT_EQ(j.tasks, std::vector<std::string>({"a", "b"}));
  EXPECT_EQ(j.row_offsets, std::vector<Eigen::Index>({0, 1, 2}));
}

TEST(JointSvd, StackingOrderDoesNotChangeSpectrum) {
  oracle::Gen gen(2);
  std::vector<MatrixXd> mats = {gen.matrix(4, 6), gen.matrix(3, 6), gen.matrix(5, 6)};
  const auto base = gdps::joint_svd(oracle::bundle_of(names(3), mats), "l0").svd.sigma;
  std::swap(mats[0], mats[2]);
  const auto perm = gdps::joint_svd(oracle::bundle_of(names(3), mats), "l0").svd.sigma;
  EXPECT_LE((base - perm).norm(), 1e-12 * base(0));
  EXPECT_TRUE(throws_gdps([&] { gdps::joint_svd(oracle::bundle_of(names(3), mats), "zz"); }, "subspace.stack", 1));
}

TEST(EnergyProportions, HandSvd) {
  const auto e = gdps::energy_proportions(
      oracle::bundle_of({"a", "b"}, {MatrixXd(Eigen::RowVector2d(2, 0)), MatrixXd(Eigen::RowVector2d(1, 0))}), "l0", 1);
  EXPECT_NEAR(e.energies[0], 4, 1e-14);
  EXPECT_NEAR(e.energies[1], 1, 1e-14);
  EXPECT_NEAR(e.proportions[0], 0.8, 1e-14);
  EXPECT_NEAR(e.proportions[1], 0.2, 1e-14);
}

TEST(EnergyProportions, IdenticalTasksSplitEvenly) {
  oracle::Gen gen(3);
  const MatrixXd g = gen.matrix(5, 4);
  const auto e = gdps::energy_proportions(oracle::bundle_of(names(4), {g, g, g, g}), "l0", 2);
  for (double p : e.proportions) EXPECT_NEAR(p, 0.25, 1e-12);
}

TEST(EnergyProportions, FullRankIsFrobenius) {
  oracle::Gen gen(4);
  const std::vector<MatrixXd> mats = {oracle::f32(gen.matrix(6, 4)), oracle::f32(gen.matrix(5, 4))};
  const auto e = gdps::energy_proportions(oracle::bundle_of(names(2), mats), "l0", 4);
  for (int t = 0; t < 2; ++t) EXPECT_NEAR(e.energies[static_cast<std::size_t>(t)], mats[static_cast<std::size_t>(t)].squaredNorm(), 1e-10);
}

TEST(EnergyProportions, Errors) {
  const auto zero = oracle::bundle_of(names(2), {MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 3)});
  EXPECT_TRUE(throws_gdps([&] { gdps::energy_proportions(zero, "l0", 1); }, "subspace.energy", 2, "zero"));
  const auto ok = oracle::bundle_of(names(2), {MatrixXd::Ones(2, 3), MatrixXd::Ones(2, 3)});
  EXPECT_TRUE(throws_gdps([&] { gdps::energy_proportions(ok, "l0", 0); }, "subspace.energy", 1));
  EXPECT_TRUE(throws_gdps([&] { gdps::energy_proportions(ok, "l0", 4); }, "subspace.energy", 1));
}

TEST(EnergyProperty, ProportionsSumToOneAndMatchProjection) {
  oracle::Gen gen(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = gen.integer(1, 4), d = gen.integer(1, 10);
    std::vector<MatrixXd> mats;
    for (int t = 0; t < n; ++t) mats.push_back(oracle::f32(gen.matrix(gen.integer(1, 6), d)));
    const auto b = oracle::bundle_of(names(n), mats);
    const auto joint = gdps::joint_svd(b, "l0");
    const int k = gen.integer(1, static_cast<int>(joint.svd.sigma.size()));
    const auto e = gdps::energy_proportions(b, "l0", k);
    const auto want = projection_energy(mats, joint.svd.v, k);
    double sum = 0;
    for (int t = 0; t < n; ++t) {
      EXPECT_GE(e.proportions[static_cast<std::size_t>(t)], 0);
      EXPECT_NEAR(e.energies[static_cast<std::size_t>(t)], want[static_cast<std::size_t>(t)], 1e-9);
      sum += e.proportions[static_cast<std::size_t>(t)];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(EnergyProperty, InvariantUnderRowPermutationWithinTask) {
  oracle::Gen gen(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MatrixXd> mats = {gen.matrix(5, 6), gen.matrix(4, 6), gen.matrix(6, 6)};
    const auto base = gdps::energy_proportions(oracle::bundle_of(names(3), mats), "l0", 3);
    for (auto& m : mats) {
      Eigen::PermutationMatrix<Eigen::Dynamic> p(m.rows());
      p.setIdentity();
      std::shuffle(p.indices().data(), p.indices().data() + p.indices().size(), gen.rng);
      m = p * m;
    }
    const auto perm = gdps::energy_proportions(oracle::bundle_of(names(3), mats), "l0", 3);
    for (int t = 0; t < 3; ++t)
      EXPECT_NEAR(perm.proportions[static_cast<std::size_t>(t)], base.proportions[static_cast<std::size_t>(t)], 1e-10);
  }
}

TEST(SpectrumStats, Examples) {
  auto s = gdps::spectrum_stats(Eigen::Vector4d(1, 1, 1, 1), 4);
  EXPECT_EQ(s.top1_share, 0.25);
  EXPECT_EQ(s.gini, 0.0);
  s = gdps::spectrum_stats(Eigen::Vector4d(3, 1, 1, 1), 4);
  EXPECT_NEAR(s.top1_share, 0.75, 1e-15);
  s = gdps::spectrum_stats(Eigen::Vector3d(5, 0, 0), 3);
  EXPECT_EQ(s.top1_share, 1.0);
}

TEST(SpectrumStats, Errors) {
  EXPECT_TRUE(throws_gdps([] { gdps::spectrum_stats(Eigen::Vector3d(0, 0, 0), 2); }, "subspace.spectrum", 2));
  EXPECT_TRUE(throws_gdps([] { gdps::spectrum_stats(Eigen::Vector3d(1, 2, 0), 2); }, "subspace.spectrum", 1));
}

TEST(SpectrumStatsProperty, GiniIsDenselaGiniOfSquares) {
  oracle::Gen gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd sigma = gen.vector(gen.integer(1, 20)).cwiseAbs();
    std::sort(sigma.data(), sigma.data() + sigma.size(), std::greater<>());
    const int k = gen.integer(1, static_cast<int>(sigma.size()));
    const auto s = gdps::spectrum_stats(sigma, k);
    EXPECT_NEAR(s.gini, gdps::gini(sigma.head(k).array().square().matrix()), 1e-15);
    EXPECT_GT(s.top1_share, 0);
    EXPECT_LE(s.top1_share, 1);
  }
}

TEST(RidgeCca, SelfCorrelationIsOne) {
  oracle::Gen gen(8);
  const MatrixXd g = gen.matrix(30, 4);
  EXPECT_NEAR(gdps::ridge_cca(g, g, 0).rho, 1.0, 1e-6);
}

TEST(RidgeCca, DisjointSupportIsZero) {
  MatrixXd a = MatrixXd::Zero(4, 2), b = MatrixXd::Zero(4, 2);
  a.col(0) << 1, -1, 1, -1;
  b.col(1) << 1, 1, -1, -1;
  EXPECT_NEAR(gdps::ridge_cca(a, b, 0.1).rho, 0.0, 1e-12);
  EXPECT_TRUE(throws_gdps([&] { gdps::ridge_cca(a, b, 0); }, "subspace.cca", 2, "positive ridge lambda"));
}

TEST(RidgeCca, LambdaSweepMatchesEigensolverAndDecreases) {
  oracle::Gen gen(9);
  const MatrixXd a = gen.matrix(40, 3), b = 0.5 * a * gen.matrix(3, 3) + gen.matrix(40, 3);
  double prev = 2.0;
  for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
    const auto r = gdps::ridge_cca(a, b, lambda);
    EXPECT_NEAR(r.rho, oracle::cca_rho(a, b, lambda), 1e-10) << lambda;
    EXPECT_LE(r.rho, prev + 1e-12);
    prev = r.rho;
  }
}

TEST(RidgeCca, Errors) {
  EXPECT_TRUE(throws_gdps([] { gdps::ridge_cca(MatrixXd::Ones(3, 2), MatrixXd::Ones(4, 2), 1); }, "subspace.cca", 1,
                          "row-count mismatch"));
  EXPECT_TRUE(throws_gdps([] { gdps::ridge_cca(MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 2), -1); }, "subspace.cca", 1));
}

TEST(RidgeCcaProperty, ContractsOnRandomPairs) {
  oracle::Gen gen(10);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index m = gen.integer(12, 40), p = gen.integer(1, 4), q = gen.integer(1, 4);
    const MatrixXd a = gen.matrix(m, p);
    const MatrixXd b = a * gen.matrix(p, q) * gen.uniform(0, 1) + gen.matrix(m, q);
    const double lambda = gen.integer(0, 1) ? 0.0 : gen.uniform(0, 2);
    const auto ab = gdps::ridge_cca(a, b, lambda), ba = gdps::ridge_cca(b, a, lambda);
    EXPECT_NEAR(ab.rho, ba.rho, 1e-10);
    EXPECT_GE(ab.rho, 0);
    EXPECT_LE(ab.rho, 1);
    EXPECT_NEAR(ab.rho, oracle::cca_rho(a, b, lambda), 1e-9);
    const MatrixXd caa = gdps::covariance(a, a) + lambda * MatrixXd::Identity(p, p);
    const MatrixXd cbb = gdps::covariance(b, b) + lambda * MatrixXd::Identity(q, q);
    EXPECT_NEAR(ab.w_a.dot(caa * ab.w_a), 1.0, 1e-8);
    EXPECT_NEAR(ab.w_b.dot(cbb * ab.w_b), 1.0, 1e-8);
    EXPECT_NEAR(ab.w_a.dot(gdps::covariance(a, b) * ab.w_b), ab.rho, 1e-8);
  }
}

TEST(RidgeCcaProperty, InvariantUnderInvertibleMapsAtZeroLambda) {
  oracle::Gen gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = gen.matrix(30, 3), b = a * gen.matrix(3, 2) * 0.3 + gen.matrix(30, 2);
    const MatrixXd ta = gen.matrix(3, 3) + 3 * MatrixXd::Identity(3, 3), tb = gen.matrix(2, 2) + 3 * MatrixXd::Identity(2, 2);
    const double base = gdps::ridge_cca(a, b, 0).rho;
    EXPECT_NEAR(gdps::ridge_cca(a * ta, b, 0).rho, base, 1e-8);
    EXPECT_NEAR(gdps::ridge_cca(a, b * tb, 0).rho, base, 1e-8);
  }
}

TEST(RidgeCcaProperty, UncorrelatedPairsGiveZero) {
  oracle::Gen gen(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto [a, b] = uncorrelated_pair(gen, 30, 3, 2);
    EXPECT_NEAR(gdps::ridge_cca(a, b, 0).rho, 0.0, 1e-8);
  }
}

TEST(GroupEnergy, Examples) {
  const auto tasks = names(4);
  auto pg = gdps::group_energy(tasks, {0.1, 0.2, 0.3, 0.4}, groups({{"t0"}, {"t1", "t2", "t3"}}));
  EXPECT_NEAR(pg[0], 0.1, 1e-15);
  EXPECT_NEAR(pg[1], 0.9, 1e-15);
  pg = gdps::group_energy(tasks, {0.1, 0.2, 0.3, 0.4}, groups({tasks}));
  EXPECT_NEAR(pg[0], 1.0, 1e-15);
  const std::vector<std::string> langs = {"aeb", "bem", "est", "gle"};
  pg = gdps::group_energy(langs, {0.25, 0.25, 0.25, 0.25}, groups({{"bem"}, {"aeb", "est", "gle"}}));
  EXPECT_EQ(pg, std::vector<double>({0.25, 0.75}));
  EXPECT_TRUE(throws_gdps([&] { gdps::group_energy(tasks, {0.5, 0.5, 0, 0}, groups({{"t0"}, {"t1"}})); },
                          "grouping.validate", 1));
}

TEST(SubspaceReport, ContractsAndJson) {
  oracle::Gen gen(13);
  std::vector<MatrixXd> mats;
  for (int t = 0; t < 3; ++t) mats.push_back(gen.matrix(30, 8));
  gdps::SubspaceOptions opt;
  opt.top_k = 4;
  opt.lambda = 0;
  const auto r = gdps::subspace_report(oracle::bundle_of(names(3), mats), "l0", opt);
  EXPECT_EQ(r.k, 4);
  EXPECT_LE((r.v_k.transpose() * r.v_k - MatrixXd::Identity(4, 4)).norm(), 1e-8);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.cca(i, i), 1.0, 1e-6);
  EXPECT_LE((r.cca - r.cca.transpose()).norm(), 0.0);
  EXPECT_TRUE(r.warnings.empty());
  const auto j = gdps::to_json(r);
  EXPECT_EQ(j["k"], 4);
  EXPECT_EQ(j["proportions"].size(), 3u);
  EXPECT_EQ(gdps::spectrum_csv(r.sigma).rfind("index,sigma,energy_share\n0,", 0), 0u);
}

TEST(SubspaceReport, WarnsOnRaggedTasksAndLargeK) {
  oracle::Gen gen(14);
  gdps::SubspaceOptions opt;
  opt.top_k = 50;
  const auto r = gdps::subspace_report(oracle::bundle_of(names(2), {gen.matrix(6, 4), gen.matrix(9, 4)}), "l0", opt);
  EXPECT_EQ(r.k, 4);
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_GE(gdps::mean_offdiagonal_rho(r), 0.0);
}
