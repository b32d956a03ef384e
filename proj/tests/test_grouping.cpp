#include <gtest/gtest.h>

#include "gdps/grouping.hpp"
#include "gdps/serialize.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using gdps::DistanceMatrix;
using gdps::GroupingMethod;
using gdps::GroupingPlan;
using oracle::reference_distances;

namespace {

/// Two rows whose mean is exactly `v`.
MatrixXd rows_with_mean(const VectorXd& v, double wobble = 0.25) {
  MatrixXd m(2, v.size());
  VectorXd w = VectorXd::Zero(v.size());
  w(v.size() - 1) = wobble;
  m.row(0) = (v + w).transpose();
  m.row(1) = (v - w).transpose();
  return m;
}

/// Bundle whose task mean gradients are the given vectors.
gdps::GradientBundle means_bundle(const std::vector<std::string>& tasks, const std::vector<VectorXd>& means) {
  std::vector<MatrixXd> mats;
  for (const auto& v : means) mats.push_back(rows_with_mean(v));
  return oracle::bundle_of(tasks, mats);
}

/// Distance matrix of planar unit vectors at the given angles.
DistanceMatrix angle_distances(const std::vector<std::string>& tasks, const std::vector<double>& deg) {
  DistanceMatrix d;
  d.tasks = tasks;
  const auto n = static_cast<Eigen::Index>(deg.size());
  d.d = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) d.d(i, j) = 1.0 - std::cos((deg[i] - deg[j]) * M_PI / 180.0);
  return d;
}

/// The four-task fixture: bem about 0.24 from everyone, the rest about 0.15 apart.
/// Only 0.243 (bem-gle) and 0.157 (aeb-est) are published; the rest is filled in.
std::vector<int> labels_of(const GroupingPlan& p, const std::vector<std::string>& tasks) {
  std::vector<int> out;
  for (const auto& t : tasks) out.push_back(p.group_of(t));
  return out;
}

GroupingPlan groups(std::vector<std::vector<std::string>> g) {
  GroupingPlan p;
  p.groups = std::move(g);
  return p;
}

}  // namespace

TEST(SimilarityMatrix, IdenticalMeansGiveAllOnes) {
  const auto b = means_bundle({"a", "b"}, {Eigen::Vector3d(1, 2, 0), Eigen::Vector3d(1, 2, 0)});
  const auto s = gdps::similarity_matrix(b, "l0");
  EXPECT_EQ(s.s, MatrixXd::Ones(2, 2));
}

TEST(SimilarityMatrix, OrthogonalMeans) {
  const auto b = means_bundle({"a", "b"}, {Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0)});
  const auto s = gdps::similarity_matrix(b, "l0");
  EXPECT_EQ(s.s(0, 1), 0.0);
  EXPECT_EQ(s.s(1, 0), 0.0);
}

TEST(SimilarityMatrix, PlantedAnglesAreRecovered) {
  // Group centers 60 degrees apart; members tilted +-2.5 degrees into private axes.
  const double h = 2.5 * M_PI / 180.0;
  auto member = [&](double center_deg, int axis, double sign) {
    VectorXd v = VectorXd::Zero(6);
    v.head(2) = std::cos(h) * oracle::planar(center_deg, 2);
    v(axis) = sign * std::sin(h);
    return v;
  };
  const auto b = means_bundle({"a1", "a2", "b1", "b2"},
                              {member(0, 2, 1), member(0, 2, -1), member(60, 3, 1), member(60, 3, -1)});
  const auto s = gdps::similarity_matrix(b, "l0");
  const double within = std::cos(5 * M_PI / 180.0), cross = std::cos(60 * M_PI / 180.0);
  EXPECT_NEAR(s.s(0, 1), within, 0.02);
  EXPECT_NEAR(s.s(2, 3), within, 0.02);
  for (int i : {0, 1})
    for (int j : {2, 3}) EXPECT_NEAR(s.s(i, j), cross, 0.02);
}

TEST(SimilarityMatrix, ZeroMeanIsFlagged) {
  const auto b = oracle::bundle_of({"a", "b"}, {rows_with_mean(VectorXd::Zero(3)), rows_with_mean(Eigen::Vector3d(1, 0, 0))});
  const auto s = gdps::similarity_matrix(b, "l0");
  EXPECT_EQ(s.degenerate, 1);
  EXPECT_EQ(s.s(0, 0), 1.0);
  EXPECT_TRUE(throws_gdps([&] { gdps::similarity_matrix(b, "nope"); }, "grouping.similarity", 1));
}

TEST(SimilarityProperty, InvariantUnderPositiveRescaling) {
  oracle::Gen gen(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MatrixXd> mats;
    for (int t = 0; t < 4; ++t) mats.push_back(gen.matrix(5, 7));
    const auto base = gdps::similarity_matrix(oracle::bundle_of({"a", "b", "c", "d"}, mats), "l0");
    auto scaled = mats;
    scaled[static_cast<std::size_t>(gen.integer(0, 3))] *= std::ldexp(1.0, gen.integer(-6, 6));
    scaled[static_cast<std::size_t>(gen.integer(0, 3))] *= gen.uniform(0.1, 10);
    const auto s = gdps::similarity_matrix(oracle::bundle_of({"a", "b", "c", "d"}, scaled), "l0");
    EXPECT_LE((s.s - base.s).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((s.s - s.s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(s.s(i, i), 1.0);
    EXPECT_LE(s.s.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(ToDistance, Examples) {
  gdps::SimilarityMatrix s;
  s.tasks = {"bem", "gle"};
  s.s.resize(2, 2);
  s.s << 1, 0.757, 0.757, 1;
  auto d = gdps::to_distance(s);
  EXPECT_EQ(d.d(0, 0), 0.0);
  EXPECT_NEAR(d.d(0, 1), 0.243, 1e-12);
  s.s << 1, 0.843, 0.843, 1;
  d = gdps::to_distance(s);
  EXPECT_NEAR(d.d(1, 0), 0.157, 1e-12);
}

TEST(Kmeans, SeparatedOneDimensionalClusters) {
  MatrixXd pts(4, 1);
  pts << 0, 0.1, 10, 10.1;
  const auto st = gdps::kmeans(pts, 2, 2343);
  EXPECT_EQ(st.assignments[0], st.assignments[1]);
  EXPECT_EQ(st.assignments[2], st.assignments[3]);
  EXPECT_NE(st.assignments[0], st.assignments[2]);
  EXPECT_NEAR(st.inertia, 0.01, 1e-12);
}

TEST(Kmeans, KEqualsNGivesZeroInertia) {
  oracle::Gen gen(5);
  const MatrixXd pts = gen.matrix(5, 3);
  const auto st = gdps::kmeans(pts, 5, 1);
  EXPECT_NEAR(st.inertia, 0.0, 1e-24);
  std::set<int> distinct(st.assignments.begin(), st.assignments.end());
  EXPECT_EQ(distinct.size(), 5u);
}

TEST(Kmeans, InvalidK) {
  const MatrixXd pts = MatrixXd::Ones(3, 2);
  EXPECT_TRUE(throws_gdps([&] { gdps::kmeans(pts, 0, 1); }, "grouping.kmeans", 1));
  EXPECT_TRUE(throws_gdps([&] { gdps::kmeans(pts, 4, 1); }, "grouping.kmeans", 1));
}

TEST(Kmeans, PlantedProfilesMatchExhaustiveOptimumOverSeeds) {
  const auto dist = angle_distances({"a", "b", "c", "d", "e", "f"}, {0, 4, 9, 70, 75, 82});
  double best_inertia = 0;
  const auto want = oracle::best_two_partition(dist.d, &best_inertia);
  std::vector<int> first;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto st = gdps::kmeans(dist.d, 2, seed);
    EXPECT_TRUE(oracle::same_partition(st.assignments, want)) << "seed " << seed;
    EXPECT_NEAR(st.inertia, best_inertia, 1e-12);
    if (first.empty()) first = st.assignments;
    EXPECT_TRUE(oracle::same_partition(st.assignments, first)) << "seed " << seed;
  }
}

TEST(KmeansProperty, ConvergedStateIsConsistent) {
  oracle::Gen gen(31);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = gen.integer(2, 12), k = gen.integer(1, n);
    const MatrixXd pts = gen.matrix(n, gen.integer(1, 4));
    const auto st = gdps::kmeans(pts, k, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 1; i < st.inertia_history.size(); ++i)
      EXPECT_LE(st.inertia_history[i], st.inertia_history[i - 1] + 1e-12);
    double inertia = 0;
    for (int i = 0; i < n; ++i) {
      const int a = st.assignments[static_cast<std::size_t>(i)];
      const double own = (pts.row(i) - st.centroids.row(a)).squaredNorm();
      inertia += own;
      for (int c = 0; c < k; ++c) EXPECT_LE(own, (pts.row(i) - st.centroids.row(c)).squaredNorm() + 1e-12);
    }
    EXPECT_NEAR(inertia, st.inertia, 1e-9);
    EXPECT_EQ(gdps::kmeans(pts, k, static_cast<std::uint64_t>(trial)).assignments, st.assignments);
  }
}

TEST(SingleLinkage, ReferenceDistanceFixture) {
  const auto d = reference_distances();
  const auto plan = gdps::single_linkage(d, 2);
  ASSERT_EQ(plan.k(), 2);
  EXPECT_EQ(plan.groups[0], std::vector<std::string>({"bem"}));
  EXPECT_EQ(plan.groups[1], std::vector<std::string>({"aeb", "est", "gle"}));
  EXPECT_TRUE(oracle::same_partition(labels_of(plan, d.tasks), oracle::single_linkage_labels(d.d, 2)));
}

TEST(SingleLinkage, KOneIsOneGroup) {
  const auto plan = gdps::single_linkage(reference_distances(), 1);
  ASSERT_EQ(plan.k(), 1);
  EXPECT_EQ(plan.groups[0].size(), 4u);
  EXPECT_TRUE(throws_gdps([] { gdps::single_linkage(reference_distances(), 0); }, "grouping.linkage", 1));
  EXPECT_TRUE(throws_gdps([] { gdps::single_linkage(reference_distances(), 5); }, "grouping.linkage", 1));
}

TEST(SingleLinkage, RandomMetricAgreesWithKruskal) {
  oracle::Gen gen(66);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixXd pts = gen.matrix(6, 2);
    DistanceMatrix d;
    d.tasks = {"t0", "t1", "t2", "t3", "t4", "t5"};
    d.d.resize(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) d.d(i, j) = (pts.row(i) - pts.row(j)).norm();
    for (int k = 1; k <= 6; ++k)
      EXPECT_TRUE(oracle::same_partition(labels_of(gdps::single_linkage(d, k), d.tasks),
                                         oracle::single_linkage_labels(d.d, k)));
  }
}

TEST(SingleLinkage, TiesBreakLexicographically) {
  DistanceMatrix d;
  d.tasks = {"c", "a", "b"};
  d.d = MatrixXd::Ones(3, 3) - MatrixXd::Identity(3, 3);
  const auto merges = gdps::single_linkage_merges(d);
  ASSERT_EQ(merges.size(), 2u);
  EXPECT_EQ(merges[0].left, std::vector<std::string>({"a"}));
  EXPECT_EQ(merges[0].right, std::vector<std::string>({"b"}));
}

TEST(SingleLinkageProperty, PermutationInvariant) {
  oracle::Gen gen(67);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = gen.integer(2, 8);
    const MatrixXd pts = gen.matrix(n, 3);
    DistanceMatrix d;
    for (int i = 0; i < n; ++i) d.tasks.push_back("t" + std::to_string(i));
    d.d.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d.d(i, j) = (pts.row(i) - pts.row(j)).norm();
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen.rng);
    DistanceMatrix p;
    p.d.resize(n, n);
    for (int i = 0; i < n; ++i) {
      p.tasks.push_back(d.tasks[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      for (int j = 0; j < n; ++j) p.d(i, j) = d.d(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const int k = gen.integer(1, n);
    EXPECT_TRUE(gdps::single_linkage(d, k).same_partition(gdps::single_linkage(p, k)));
  }
}

TEST(ConsensusGroup, PlantedFixtureAgrees) {
  const auto b = means_bundle({"a", "b", "c", "d"},
                              {oracle::planar(0, 3), oracle::planar(70, 3), oracle::planar(73, 3), oracle::planar(76, 3)});
  const auto r = gdps::consensus_group(b, "l0", 2, 2343);
  EXPECT_EQ(r.plan.method, GroupingMethod::consensus);
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_TRUE(r.plan.same_partition(groups({{"a"}, {"b", "c", "d"}})));
}

TEST(ConsensusGroup, ChainFallsBackToHierarchical) {
  const std::vector<std::string> tasks = {"c0", "c1", "c2", "c3", "c4", "c5"};
  const auto r = gdps::consensus_from_distance(angle_distances(tasks, {0, 10, 21, 33, 46, 60}), 2, 2343);
  EXPECT_EQ(r.plan.method, GroupingMethod::hierarchical);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("disagree"), std::string::npos);
  EXPECT_TRUE(r.plan.same_partition(r.hierarchical_plan));
  EXPECT_FALSE(r.kmeans_plan.same_partition(r.hierarchical_plan));
}

TEST(ConsensusGroup, KOneIsTrivialConsensus) {
  const auto r = gdps::consensus_from_distance(reference_distances(), 1, 2343);
  EXPECT_EQ(r.plan.method, GroupingMethod::consensus);
  EXPECT_EQ(r.plan.k(), 1);
}

TEST(GroupingProperty, PlansArePartitions) {
  oracle::Gen gen(70);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(2, 9);
    std::vector<std::string> tasks;
    std::vector<double> angles;
    for (int i = 0; i < n; ++i) {
      tasks.push_back("t" + std::to_string(i));
      angles.push_back(gen.uniform(0, 90));
    }
    const int k = gen.integer(1, n);
    const auto r = gdps::consensus_from_distance(angle_distances(tasks, angles), k, static_cast<std::uint64_t>(trial));
    for (const auto* p : {&r.plan, &r.kmeans_plan, &r.hierarchical_plan}) {
      EXPECT_NO_THROW(gdps::validate_partition(*p, tasks));
      EXPECT_EQ(p->k(), k);
    }
  }
}

TEST(GroupingProperty, WellSeparatedFixturesAreRecovered) {
  oracle::Gen gen(71);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int na = gen.integer(1, 4), nb = gen.integer(1, 4);
    const double ca = gen.uniform(0, 10), cb = ca + gen.uniform(40, 80);
    std::vector<std::string> tasks;
    std::vector<double> angles;
    std::vector<int> planted;
    for (int i = 0; i < na + nb; ++i) {
      tasks.push_back("t" + std::to_string(i));
      angles.push_back((i < na ? ca : cb) + gen.uniform(-4, 4));
      planted.push_back(i < na ? 0 : 1);
    }
    const auto dist = angle_distances(tasks, angles);
    double within = 0, cross = 1e9;
    for (int i = 0; i < na + nb; ++i)
      for (int j = i + 1; j < na + nb; ++j) {
        if (planted[static_cast<std::size_t>(i)] == planted[static_cast<std::size_t>(j)])
          within = std::max(within, dist.d(i, j));
        else
          cross = std::min(cross, dist.d(i, j));
      }
    ASSERT_LT(within / cross, 1.0);
    const auto r = gdps::consensus_from_distance(dist, 2, static_cast<std::uint64_t>(trial));
    EXPECT_TRUE(oracle::same_partition(labels_of(r.hierarchical_plan, tasks), planted)) << "trial " << trial;
    EXPECT_TRUE(oracle::same_partition(labels_of(r.kmeans_plan, tasks), planted)) << "trial " << trial;
    ++checked;
  }
  EXPECT_EQ(checked, 60);
}

TEST(GroupingPlanJson, SerializesAndParses) {
  GroupingPlan p = groups({{"bem"}, {"aeb", "est", "gle"}});
  p.method = GroupingMethod::consensus;
  const auto j = gdps::to_json(p);
  EXPECT_EQ(j.dump(), R"({"method":"consensus","k":2,"groups":[["bem"],["aeb","est","gle"]]})");
  EXPECT_TRUE(gdps::grouping_from_json(nlohmann::json::parse(j.dump())).same_partition(p));
  EXPECT_TRUE(throws_gdps([] { gdps::grouping_from_json(nlohmann::json::parse(R"({"method":"x","groups":[]})")); },
                          "grouping.parse", 1));
}

TEST(ValidatePartition, RejectsOverlapsGapsAndStrangers) {
  const std::vector<std::string> tasks = {"a", "b", "c"};
  EXPECT_NO_THROW(gdps::validate_partition(groups({{"a"}, {"b", "c"}}), tasks));
  EXPECT_TRUE(throws_gdps([&] { gdps::validate_partition(groups({{"a"}, {"b"}}), tasks); }, "grouping.validate", 1));
  EXPECT_TRUE(throws_gdps([&] { gdps::validate_partition(groups({{"a", "b"}, {"b", "c"}}), tasks); }, "grouping.validate", 1));
  EXPECT_TRUE(throws_gdps([&] { gdps::validate_partition(groups({{"a", "b", "c", "d"}}), tasks); }, "grouping.validate", 1));
  EXPECT_TRUE(throws_gdps([&] { gdps::validate_partition(groups({{"a", "b", "c"}, {}}), tasks); }, "grouping.validate", 1));
}
